"""End-to-end broadcast simulation and privacy/utility metrics.

Every experiment folds the obfuscation engine over a 1 Hz trajectory,
optionally building and encrypting the full broadcast frame per fix, and
reduces to a :class:`MetricsReport`. Runs are seeded per (config seed,
run index, stream role), so identical configs reproduce identical metric
output; wall-clock generation times are the one intentionally
non-deterministic part of a report.
"""

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .codec import RidMessage, decode, encode, message_size
from .crypto import CurveProfile, PackedLocation, encrypt_location, get_curve, kgen
from .geo import enu_from_geodetic
from .mechanism import GridSpec, MechanismState, calibrate_epsilon, step
from .services import (
    ChargingStation,
    NfzSpec,
    classify_disclosure,
    in_scope,
    nearest_station,
    observer_check_nfz,
    select_daas_uav,
    ttp_resolve_invasion,
)
from .trajectory import AreaSpec, Trajectory, load_trajectory, random_waypoint_trajectory, synth_trajectory

GEN_TIME_BUDGET_S = 1.0
_TIMESTAMP_BASE = 1_700_000_000

CONFUSION_KEYS = ("TP", "FP", "TN", "FN")


@dataclass
class SimConfig:
    """Knobs for one experiment; unused sections are ignored by each kind."""

    epsilon: float | None = None        # per-axis budget; wins over target_avg_m
    target_avg_m: float | None = None   # desired mean horizontal offset, meters
    delta: float = 0.01
    grid: GridSpec = field(default_factory=GridSpec)
    curve: str = "NIST256"
    rng_seed: int = 0
    runs: int = 1
    area: AreaSpec = field(default_factory=AreaSpec)
    traj_path: str | None = None
    synth_kind: str = "line"
    speed_mps: float = 5.0
    duration_s: float | None = None
    obfuscate: bool = True
    uid: int = 1
    nfz: NfzSpec | None = None
    scope_rule: str = "either"
    n_stations: int = 8
    station_grid_m: float | None = None
    station_alt_m: float = 0.0
    n_uavs: int = 6
    user: tuple[float, float, float] | None = None
    transform_mode: str = "exact"
    isotropic_samples: int = 400
    hist_bins: int = 50

    def resolve_epsilon(self) -> float:
        if self.epsilon is not None:
            if self.epsilon <= 0:
                raise ValueError("epsilon must be positive")
            return float(self.epsilon)
        if self.target_avg_m is None:
            raise ValueError("config needs epsilon or target_avg_m")
        return calibrate_epsilon(self.grid, self.target_avg_m)

    def curve_profile(self) -> CurveProfile:
        return get_curve(self.curve)


@dataclass
class MetricsReport:
    """Aggregated privacy/utility results of one experiment."""

    kind: str
    runs: int
    n_disclosures: int
    epsilon_h: float | None
    avg_distance_h: float
    avg_distance_3d: float
    confusion: dict = field(default_factory=lambda: {k: 0 for k in CONFUSION_KEYS})
    n_scoped: int = 0
    extra_distance_mean: float | None = None
    extra_distance_hist_edges: list = field(default_factory=list)
    extra_distance_hist_counts: list = field(default_factory=list)
    msg_size_bytes: int = 0
    gen_time_mean_s: float | None = None
    gen_time_max_s: float | None = None
    gen_time_over_budget: bool = False

    def as_dict(self) -> dict:
        return asdict(self)

    def deterministic_dict(self) -> dict:
        """Report content minus the wall-clock timing fields."""
        d = self.as_dict()
        d.pop("gen_time_mean_s")
        d.pop("gen_time_max_s")
        d.pop("gen_time_over_budget")
        return d


def emit_report(report: MetricsReport, fmt: str = "json") -> bytes:
    """Serialise a report with stable field ordering."""
    d = report.as_dict()
    if fmt == "json":
        return (json.dumps(d, indent=2) + "\n").encode("ascii")
    if fmt == "csv":
        lines = ["metric,value"]
        for key, value in d.items():
            if isinstance(value, dict):
                for k2, v2 in value.items():
                    lines.append(f"{key}.{k2},{v2}")
            elif isinstance(value, list):
                lines.append(f"{key},{'|'.join(repr(v) for v in value)}")
            else:
                lines.append(f"{key},{value}")
        return ("\n".join(lines) + "\n").encode("ascii")
    raise ValueError(f"unknown report format {fmt!r}")


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _derived_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1)[0])


def base_trajectory(cfg: SimConfig, run: int = 0) -> Trajectory:
    """Configured trajectory: a CSV if given, else a synthetic track."""
    if cfg.traj_path:
        return load_trajectory(cfg.traj_path)
    return synth_trajectory(
        cfg.synth_kind, cfg.area, cfg.speed_mps, _derived_seed(cfg.rng_seed, run, 9), cfg.duration_s
    )


@dataclass
class _StreamLog:
    """Raw per-fix record of one obfuscated broadcast run."""

    t: np.ndarray
    true_geo: np.ndarray       # (n, 3) lat, lon, alt
    true_enu: np.ndarray
    released_geo: np.ndarray
    released_enu: np.ndarray
    surrogate: np.ndarray
    frames: list | None
    gen_time: np.ndarray | None
    msg_size: int
    origin: tuple[float, float]


def _obfuscate_stream(
    traj: Trajectory,
    cfg: SimConfig,
    epsilon: float,
    mech_rng: np.random.Generator,
    build_messages: bool,
    recipient_pk: bytes | None = None,
) -> _StreamLog:
    """Run the engine over a trajectory, optionally assembling full frames."""
    curve = cfg.curve_profile()
    origin = (float(traj.lat[0]), float(traj.lon[0]))
    true_geo = np.stack([traj.lat, traj.lon, traj.alt], axis=1)
    true_enu = enu_from_geodetic(traj.lat, traj.lon, traj.alt, origin)
    vel = traj.velocities_enu(origin)
    cs = (float(traj.lat[0]), float(traj.lon[0]), 0.0)

    state = MechanismState.initial(
        epsilon=epsilon,
        delta=cfg.delta,
        grid=cfg.grid,
        origin=origin,
        transform_mode=cfg.transform_mode,
        isotropic_samples=cfg.isotropic_samples,
    )
    n = len(traj)
    released_geo = np.empty((n, 3))
    released_enu = np.empty((n, 3))
    surrogate = np.zeros(n, dtype=bool)
    frames = [] if build_messages else None
    gen_time = np.empty(n) if build_messages else None

    for i in range(n):
        start = time.perf_counter()
        if cfg.obfuscate:
            result, state = step(state, true_geo[i], mech_rng)
            released_geo[i] = result.released
            released_enu[i] = result.released_enu
            surrogate[i] = result.surrogate_used
        else:
            released_geo[i] = true_geo[i]
            released_enu[i] = true_enu[i]
        if build_messages:
            packed = PackedLocation.from_geodetic(*true_geo[i])
            report = encrypt_location(packed, recipient_pk, curve)
            msg = RidMessage.from_physical(
                uid=cfg.uid,
                obf_lat=released_geo[i, 0],
                obf_lon=released_geo[i, 1],
                obf_alt_m=released_geo[i, 2],
                vel_enu_mps=vel[i],
                cs_lat=cs[0],
                cs_lon=cs[1],
                cs_alt_m=cs[2],
                timestamp=_TIMESTAMP_BASE + int(traj.t[i] - traj.t[0]),
                emergency=False,
                report=report,
            )
            frames.append(encode(msg, curve))
            gen_time[i] = time.perf_counter() - start
    return _StreamLog(
        t=np.asarray(traj.t),
        true_geo=true_geo,
        true_enu=true_enu,
        released_geo=released_geo,
        released_enu=released_enu,
        surrogate=surrogate,
        frames=frames,
        gen_time=gen_time,
        msg_size=message_size(curve),
        origin=origin,
    )


def _distance_stats(logs: list[_StreamLog]) -> tuple[float, float, int]:
    d_h = np.concatenate([np.linalg.norm(s.released_enu[:, :2] - s.true_enu[:, :2], axis=1) for s in logs])
    d_3 = np.concatenate([np.linalg.norm(s.released_enu - s.true_enu, axis=1) for s in logs])
    return float(d_h.mean()), float(d_3.mean()), len(d_h)


def _timing_fields(logs: list[_StreamLog]) -> dict:
    times = [s.gen_time for s in logs if s.gen_time is not None]
    if not times:
        return {"gen_time_mean_s": None, "gen_time_max_s": None, "gen_time_over_budget": False}
    t = np.concatenate(times)
    return {
        "gen_time_mean_s": float(t.mean()),
        "gen_time_max_s": float(t.max()),
        "gen_time_over_budget": bool(t.max() >= GEN_TIME_BUDGET_S),
    }


def _extra_histogram(extras: np.ndarray, cfg: SimConfig, measured_avg: float):
    scale = cfg.target_avg_m if cfg.target_avg_m else max(measured_avg, 1e-9)
    hi = 3.0 * scale
    clipped = np.minimum(extras, np.nextafter(hi, 0.0)) if len(extras) else extras
    counts, edges = np.histogram(clipped, bins=cfg.hist_bins, range=(0.0, hi))
    return [float(e) for e in edges], [int(c) for c in counts]


def run_privacy_experiment(traj: Trajectory, cfg: SimConfig) -> MetricsReport:
    """Full-pipeline broadcast run: obfuscation, encryption, encoding per fix."""
    epsilon = cfg.resolve_epsilon() if cfg.obfuscate else None
    curve = cfg.curve_profile()
    keys = kgen(curve)
    logs = []
    for run in range(cfg.runs):
        logs.append(
            _obfuscate_stream(
                traj, cfg, epsilon or 1.0, _stream(cfg.rng_seed, run, 0), True, keys.public_key
            )
        )
    sizes = {len(f) for s in logs for f in s.frames}
    if sizes != {logs[0].msg_size}:
        raise AssertionError(f"inconsistent frame sizes {sizes}")
    avg_h, avg_3d, n = _distance_stats(logs)
    return MetricsReport(
        kind="privacy",
        runs=cfg.runs,
        n_disclosures=n,
        epsilon_h=epsilon,
        avg_distance_h=avg_h,
        avg_distance_3d=avg_3d,
        msg_size_bytes=logs[0].msg_size,
        **_timing_fields(logs),
    )


def run_nfz_experiment(traj: Trajectory, cfg: SimConfig, events: list | None = None) -> MetricsReport:
    """No-fly-zone monitoring: observer triage plus TTP resolution per frame.

    ``events`` (if given) collects (fix index, outcome, disclosure or
    None) so callers can audit exactly what the TTP released.
    """
    spec = cfg.nfz or NfzSpec(
        *_area_center_latlon(cfg.area), nfz_radius_m=500.0, wa_radius_m=505.0
    )
    epsilon = cfg.resolve_epsilon() if cfg.obfuscate else None
    curve = cfg.curve_profile()
    keys = kgen(curve)
    confusion = {k: 0 for k in CONFUSION_KEYS}
    scoped = 0
    logs = []
    for run in range(cfg.runs):
        log = _obfuscate_stream(
            traj, cfg, epsilon or 1.0, _stream(cfg.rng_seed, run, 0), True, keys.public_key
        )
        logs.append(log)
        for i, frame in enumerate(log.frames):
            msg = decode(frame, curve)
            true_pos = tuple(log.true_geo[i])
            obf_pos = msg.obf_position
            outcome = classify_disclosure(spec, true_pos, obf_pos)
            if in_scope(spec, true_pos, obf_pos, cfg.scope_rule):
                confusion[outcome.classification] += 1
                scoped += 1
            forwarded = observer_check_nfz(spec, msg)
            disclosure = None
            if forwarded is not None:
                disclosure = ttp_resolve_invasion(spec, forwarded, keys.secret_key, curve)
            if events is not None:
                events.append((i, outcome, disclosure))
    avg_h, avg_3d, n = _distance_stats(logs)
    return MetricsReport(
        kind="nfz",
        runs=cfg.runs,
        n_disclosures=n,
        epsilon_h=epsilon,
        avg_distance_h=avg_h,
        avg_distance_3d=avg_3d,
        confusion=confusion,
        n_scoped=scoped,
        msg_size_bytes=logs[0].msg_size,
        **_timing_fields(logs),
    )


def _area_center_latlon(area: AreaSpec) -> tuple[float, float]:
    from .geo import geodetic_from_enu

    geo = geodetic_from_enu(area.center_enu, area.origin)
    return float(geo[0]), float(geo[1])


def station_layout(cfg: SimConfig, rng: np.random.Generator) -> list[ChargingStation]:
    """Uniform-random stations in the area, or a grid when station_grid_m is set.

    Ids ascend in generation order, which is what the nearest-station
    tie-break keys on.
    """
    from .geo import geodetic_from_enu

    area = cfg.area
    if cfg.station_grid_m:
        g = float(cfg.station_grid_m)
        es = np.arange(g / 2, area.extent_e, g)
        ns = np.arange(g / 2, area.extent_n, g)
        enu = np.array([(e, n_, cfg.station_alt_m) for e in es for n_ in ns])
    else:
        u = rng.uniform(0.0, 1.0, size=(cfg.n_stations, 2))
        enu = np.column_stack(
            [u[:, 0] * area.extent_e, u[:, 1] * area.extent_n, np.full(len(u), cfg.station_alt_m)]
        )
    geo = geodetic_from_enu(enu, area.origin)
    return [
        ChargingStation(i, float(geo[i, 0]), float(geo[i, 1]), float(geo[i, 2]))
        for i in range(len(geo))
    ]


def _station_enu(stations: list[ChargingStation], origin) -> np.ndarray:
    return np.array(
        [enu_from_geodetic(s.lat, s.lon, s.alt_m, origin) for s in stations]
    )


def run_station_experiment(traj: Trajectory, cfg: SimConfig) -> MetricsReport:
    """Charging-station dispatch penalty of disclosing obfuscated locations.

    Per fix: the station nearest the disclosed location is suggested,
    the one nearest the true location is optimal, and the extra distance
    is the drone's travel penalty. Large layouts (> 256 stations) switch
    to a vectorised argmin with identical metric and tie-break.
    """
    epsilon = cfg.resolve_epsilon() if cfg.obfuscate else None
    logs = []
    extras = []
    for run in range(cfg.runs):
        stations = station_layout(cfg, _stream(cfg.rng_seed, run, 1))
        log = _obfuscate_stream(traj, cfg, epsilon or 1.0, _stream(cfg.rng_seed, run, 0), False)
        logs.append(log)
        s_enu = _station_enu(stations, log.origin)
        if len(stations) > 256:
            sugg = _argmin_ids(s_enu, log.released_enu)
            opt = _argmin_ids(s_enu, log.true_enu)
        else:
            sugg = np.array(
                [nearest_station(stations, tuple(p), origin=log.origin) for p in log.released_geo]
            )
            opt = np.array(
                [nearest_station(stations, tuple(p), origin=log.origin) for p in log.true_geo]
            )
        d_sugg = np.linalg.norm(log.true_enu - s_enu[sugg], axis=1)
        d_opt = np.linalg.norm(log.true_enu - s_enu[opt], axis=1)
        extras.append(d_sugg - d_opt)
    extras = np.concatenate(extras)
    avg_h, avg_3d, n = _distance_stats(logs)
    edges, counts = _extra_histogram(extras, cfg, avg_h)
    return MetricsReport(
        kind="station",
        runs=cfg.runs,
        n_disclosures=n,
        epsilon_h=epsilon,
        avg_distance_h=avg_h,
        avg_distance_3d=avg_3d,
        extra_distance_mean=float(extras.mean()),
        extra_distance_hist_edges=edges,
        extra_distance_hist_counts=counts,
        msg_size_bytes=logs[0].msg_size,
        **_timing_fields(logs),
    )


def _argmin_ids(station_enu: np.ndarray, points: np.ndarray, chunk: int = 256) -> np.ndarray:
    out = np.empty(len(points), dtype=np.int64)
    for lo in range(0, len(points), chunk):
        block = points[lo : lo + chunk]
        d = np.linalg.norm(block[:, None, :] - station_enu[None, :, :], axis=2)
        out[lo : lo + chunk] = d.argmin(axis=1)
    return out


def build_fleet(cfg: SimConfig) -> list[Trajectory]:
    """Random-waypoint service-drone tracks; prefix-stable in n_uavs."""
    duration = cfg.duration_s or 1200.0
    return [
        random_waypoint_trajectory(
            cfg.area, cfg.speed_mps, _derived_seed(cfg.rng_seed, 20 + i), duration
        )
        for i in range(cfg.n_uavs)
    ]


def run_daas_experiment(fleet: list[Trajectory], cfg: SimConfig) -> MetricsReport:
    """Service-drone selection penalty, mirror of the station experiment.

    Moving obfuscated drones, fixed user; extra distance is how much
    farther the signal travels to the chosen drone than to the optimal
    one (true positions).
    """
    if not fleet:
        raise ValueError("empty fleet")
    epsilon = cfg.resolve_epsilon() if cfg.obfuscate else None
    user = cfg.user or (*_area_center_latlon(cfg.area), 1.5)
    logs_all = []
    extras = []
    for run in range(cfg.runs):
        logs = [
            _obfuscate_stream(t, cfg, epsilon or 1.0, _stream(cfg.rng_seed, run, 10 + i), False)
            for i, t in enumerate(fleet)
        ]
        logs_all.extend(logs)
        origin = logs[0].origin
        user_enu = enu_from_geodetic(*user, origin)
        n = min(len(lg.t) for lg in logs)
        for i in range(n):
            disclosed = [(uid, tuple(lg.released_geo[i])) for uid, lg in enumerate(logs)]
            actual = [(uid, tuple(lg.true_geo[i])) for uid, lg in enumerate(logs)]
            chosen = select_daas_uav(disclosed, user, origin=origin)
            optimal = select_daas_uav(actual, user, origin=origin)
            true_enu = {uid: enu_from_geodetic(*pos, origin) for uid, pos in actual}
            d_chosen = float(np.linalg.norm(user_enu - true_enu[chosen]))
            d_opt = float(np.linalg.norm(user_enu - true_enu[optimal]))
            extras.append(d_chosen - d_opt)
    extras = np.asarray(extras)
    avg_h, avg_3d, n_total = _distance_stats(logs_all)
    edges, counts = _extra_histogram(extras, cfg, avg_h)
    return MetricsReport(
        kind="daas",
        runs=cfg.runs,
        n_disclosures=n_total,
        epsilon_h=epsilon,
        avg_distance_h=avg_h,
        avg_distance_3d=avg_3d,
        extra_distance_mean=float(extras.mean()),
        extra_distance_hist_edges=edges,
        extra_distance_hist_counts=counts,
        msg_size_bytes=logs_all[0].msg_size,
        **_timing_fields(logs_all),
    )


# --- key=value config files -------------------------------------------------

_CONFIG_KEYS = {
    "epsilon": float,
    "target_avg_m": float,
    "delta": float,
    "curve": str,
    "seed": int,
    "runs": int,
    "cell_e": float,
    "cell_n": float,
    "cell_alt": float,
    "b": int,
    "area_e": float,
    "area_n": float,
    "alt_min": float,
    "alt_max": float,
    "origin_lat": float,
    "origin_lon": float,
    "traj": str,
    "synth_kind": str,
    "speed": float,
    "duration": float,
    "obfuscate": bool,
    "uid": int,
    "nfz_lat": float,
    "nfz_lon": float,
    "nfz_radius": float,
    "wa_radius": float,
    "scope_rule": str,
    "n_stations": int,
    "station_grid_m": float,
    "station_alt": float,
    "n_uavs": int,
    "user_lat": float,
    "user_lon": float,
    "user_alt": float,
    "transform_mode": str,
    "isotropic_samples": int,
    "hist_bins": int,
}


def parse_keyvalue(text: str) -> dict:
    """Parse `key = value` lines ('#' comments allowed) with typed coercion."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        typ = _CONFIG_KEYS[key]
        try:
            if typ is bool:
                if value.lower() not in ("true", "false"):
                    raise ValueError
                out[key] = value.lower() == "true"
            else:
                out[key] = typ(value)
        except ValueError:
            raise ValueError(f"line {lineno}: bad {typ.__name__} value {value!r}") from None
    return out


def config_from_mapping(m: dict) -> SimConfig:
    grid = GridSpec(
        cell_size_e=m.get("cell_e", 50.0),
        cell_size_n=m.get("cell_n", 50.0),
        cell_size_alt=m.get("cell_alt", 10.0),
        b=m.get("b", 3),
    )
    area = AreaSpec(
        extent_e=m.get("area_e", 1500.0),
        extent_n=m.get("area_n", 2600.0),
        alt_min=m.get("alt_min", 10.0),
        alt_max=m.get("alt_max", 40.0),
        origin_lat=m.get("origin_lat", 51.45),
        origin_lon=m.get("origin_lon", 5.45),
    )
    nfz = None
    if "nfz_radius" in m or "wa_radius" in m:
        center = (m.get("nfz_lat"), m.get("nfz_lon"))
        if center[0] is None or center[1] is None:
            center = _area_center_latlon(area)
        radius = m.get("nfz_radius", 500.0)
        nfz = NfzSpec(center[0], center[1], radius, m.get("wa_radius", radius + 5.0))
    user = None
    if "user_lat" in m and "user_lon" in m:
        user = (m["user_lat"], m["user_lon"], m.get("user_alt", 1.5))
    return SimConfig(
        epsilon=m.get("epsilon"),
        target_avg_m=m.get("target_avg_m"),
        delta=m.get("delta", 0.01),
        grid=grid,
        curve=m.get("curve", "NIST256"),
        rng_seed=m.get("seed", 0),
        runs=m.get("runs", 1),
        area=area,
        traj_path=m.get("traj"),
        synth_kind=m.get("synth_kind", "line"),
        speed_mps=m.get("speed", 5.0),
        duration_s=m.get("duration"),
        obfuscate=m.get("obfuscate", True),
        uid=m.get("uid", 1),
        nfz=nfz,
        scope_rule=m.get("scope_rule", "either"),
        n_stations=m.get("n_stations", 8),
        station_grid_m=m.get("station_grid_m"),
        station_alt_m=m.get("station_alt", 0.0),
        n_uavs=m.get("n_uavs", 6),
        user=user,
        transform_mode=m.get("transform_mode", "exact"),
        isotropic_samples=m.get("isotropic_samples", 400),
        hist_bins=m.get("hist_bins", 50),
    )


def load_config(path) -> SimConfig:
    with open(path, "r", encoding="ascii") as fh:
        return config_from_mapping(parse_keyvalue(fh.read()))
