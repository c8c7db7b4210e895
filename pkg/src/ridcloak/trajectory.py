"""Flight-track ingestion and synthetic trajectory generation.

Tracks are (t, lat, lon, alt) fix sequences at 1 Hz; loaded CSVs are
resampled by linear interpolation so every simulation sees the broadcast
cadence the regulation mandates.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .geo import enu_from_geodetic, geodetic_from_enu

CSV_HEADER = ["t", "lat", "lon", "alt"]


@dataclass(frozen=True)
class AreaSpec:
    """Operating volume: extents in meters from a geodetic origin corner."""

    extent_e: float = 1500.0
    extent_n: float = 2600.0
    alt_min: float = 10.0
    alt_max: float = 40.0
    origin_lat: float = 51.45
    origin_lon: float = 5.45

    def __post_init__(self):
        if self.extent_e <= 0 or self.extent_n <= 0:
            raise ValueError("area extents must be positive")
        if self.alt_max < self.alt_min:
            raise ValueError("alt_max must be >= alt_min")

    @property
    def origin(self) -> tuple[float, float]:
        return self.origin_lat, self.origin_lon

    @property
    def center_enu(self) -> np.ndarray:
        return np.array(
            [self.extent_e / 2, self.extent_n / 2, (self.alt_min + self.alt_max) / 2]
        )


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered fixes; arrays share one length."""

    t: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    alt: np.ndarray

    def __post_init__(self):
        n = len(self.t)
        if not (len(self.lat) == len(self.lon) == len(self.alt) == n) or n == 0:
            raise ValueError("trajectory arrays must be non-empty and equally long")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)

    def enu(self, origin: tuple[float, float] | None = None) -> np.ndarray:
        origin = origin or (float(self.lat[0]), float(self.lon[0]))
        return enu_from_geodetic(self.lat, self.lon, self.alt, origin)

    def velocities_enu(self, origin: tuple[float, float] | None = None) -> np.ndarray:
        """Per-fix (e, n, up) velocity in m/s; the last fix repeats its predecessor."""
        p = self.enu(origin)
        dt = np.diff(self.t)[:, None]
        v = np.diff(p, axis=0) / dt
        return np.vstack([v, v[-1:]]) if len(v) else np.zeros((1, 3))


def load_trajectory(path) -> Trajectory:
    """Parse a `t,lat,lon,alt` CSV and resample it to 1 Hz."""
    rows = []
    with open(path, "r", encoding="ascii", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise ValueError(f"{path}: expected header '{','.join(CSV_HEADER)}'")
        for i, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise ValueError(f"{path}: line {i}: expected 4 fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValueError(f"{path}: line {i}: non-numeric field") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.array(rows)
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{path}: non-finite values")
    if np.any(np.diff(data[:, 0]) <= 0):
        bad = int(np.flatnonzero(np.diff(data[:, 0]) <= 0)[0])
        raise ValueError(f"{path}: line {bad + 3}: timestamps not strictly increasing")
    return resample_1hz(Trajectory(data[:, 0], data[:, 1], data[:, 2], data[:, 3]))


def save_trajectory(traj: Trajectory, path):
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for row in zip(traj.t, traj.lat, traj.lon, traj.alt):
            writer.writerow([repr(float(v)) for v in row])


def resample_1hz(traj: Trajectory) -> Trajectory:
    """Linear interpolation onto a 1-second grid starting at the first fix."""
    t0, t1 = float(traj.t[0]), float(traj.t[-1])
    grid = t0 + np.arange(0.0, math.floor(t1 - t0) + 0.5, 1.0)
    return Trajectory(
        grid,
        np.interp(grid, traj.t, traj.lat),
        np.interp(grid, traj.t, traj.lon),
        np.interp(grid, traj.t, traj.alt),
    )


def _altitude_profile(area: AreaSpec, t: np.ndarray, phase: float, period: float = 600.0) -> np.ndarray:
    mid = 0.5 * (area.alt_min + area.alt_max)
    amp = 0.4 * (area.alt_max - area.alt_min)
    if amp == 0.0:
        return np.full_like(t, mid)
    return mid + amp * np.sin(2 * math.pi * t / period + phase)


def _from_enu_path(points: np.ndarray, t: np.ndarray, area: AreaSpec) -> Trajectory:
    geo = geodetic_from_enu(points, area.origin)
    return Trajectory(t, geo[:, 0], geo[:, 1], geo[:, 2])


def _walk_polyline(waypoints: np.ndarray, speed: float, duration: float | None):
    seg = np.diff(waypoints, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    total = float(seg_len.sum())
    span = total / speed if duration is None else float(duration)
    t = np.arange(0.0, math.floor(span) + 0.5, 1.0)
    s = np.minimum(t * speed, total)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    e = np.interp(s, cum, waypoints[:, 0])
    n = np.interp(s, cum, waypoints[:, 1])
    return np.stack([e, n], axis=1), t


def synth_trajectory(
    kind: str,
    area: AreaSpec,
    speed: float,
    seed: int,
    duration: float | None = None,
) -> Trajectory:
    """Deterministic synthetic 1 Hz track inside the operating area.

    kinds: "line" (straight crossing through the middle of the area,
    small seeded lateral offset), "lawnmower" (boustrophedon sweep),
    "loop" (closed circle). ``duration`` truncates or, for line, extends
    the track by flying it back and forth.
    """
    if speed <= 0:
        raise ValueError("speed must be positive")
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0, 2 * math.pi)

    alt_period = 600.0
    if kind == "line":
        n_off = area.extent_n * (0.5 + rng.uniform(-0.05, 0.05))
        a = np.array([0.03 * area.extent_e, n_off])
        b = np.array([0.97 * area.extent_e, n_off])
        leg = float(np.linalg.norm(b - a))
        if duration is None:
            waypoints = np.array([a, b])
        else:
            laps = max(1, math.ceil(duration * speed / leg))
            pts = [a if i % 2 == 0 else b for i in range(laps + 1)]
            waypoints = np.array(pts)
        horiz, t = _walk_polyline(waypoints, speed, duration)
    elif kind == "lawnmower":
        rows = 6
        margin = 0.05
        ys = np.linspace(margin * area.extent_n, (1 - margin) * area.extent_n, rows)
        x0, x1 = margin * area.extent_e, (1 - margin) * area.extent_e
        pts = []
        for i, y in enumerate(ys):
            xs = (x0, x1) if i % 2 == 0 else (x1, x0)
            pts.append([xs[0], y])
            pts.append([xs[1], y])
        horiz, t = _walk_polyline(np.array(pts), speed, duration)
    elif kind == "loop":
        radius = 0.4 * min(area.extent_e, area.extent_n)
        center = np.array([area.extent_e / 2, area.extent_n / 2])
        # whole-second lap so the 1 Hz track closes exactly on itself
        lap = max(4.0, round(2 * math.pi * radius / speed))
        span = lap if duration is None else float(duration)
        t = np.arange(0.0, math.floor(span) + 0.5, 1.0)
        theta = 2 * math.pi * t / lap + phase
        horiz = center + radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        alt_period = lap  # altitude closes with the circle
    else:
        raise ValueError(f"unknown trajectory kind {kind!r}")

    alt = _altitude_profile(area, t, phase, period=alt_period)
    return _from_enu_path(np.column_stack([horiz, alt]), t, area)


def random_waypoint_trajectory(
    area: AreaSpec,
    speed: float,
    seed: int,
    duration: float,
    n_waypoints: int = 8,
) -> Trajectory:
    """Polyline through uniform-random waypoints; fleet-layout generator."""
    if speed <= 0:
        raise ValueError("speed must be positive")
    rng = np.random.default_rng(seed)
    margin = 0.05
    needed = max(n_waypoints, 2)
    pts = [
        np.array(
            [
                rng.uniform(margin * area.extent_e, (1 - margin) * area.extent_e),
                rng.uniform(margin * area.extent_n, (1 - margin) * area.extent_n),
            ]
        )
        for _ in range(needed)
    ]
    waypoints = np.array(pts)
    # extend the tour until it covers the requested flight time
    while np.linalg.norm(np.diff(waypoints, axis=0), axis=1).sum() < duration * speed:
        waypoints = np.vstack([waypoints, waypoints[1 : needed]])
    horiz, t = _walk_polyline(waypoints, speed, duration)
    alt = _altitude_profile(area, t, rng.uniform(0, 2 * math.pi))
    return _from_enu_path(np.column_stack([horiz, alt]), t, area)
