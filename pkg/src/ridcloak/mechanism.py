"""Stateful grid-based location obfuscation for 1 Hz broadcast streams.

Per drone, the engine keeps a posterior belief over a moving box of
b x b x b grid cells centred on the current cell. Each release:

  carry the belief across the (possibly shifted) box and mix it with a
  cell-to-cell transition model -> prior; take the smallest high-prior
  cell set -> protected support; obfuscate horizontally with noise whose
  density is proportional to exp(-eps * ||.||_K), where K is the hull of
  pairwise support differences, and vertically with the 1-D analogue;
  then condition the belief on the released point.

Horizontal (east/north) and vertical (altitude) axes are treated as
independent releases with their own budgets.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .geo import enu_from_geodetic, geodetic_from_enu
from .geometry import (
    ConvexBody2,
    Interval1,
    IsotropicTransform2,
    convex_hull,
    inflate_hull,
    inflate_interval,
    isotropic_transform,
    isotropic_transform_exact,
    minkowski_norms,
    sample_uniform,
    sensitivity_hull,
    transform_body,
)

_PROB_TOL = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Cell sizes (m) and odd box width b (cells per dimension)."""

    cell_size_e: float = 50.0
    cell_size_n: float = 50.0
    cell_size_alt: float = 10.0
    b: int = 3

    def __post_init__(self):
        for name in ("cell_size_e", "cell_size_n", "cell_size_alt"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.b < 3 or self.b % 2 == 0:
            raise ValueError("b must be an odd integer >= 3")

    @property
    def n_cells(self) -> int:
        return self.b ** 3

    @property
    def half(self) -> int:
        return (self.b - 1) // 2

    @property
    def sizes(self) -> np.ndarray:
        return np.array([self.cell_size_e, self.cell_size_n, self.cell_size_alt])

    def cell_index(self, enu) -> np.ndarray:
        """Integer cell index of an (e, n, alt) position; grid anchored at 0."""
        return np.floor(np.asarray(enu, dtype=float) / self.sizes).astype(np.int64)

    def cell_center(self, index) -> np.ndarray:
        return (np.asarray(index, dtype=float) + 0.5) * self.sizes


def build_offsets(grid: GridSpec) -> np.ndarray:
    """Offset template {-k..k}^3 as an (b^3, 3) int array.

    Row-major by (de, dn, dalt): first row (-k,-k,-k), last (k,k,k),
    dalt fastest. Probability vectors and transition matrices are
    aligned with this order.
    """
    if grid.b % 2 == 0:
        raise ValueError("b must be odd")
    r = np.arange(-grid.half, grid.half + 1)
    return np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)


@dataclass(frozen=True)
class CellOffsetSet:
    """The b^3 box: absolute anchor cell plus the shared offset template."""

    anchor: np.ndarray
    offsets: np.ndarray

    @classmethod
    def at(cls, anchor, grid: GridSpec) -> "CellOffsetSet":
        return cls(np.asarray(anchor, dtype=np.int64), build_offsets(grid))

    @property
    def center_index(self) -> int:
        return (len(self.offsets) - 1) // 2

    def absolute_cells(self) -> np.ndarray:
        return self.anchor[None, :] + self.offsets

    def centers(self, grid: GridSpec) -> np.ndarray:
        return grid.cell_center(self.absolute_cells())


def validate_probability_vector(p: np.ndarray, n: int):
    p = np.asarray(p, dtype=float)
    if p.shape != (n,):
        raise ValueError(f"probability vector must have shape ({n},)")
    if np.any(p < -_PROB_TOL) or abs(p.sum() - 1.0) > _PROB_TOL:
        raise ValueError("probability vector must be nonnegative and sum to 1")
    return p


def uniform_transition(b: int) -> np.ndarray:
    """Transition matrix with every row 1/b^3: memoryless movement prior."""
    n = b ** 3
    return np.full((n, n), 1.0 / n)


def empirical_transition(enu_positions: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Row-stochastic transition estimated from a training track.

    Counts per-step cell displacements, applies them as a shift kernel
    over the box offsets, and Laplace-smooths every row by +1.
    """
    pos = np.asarray(enu_positions, dtype=float)
    if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 2:
        raise ValueError("need an (n, 3) array with n >= 2")
    offsets = build_offsets(grid)
    n = len(offsets)
    index_of = {tuple(o): i for i, o in enumerate(offsets)}
    counts = np.ones((n, n))
    cells = grid.cell_index(pos)
    for d in cells[1:] - cells[:-1]:
        shifted = offsets + d
        for i, o in enumerate(shifted):
            j = index_of.get(tuple(o))
            if j is not None:
                counts[i, j] += 1.0
    return counts / counts.sum(axis=1, keepdims=True)


def validate_transition(m: np.ndarray, n: int) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (n, n):
        raise ValueError(f"transition matrix must have shape ({n}, {n})")
    if np.any(m < 0) or np.any(np.abs(m.sum(axis=1) - 1.0) > _PROB_TOL):
        raise ValueError("transition matrix rows must be nonnegative and sum to 1")
    return m


@dataclass(frozen=True)
class DeltaLocationSet:
    """Smallest prior-mass >= 1 - delta cell set plus its release geometry."""

    selected: np.ndarray          # indices into the offset template, prior-descending
    cells: np.ndarray             # absolute cell indices, (m, 3)
    planar_hull: ConvexBody2      # hull of the horizontal corners of the cells
    vertical_interval: Interval1  # altitude span of the cells
    mass: float


@dataclass(frozen=True, eq=False)
class MechanismState:
    """Per-drone obfuscation state; treat as an immutable value.

    ``step`` returns a fresh state, so one drone's stream is a fold over
    its fixes. ``transform_mode`` selects how the whitening transform in
    the release is obtained: "exact" (closed-form polygon moments,
    deterministic, memoised) or "sampled" (Monte Carlo with
    ``isotropic_samples`` draws).
    """

    epsilon_h: float
    epsilon_v: float
    delta: float
    grid: GridSpec
    transition: np.ndarray
    posterior: np.ndarray
    prev_offsets: CellOffsetSet | None = None
    origin: tuple[float, float] | None = None
    isotropic_samples: int = 400
    transform_mode: str = "exact"
    min_halfwidth: float = 1.0

    def __post_init__(self):
        if self.epsilon_h <= 0 or self.epsilon_v <= 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError("delta must be in [0, 1)")
        if self.transform_mode not in ("exact", "sampled"):
            raise ValueError("transform_mode must be 'exact' or 'sampled'")
        validate_transition(self.transition, self.grid.n_cells)
        validate_probability_vector(self.posterior, self.grid.n_cells)

    @classmethod
    def initial(
        cls,
        epsilon: float,
        delta: float = 0.01,
        grid: GridSpec | None = None,
        transition: np.ndarray | None = None,
        epsilon_v: float | None = None,
        **kwargs,
    ) -> "MechanismState":
        """Fresh state with a uniform belief.

        ``epsilon`` is spent per release on the horizontal pair and,
        unless ``epsilon_v`` overrides it, again on the vertical axis
        (the two axis groups are released independently; total budget
        per fix is epsilon_h + epsilon_v).
        """
        grid = grid or GridSpec()
        n = grid.n_cells
        transition = uniform_transition(grid.b) if transition is None else transition
        return cls(
            epsilon_h=epsilon,
            epsilon_v=epsilon if epsilon_v is None else epsilon_v,
            delta=delta,
            grid=grid,
            transition=np.asarray(transition, dtype=float),
            posterior=np.full(n, 1.0 / n),
            **kwargs,
        )


@dataclass(frozen=True)
class ObfuscationResult:
    """One release: geodetic output plus the metric-space diagnostics."""

    released: np.ndarray          # (lat, lon, alt)
    offset_m: np.ndarray          # noise (e, n, up) in meters
    surrogate_used: bool
    delta_set: DeltaLocationSet
    posterior_fallback: bool
    true_enu: np.ndarray
    released_enu: np.ndarray


def carry_forward_prior(state: MechanismState, new_anchor) -> np.ndarray:
    """Belief for the new box before the release: inherit, renormalise, mix.

    Cells of the new box that coincide with cells of the previous box
    inherit the previous posterior; new cells start at 1/b^3. The mixed
    vector is renormalised and then pushed through the transition model.
    """
    grid = state.grid
    n = grid.n_cells
    p_mixed = np.full(n, 1.0 / n)
    if state.prev_offsets is not None:
        offsets = build_offsets(grid)
        shift = np.asarray(new_anchor, dtype=np.int64) - state.prev_offsets.anchor
        prev = offsets + shift  # offset each new cell had in the previous box
        k = grid.half
        inside = np.all((prev >= -k) & (prev <= k), axis=1)
        flat = ((prev[inside, 0] + k) * grid.b + (prev[inside, 1] + k)) * grid.b + (
            prev[inside, 2] + k
        )
        p_mixed[inside] = state.posterior[flat]
    p_mixed /= p_mixed.sum()
    return p_mixed @ state.transition


def delta_location_set(
    prior: np.ndarray, offsets: CellOffsetSet, delta: float, grid: GridSpec
) -> DeltaLocationSet:
    """Shortest prior-descending prefix of cells with mass >= 1 - delta.

    Ties are broken by offset order. The planar hull covers the four
    horizontal corners of every selected cell; the vertical interval
    spans their altitude faces.
    """
    prior = validate_probability_vector(prior, grid.n_cells)
    order = np.argsort(-prior, kind="stable")
    cum = np.cumsum(prior[order])
    target = (1.0 - delta) - 1e-12
    m = int(np.searchsorted(cum, target) + 1)
    m = min(m, len(order))
    selected = order[:m]
    cells = offsets.absolute_cells()[selected]

    ce, cn, ca = grid.cell_size_e, grid.cell_size_n, grid.cell_size_alt
    e0, e1 = cells[:, 0] * ce, (cells[:, 0] + 1) * ce
    n0, n1 = cells[:, 1] * cn, (cells[:, 1] + 1) * cn
    corners = np.concatenate(
        [
            np.stack([e0, n0], axis=1),
            np.stack([e1, n0], axis=1),
            np.stack([e1, n1], axis=1),
            np.stack([e0, n1], axis=1),
        ]
    )
    hull = convex_hull(corners)
    interval = Interval1(float(cells[:, 2].min() * ca), float((cells[:, 2].max() + 1) * ca))
    return DeltaLocationSet(
        selected=selected,
        cells=cells,
        planar_hull=hull,
        vertical_interval=interval,
        mass=float(cum[m - 1]),
    )


def _whitening(k_body: ConvexBody2, state: MechanismState, rng) -> IsotropicTransform2:
    if state.transform_mode == "sampled":
        return isotropic_transform(k_body, state.isotropic_samples, rng)
    return isotropic_transform_exact(k_body)


def _planar_noise_from_unit(
    k_body: ConvexBody2,
    transform: IsotropicTransform2,
    epsilon_h: float,
    rng: np.random.Generator,
    size: int | None = None,
):
    """Noise with density proportional to exp(-eps * ||z||_K).

    Draw z' uniform in T K, scale by a Gamma(3, 1/eps) radius, and map
    back through T^-1. The transform cancels in distribution (T^-1 z' is
    uniform in K for any invertible T), so whitening affects numerics
    only, never the output law.
    """
    z_prime = sample_uniform(transform_body(k_body, transform.t), rng, size=size)
    r = rng.gamma(shape=3.0, scale=1.0 / epsilon_h, size=size)
    if size is None:
        return r * (transform.t_inv @ z_prime)
    return r[:, None] * (z_prime @ transform.t_inv.T)


def release_planar(
    hull: ConvexBody2,
    epsilon_h: float,
    rng: np.random.Generator,
    transform_mode: str = "exact",
    n_samples: int = 400,
    size: int | None = None,
):
    """Horizontal noise offset (meters east, north) for one release."""
    if epsilon_h <= 0:
        raise ValueError("epsilon_h must be positive")
    k_body = sensitivity_hull(hull)
    if transform_mode == "sampled":
        transform = isotropic_transform(k_body, n_samples, rng)
    else:
        transform = isotropic_transform_exact(k_body)
    return _planar_noise_from_unit(k_body, transform, epsilon_h, rng, size=size)


def release_vertical(
    interval: Interval1, epsilon_v: float, rng: np.random.Generator, size: int | None = None
):
    """Vertical noise offset (meters): z' uniform in [-w, w], r ~ Gamma(2, 1/eps).

    The shape parameter follows the dimension-plus-one rule of the
    planar release with d = 1, giving density proportional to
    exp(-eps * |z| / w).
    """
    if epsilon_v <= 0:
        raise ValueError("epsilon_v must be positive")
    w = interval.width
    if w <= 0:
        raise ValueError("interval must have positive width")
    z_prime = rng.uniform(-w, w, size=size)
    r = rng.gamma(shape=2.0, scale=1.0 / epsilon_v, size=size)
    return r * z_prime


def posterior_update(
    prior: np.ndarray,
    offsets: CellOffsetSet,
    released_enu: np.ndarray,
    hull_k: ConvexBody2,
    vertical_w: float,
    epsilon_h: float,
    epsilon_v: float,
    grid: GridSpec,
) -> tuple[np.ndarray, bool]:
    """Condition the belief on a released point.

    Per-cell likelihood: exp(-eps_h * ||z_h - c_h||_K) * exp(-eps_v *
    |z_v - c_v| / w); the normaliser cancels. Exponents are shifted by
    their minimum before exponentiating; if the weighted likelihood
    still vanishes the prior is returned unchanged with a True flag.
    """
    prior = validate_probability_vector(prior, grid.n_cells)
    centers = offsets.centers(grid)
    z = np.asarray(released_enu, dtype=float)
    d = epsilon_h * minkowski_norms(hull_k, z[:2] - centers[:, :2])
    d = d + epsilon_v * np.abs(z[2] - centers[:, 2]) / vertical_w
    like = np.exp(-(d - d.min()))
    weighted = like * prior
    total = weighted.sum()
    if not np.isfinite(total) or total <= 0.0:
        return prior.copy(), True
    return weighted / total, False


def _pick_surrogate(dls: DeltaLocationSet, true_enu, grid: GridSpec) -> np.ndarray:
    """Center of the selected cell nearest the true position.

    Exact distance ties go to the smallest offset index.
    """
    centers = grid.cell_center(dls.cells)
    d = np.linalg.norm(centers - np.asarray(true_enu, dtype=float), axis=1)
    near = np.flatnonzero(d <= d.min())
    winner = near[np.argmin(dls.selected[near])]
    return centers[winner]


def step(
    state: MechanismState, true_position, rng: np.random.Generator
) -> tuple[ObfuscationResult, MechanismState]:
    """One broadcast release for a (lat, lon, alt) fix.

    Pure given the injected generator: returns the obfuscation result
    and the successor state, leaving ``state`` untouched.
    """
    lat, lon, alt = (float(v) for v in true_position)
    if not all(np.isfinite((lat, lon, alt))):
        raise ValueError("true position must be finite")
    origin = state.origin if state.origin is not None else (lat, lon)
    x = enu_from_geodetic(lat, lon, alt, origin)

    anchor = state.grid.cell_index(x)
    offsets = CellOffsetSet.at(anchor, state.grid)
    prior = carry_forward_prior(state, anchor)
    dls = delta_location_set(prior, offsets, state.delta, state.grid)

    hull = inflate_hull(dls.planar_hull, state.min_halfwidth)
    interval = inflate_interval(dls.vertical_interval, state.min_halfwidth)

    surrogate_used = offsets.center_index not in dls.selected
    x_star = _pick_surrogate(dls, x, state.grid) if surrogate_used else x

    k_body = sensitivity_hull(hull)
    transform = _whitening(k_body, state, rng)
    noise_h = _planar_noise_from_unit(k_body, transform, state.epsilon_h, rng)
    noise_v = release_vertical(interval, state.epsilon_v, rng)
    offset_m = np.array([noise_h[0], noise_h[1], noise_v])
    released_enu = x_star + offset_m

    posterior, fell_back = posterior_update(
        prior,
        offsets,
        released_enu,
        k_body,
        interval.width,
        state.epsilon_h,
        state.epsilon_v,
        state.grid,
    )
    result = ObfuscationResult(
        released=geodetic_from_enu(released_enu, origin),
        offset_m=offset_m,
        surrogate_used=surrogate_used,
        delta_set=dls,
        posterior_fallback=fell_back,
        true_enu=x,
        released_enu=released_enu,
    )
    new_state = replace(state, posterior=posterior, prev_offsets=offsets, origin=origin)
    return result, new_state


def calibrate_epsilon(
    grid: GridSpec,
    target_avg_h: float,
    n: int = 200_000,
    seed: int = 12345,
) -> float:
    """Per-axis budget giving a mean horizontal offset of ``target_avg_h`` m.

    Assumes the steady state where the protected support is the full
    b^3 box (uniform transition model and small delta): the mean offset
    is then E[r] * E[|u|] = (3 / eps) * E[|u|] with u uniform in the box
    sensitivity hull, and E[|u|] is estimated once by Monte Carlo.
    """
    if target_avg_h <= 0:
        raise ValueError("target_avg_h must be positive")
    offsets = CellOffsetSet.at((0, 0, 0), grid)
    full = delta_location_set(np.full(grid.n_cells, 1.0 / grid.n_cells), offsets, 0.0, grid)
    k_body = sensitivity_hull(full.planar_hull)
    pts = sample_uniform(k_body, np.random.default_rng(seed), size=n)
    mean_norm = float(np.linalg.norm(pts, axis=1).mean())
    return 3.0 * mean_norm / target_avg_h
