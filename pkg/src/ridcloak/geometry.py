"""Planar convex-body primitives behind the norm-based noise release.

All bodies here are small polygons (tens of vertices at most), so the
implementations favour exactness over asymptotics: monotone-chain hulls,
fan-triangulation sampling (rejection-free), closed-form polygon moments.
Coordinates are local east/north offsets in meters.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

_DEGENERATE_AREA = 1e-12


@dataclass(frozen=True)
class Interval1:
    """Closed interval on the vertical axis, meters."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValueError("interval bounds must be finite")
        if self.lo > self.hi:
            raise ValueError("interval lo > hi")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)


class ConvexBody2:
    """Convex polygon with counter-clockwise vertices, shape (m, 2).

    One or two vertices describe a degenerate body (point / segment);
    those are valid containers but cannot be sampled or used as norm
    units. Vertex order is preserved as given.
    """

    __slots__ = ("vertices",)

    def __init__(self, vertices, validate: bool = True):
        v = np.asarray(vertices, dtype=float)
        if v.ndim == 1 and v.size == 2:
            v = v.reshape(1, 2)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 1:
            raise ValueError("vertices must have shape (m, 2) with m >= 1")
        if not np.all(np.isfinite(v)):
            raise ValueError("vertices must be finite")
        if validate and v.shape[0] >= 3:
            nxt = np.roll(v, -1, axis=0)
            nxt2 = np.roll(v, -2, axis=0)
            cross = _cross(nxt - v, nxt2 - nxt)
            scale = max(1.0, float(np.abs(v).max()) ** 2)
            if np.any(cross < -1e-9 * scale):
                raise ValueError("vertices are not in convex counter-clockwise order")
        self.vertices = v
        self.vertices.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def area(self) -> float:
        if self.n_vertices < 3:
            return 0.0
        v = self.vertices
        nxt = np.roll(v, -1, axis=0)
        return 0.5 * float(np.sum(v[:, 0] * nxt[:, 1] - nxt[:, 0] * v[:, 1]))

    @property
    def diameter(self) -> float:
        v = self.vertices
        d = v[:, None, :] - v[None, :, :]
        return float(np.sqrt((d ** 2).sum(-1)).max())

    def contains(self, points, tol: float = 1e-7) -> np.ndarray:
        """Membership test for one point (2,) or a batch (n, 2)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        v = self.vertices
        eps = tol * max(1.0, float(np.abs(v).max()))
        if self.n_vertices == 1:
            ok = np.linalg.norm(p - v[0], axis=1) <= eps
        elif self.n_vertices == 2:
            a, b = v
            ab = b - a
            t = np.clip((p - a) @ ab / max(ab @ ab, _DEGENERATE_AREA), 0.0, 1.0)
            ok = np.linalg.norm(p - (a + t[:, None] * ab), axis=1) <= eps
        else:
            nxt = np.roll(v, -1, axis=0)
            edge = nxt - v
            # point left of every CCW edge, with slack
            cr = edge[None, :, 0] * (p[:, None, 1] - v[None, :, 1]) - edge[None, :, 1] * (
                p[:, None, 0] - v[None, :, 0]
            )
            ok = np.all(cr >= -eps * max(1.0, float(np.abs(edge).max())), axis=1)
        return ok if np.asarray(points).ndim == 2 else bool(ok[0])

    def __repr__(self):
        return f"ConvexBody2({self.n_vertices} vertices, area={self.area:.3g})"


def _cross(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def convex_hull(points) -> ConvexBody2:
    """Minimal convex polygon containing ``points`` (array-like (n, 2)).

    Andrew's monotone chain. Output vertices are counter-clockwise,
    starting from the lexicographically smallest vertex; duplicates,
    interior and collinear-edge points are dropped.
    """
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise ValueError("empty point set")
    pts = pts.reshape(-1, 2)
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    uniq = np.unique(pts, axis=0)  # sorted lexicographically
    if uniq.shape[0] <= 2:
        return ConvexBody2(uniq, validate=False)

    p = [tuple(q) for q in uniq]

    def half(seq):
        out = []
        for q in seq:
            while len(out) >= 2:
                o, a = out[-2], out[-1]
                if (a[0] - o[0]) * (q[1] - o[1]) - (a[1] - o[1]) * (q[0] - o[0]) <= 0.0:
                    out.pop()
                else:
                    break
            out.append(q)
        return out

    lower = half(p)
    upper = half(p[::-1])
    hull = lower[:-1] + upper[:-1]
    return ConvexBody2(np.array(hull), validate=False)


def pairwise_differences(body: ConvexBody2) -> np.ndarray:
    """All ordered vertex differences v_i - v_j (i != j) plus the origin.

    Returns an (m·(m-1) + 1, 2) array; the origin is the last row.
    """
    v = body.vertices
    m = v.shape[0]
    d = (v[:, None, :] - v[None, :, :]).reshape(m * m, 2)
    keep = np.ones(m * m, dtype=bool)
    keep[:: m + 1] = False  # drop i == j rows
    return np.vstack([d[keep], np.zeros((1, 2))])


def sensitivity_hull(delta_x_hull: ConvexBody2) -> ConvexBody2:
    """Hull of the pairwise vertex differences; origin-symmetric by construction."""
    return convex_hull(pairwise_differences(delta_x_hull))


def sample_uniform(body: ConvexBody2, rng: np.random.Generator, size: int | None = None):
    """Uniform sample(s) from the interior of a non-degenerate body.

    Fan triangulation + area-weighted triangle choice + barycentric
    draw; exact and rejection-free. Returns shape (2,) for ``size=None``
    else (size, 2).
    """
    if body.n_vertices < 3 or body.area <= _DEGENERATE_AREA:
        raise ValueError("degenerate body")
    v = body.vertices
    a, b, c = v[0], v[1:-1], v[2:]
    areas = 0.5 * _cross(b - a, c - a)
    w = areas / areas.sum()
    n = 1 if size is None else int(size)
    idx = rng.choice(len(w), size=n, p=w)
    u1 = rng.random(n)
    u2 = rng.random(n)
    flip = u1 + u2 > 1.0
    u1[flip] = 1.0 - u1[flip]
    u2[flip] = 1.0 - u2[flip]
    pts = a + u1[:, None] * (b[idx] - a) + u2[:, None] * (c[idx] - a)
    return pts[0] if size is None else pts


def _facet_form(body: ConvexBody2):
    """Outward facet normals N and offsets c with body = {x : N x <= c}, c > 0."""
    if body.n_vertices < 3 or body.area <= _DEGENERATE_AREA:
        raise ValueError("degenerate body")
    v = body.vertices
    edge = np.roll(v, -1, axis=0) - v
    normals = np.stack([edge[:, 1], -edge[:, 0]], axis=1)
    c = np.sum(normals * v, axis=1)
    if np.any(c <= _DEGENERATE_AREA):
        raise ValueError("origin is not interior to the body")
    return normals, c


def minkowski_norm(body: ConvexBody2, p) -> float:
    """Minkowski functional ||p||_K = inf{l > 0 : p/l in K}.

    ``body`` must be origin-symmetric with positive area; then this is a
    norm (0 only at the origin, positively homogeneous, triangle
    inequality).
    """
    return float(minkowski_norms(body, np.asarray(p, dtype=float).reshape(1, 2))[0])


def minkowski_norms(body: ConvexBody2, points: np.ndarray) -> np.ndarray:
    """Vectorised Minkowski functional for an (n, 2) batch."""
    normals, c = _facet_form(body)
    vals = (np.atleast_2d(points) @ normals.T) / c
    return np.maximum(vals.max(axis=1), 0.0)


@dataclass(frozen=True)
class IsotropicTransform2:
    """Linear map T (det 1) whitening a body's second moments, with inverse."""

    t: np.ndarray
    t_inv: np.ndarray

    def __post_init__(self):
        if not np.allclose(self.t @ self.t_inv, np.eye(2), rtol=0, atol=1e-9):
            raise ValueError("t_inv is not the inverse of t")
        if np.linalg.det(self.t) <= 0:
            raise ValueError("transform must preserve orientation")


def _transform_from_moments(second_moment: np.ndarray) -> IsotropicTransform2:
    evals, evecs = np.linalg.eigh(second_moment)
    if evals[0] <= 1e-12 * max(evals[1], 1.0):
        raise ValueError("rank-deficient sample cloud")
    t = evecs @ np.diag(evals ** -0.5) @ evecs.T
    t = t / np.sqrt(np.linalg.det(t))  # unit determinant
    t_inv = np.linalg.inv(t)
    return IsotropicTransform2(t, t_inv)


def isotropic_transform(
    body: ConvexBody2, n_samples: int, rng: np.random.Generator
) -> IsotropicTransform2:
    """Whitening transform estimated from uniform interior samples.

    The second-moment matrix of the transformed samples is a scalar
    multiple of the identity (up to sampling error); T is normalised to
    unit determinant so it rescales shape, not volume.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    pts = sample_uniform(body, rng, size=n_samples)
    return _transform_from_moments(pts.T @ pts / n_samples)


def polygon_second_moment(body: ConvexBody2) -> np.ndarray:
    """Exact area-normalised second moment about the origin.

    Signed fan decomposition over the edges, so the result is correct
    for any simple polygon regardless of where the origin lies.
    """
    v = body.vertices
    if body.n_vertices < 3:
        raise ValueError("degenerate body")
    a = v
    b = np.roll(v, -1, axis=0)
    cr = _cross(a, b)
    area = cr.sum() / 2.0
    if area <= _DEGENERATE_AREA:
        raise ValueError("degenerate body")
    ixx = np.sum(cr * (a[:, 0] ** 2 + a[:, 0] * b[:, 0] + b[:, 0] ** 2)) / 12.0
    iyy = np.sum(cr * (a[:, 1] ** 2 + a[:, 1] * b[:, 1] + b[:, 1] ** 2)) / 12.0
    ixy = (
        np.sum(cr * (2 * a[:, 0] * a[:, 1] + a[:, 0] * b[:, 1] + a[:, 1] * b[:, 0] + 2 * b[:, 0] * b[:, 1]))
        / 24.0
    )
    return np.array([[ixx, ixy], [ixy, iyy]]) / area


@lru_cache(maxsize=256)
def _exact_transform_cached(vertex_bytes: bytes, m: int) -> IsotropicTransform2:
    verts = np.frombuffer(vertex_bytes, dtype=float).reshape(m, 2)
    return _transform_from_moments(polygon_second_moment(ConvexBody2(verts, validate=False)))


def isotropic_transform_exact(body: ConvexBody2) -> IsotropicTransform2:
    """Deterministic whitening transform from closed-form polygon moments.

    Same contract as :func:`isotropic_transform` without Monte Carlo
    error; memoised on the vertex array since release loops see the same
    body geometry over and over.
    """
    return _exact_transform_cached(body.vertices.tobytes(), body.n_vertices)


def transform_body(body: ConvexBody2, matrix: np.ndarray) -> ConvexBody2:
    """Apply an orientation-preserving linear map to a body's vertices."""
    return ConvexBody2(body.vertices @ np.asarray(matrix, dtype=float).T, validate=False)


def inflate_hull(body: ConvexBody2, halfwidth: float) -> ConvexBody2:
    """Replace a degenerate (point/segment/zero-area) hull by its Minkowski
    sum with a ``halfwidth`` square so downstream sampling is well posed."""
    if body.n_vertices >= 3 and body.area > _DEGENERATE_AREA:
        return body
    h = float(halfwidth)
    if h <= 0:
        raise ValueError("halfwidth must be positive")
    square = np.array([[-h, -h], [h, -h], [h, h], [-h, h]])
    pts = (body.vertices[:, None, :] + square[None, :, :]).reshape(-1, 2)
    return convex_hull(pts)


def inflate_interval(interval: Interval1, halfwidth: float) -> Interval1:
    """Widen an interval to at least 2*halfwidth, keeping its midpoint."""
    if interval.width >= 2 * halfwidth:
        return interval
    return Interval1(interval.mid - halfwidth, interval.mid + halfwidth)
