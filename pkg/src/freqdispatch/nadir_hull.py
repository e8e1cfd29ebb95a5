"""Conservative linearization of the frequency-nadir constraint.

The nadir-feasible region in the (total inertia H, total damping D) plane
is convex, so the convex hull of feasible Monte Carlo samples is an inner
approximation of it.  This module samples the (H, D) box, classifies each
sample with the exact nadir formula, computes the 2-D convex hull with a
quickhull sweep, and emits the hull's edges as half-space constraints

    w_h * H + w_d * D + b >= 0

with unit inward normals.  Any point satisfying all half-spaces is a convex
combination of feasible samples and therefore feasible for the exact
constraint; misclassification is one-sided (feasible points may be rejected,
infeasible ones are never accepted).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .sfr import nadir_deviation

__all__ = [
    "Point2",
    "ConvexPolygon",
    "HalfspaceSet",
    "ChaConfig",
    "BuildMeta",
    "ClassificationReport",
    "EmptyRegionError",
    "DegeneratePolygonError",
    "sample_feasible",
    "quickhull2d",
    "simplify_polygon",
    "polygon_to_halfspaces",
    "classify",
    "classify_many",
    "classification_error",
    "build_nadir_halfspaces",
]

# points closer than this to a hull edge are treated as non-extreme
EDGE_EPS = 1e-12

# inclusive-boundary slack for classification, matches the vertex-on-edge
# residual bound of the emitted half-spaces
BOUNDARY_TOL = 1e-9

# vertices whose removal loses less than this fraction of hull area are
# merged away when building nadir constraints
SIMPLIFY_AREA_TOL = 4e-4


class EmptyRegionError(ValueError):
    """No sampled (H, D) point satisfies the nadir limit."""


class DegeneratePolygonError(ValueError):
    """The hull collapsed to a point or segment."""


@dataclass(frozen=True)
class Point2:
    h: float
    d: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.h) and np.isfinite(self.d)):
            raise ValueError("Point2 coordinates must be finite")


def _as_points_array(points) -> np.ndarray:
    if isinstance(points, np.ndarray):
        pts = np.asarray(points, dtype=float)
    else:
        pts = np.array([(p.h, p.d) if isinstance(p, Point2) else tuple(p) for p in points], dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] == 0:
        raise ValueError("expected a non-empty (n, 2) point collection")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    return pts


@dataclass(frozen=True)
class ConvexPolygon:
    """Counter-clockwise vertex list; degenerate marks point/segment hulls."""

    vertices: np.ndarray
    degenerate: bool = False

    def __post_init__(self) -> None:
        self.vertices.setflags(write=False)
        if not self.degenerate:
            if len(self.vertices) < 3:
                raise DegeneratePolygonError("non-degenerate polygon needs >= 3 vertices")
            if self.signed_area() <= 0:
                raise ValueError("vertices must be in counter-clockwise order")

    def signed_area(self) -> float:
        v = self.vertices
        x, y = v[:, 0], v[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)


@dataclass(frozen=True)
class BuildMeta:
    n_samples: int
    n_feasible: int
    n_hyperplanes: int
    wall_time_s: float


@dataclass(frozen=True)
class HalfspaceSet:
    """Rows (w_h, w_d, b) of constraints w_h*H + w_d*D + b >= 0."""

    coeffs: np.ndarray
    meta: BuildMeta | None = None

    def __post_init__(self) -> None:
        self.coeffs.setflags(write=False)

    def __len__(self) -> int:
        return len(self.coeffs)


@dataclass(frozen=True)
class ChaConfig:
    h_bounds: tuple[float, float]
    d_bounds: tuple[float, float]
    n_samples: int = 50_000
    seed: int = 0
    max_hyperplanes: int = 12

    def __post_init__(self) -> None:
        if self.h_bounds[0] >= self.h_bounds[1] or self.d_bounds[0] >= self.d_bounds[1]:
            raise ValueError("bounds must be ordered (lo, hi)")
        if self.n_samples < 100:
            raise ValueError("n_samples must be at least 100")
        if self.max_hyperplanes < 3:
            raise ValueError("max_hyperplanes must be at least 3")


def sample_points(cfg: ChaConfig) -> np.ndarray:
    """Uniform (H, D) draws; draws are prefix-nested across n_samples."""
    rng = np.random.default_rng(cfg.seed)
    lo = (cfg.h_bounds[0], cfg.d_bounds[0])
    hi = (cfg.h_bounds[1], cfg.d_bounds[1])
    return rng.uniform(lo, hi, size=(cfg.n_samples, 2))


def sample_feasible(cfg: ChaConfig, T: float, R: float, F: float, dP: float, f0: float, f_max_lim: float) -> np.ndarray:
    """Sampled (H, D) points whose exact nadir deviation is within the limit."""
    pts = sample_points(cfg)
    dev = nadir_deviation(pts[:, 0], pts[:, 1], T, R, F, dP, f0)
    feasible = pts[dev <= f_max_lim]
    if len(feasible) == 0:
        raise EmptyRegionError(
            f"no feasible (H, D) sample: nadir limit {f_max_lim} Hz is "
            f"unattainable even at H={cfg.h_bounds[1]}, D={cfg.d_bounds[1]}"
        )
    return feasible


def _hull_side(pts: np.ndarray, idx: np.ndarray, p1: np.ndarray, p2: np.ndarray) -> list[int]:
    """Indices of hull vertices strictly left of p1->p2, ordered p1 to p2."""
    if idx.size == 0:
        return []
    d = p2 - p1
    cross = d[0] * (pts[idx, 1] - p1[1]) - d[1] * (pts[idx, 0] - p1[0])
    far = int(idx[np.argmax(cross)])
    pm = pts[far]

    d1 = pm - p1
    c1 = d1[0] * (pts[idx, 1] - p1[1]) - d1[1] * (pts[idx, 0] - p1[0])
    left1 = idx[c1 > EDGE_EPS * np.hypot(*d1)]
    d2 = p2 - pm
    c2 = d2[0] * (pts[idx, 1] - pm[1]) - d2[1] * (pts[idx, 0] - pm[0])
    left2 = idx[c2 > EDGE_EPS * np.hypot(*d2)]
    return _hull_side(pts, left1, p1, pm) + [far] + _hull_side(pts, left2, pm, p2)


def quickhull2d(points) -> ConvexPolygon:
    """Convex hull of a 2-D point set, counter-clockwise.

    Interior points, duplicates, and points within EDGE_EPS of a hull edge
    are dropped.  Collinear input yields the 2 extreme endpoints flagged
    degenerate; identical input a single vertex.
    """
    pts = _as_points_array(points)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    i_min, i_max = int(order[0]), int(order[-1])
    a, b = pts[i_min], pts[i_max]
    if np.array_equal(a, b):
        return ConvexPolygon(vertices=a.reshape(1, 2).copy(), degenerate=True)

    d = b - a
    scale = np.hypot(*d)
    cross = d[0] * (pts[:, 1] - a[1]) - d[1] * (pts[:, 0] - a[0])
    all_idx = np.arange(len(pts))
    above = all_idx[cross > EDGE_EPS * scale]
    below = all_idx[cross < -EDGE_EPS * scale]
    if above.size == 0 and below.size == 0:
        return ConvexPolygon(vertices=np.vstack([a, b]), degenerate=True)

    upper = _hull_side(pts, above, a, b)
    lower = _hull_side(pts, below, b, a)
    cw = [i_min] + upper + [i_max] + lower
    ccw = [cw[0]] + cw[1:][::-1]
    verts = pts[ccw]
    verts = _drop_collinear(verts)
    return ConvexPolygon(vertices=verts)


def _drop_collinear(verts: np.ndarray) -> np.ndarray:
    """Remove middle vertices of (near-)collinear consecutive triples."""
    keep = np.ones(len(verts), dtype=bool)
    n = len(verts)
    for i in range(n):
        p, q, r = verts[(i - 1) % n], verts[i], verts[(i + 1) % n]
        e = r - p
        cross = e[0] * (q[1] - p[1]) - e[1] * (q[0] - p[0])
        if abs(cross) <= EDGE_EPS * np.hypot(*e):
            keep[i] = False
    return verts[keep] if keep.sum() >= 3 else verts


def simplify_polygon(
    poly: ConvexPolygon,
    max_vertices: int = 12,
    rel_area_tol: float = SIMPLIFY_AREA_TOL,
) -> ConvexPolygon:
    """Reduce vertex count by greedily dropping low-impact vertices.

    Removing a vertex of a convex polygon replaces two edges by the chord
    between its neighbors, which lies inside the polygon, so the result is
    always a subset of the input: the simplification never un-conservatives
    a feasibility hull.  Vertices are removed smallest-lost-triangle first
    until the count is within max_vertices and every remaining vertex costs
    more than rel_area_tol of the polygon area.
    """
    if poly.degenerate:
        return poly
    verts = poly.vertices.copy()
    total = poly.signed_area()
    while len(verts) > 3:
        prev = np.roll(verts, 1, axis=0)
        nxt = np.roll(verts, -1, axis=0)
        lost = 0.5 * np.abs(
            (verts[:, 0] - prev[:, 0]) * (nxt[:, 1] - prev[:, 1])
            - (nxt[:, 0] - prev[:, 0]) * (verts[:, 1] - prev[:, 1])
        )
        i = int(np.argmin(lost))
        if len(verts) > max_vertices or lost[i] <= rel_area_tol * total:
            verts = np.delete(verts, i, axis=0)
        else:
            break
    return ConvexPolygon(vertices=verts)


def polygon_to_halfspaces(poly: ConvexPolygon) -> HalfspaceSet:
    """One half-space per edge with unit inward normal."""
    if poly.degenerate:
        raise DegeneratePolygonError("cannot emit half-spaces for a degenerate hull")
    v = poly.vertices
    w = np.roll(v, -1, axis=0)
    edges = w - v
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    normals = np.column_stack([-edges[:, 1], edges[:, 0]]) / lengths[:, None]
    offsets = -np.sum(normals * v, axis=1)
    return HalfspaceSet(coeffs=np.column_stack([normals, offsets]))


def classify(hs: HalfspaceSet, pt) -> bool:
    """True iff the point satisfies every half-space (boundary inclusive)."""
    p = np.asarray((pt.h, pt.d) if isinstance(pt, Point2) else pt, dtype=float)
    c = hs.coeffs
    return bool(np.all(c[:, 0] * p[0] + c[:, 1] * p[1] + c[:, 2] >= -BOUNDARY_TOL))


def classify_many(hs: HalfspaceSet, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    c = hs.coeffs
    vals = pts[:, 0:1] * c[:, 0] + pts[:, 1:2] * c[:, 1] + c[:, 2]
    return np.all(vals >= -BOUNDARY_TOL, axis=1)


@dataclass(frozen=True)
class ClassificationReport:
    n_test: int
    error_rate: float
    false_safe_count: int
    false_unsafe_count: int


def classification_error(hs: HalfspaceSet, exact_fn, n_test: int, seed: int, h_bounds, d_bounds) -> ClassificationReport:
    """Compare the half-space classifier against the exact feasibility oracle.

    exact_fn(H, D) -> bool array.  false_safe counts points the classifier
    accepts but the oracle rejects; conservativeness means it stays 0.
    """
    rng = np.random.default_rng(seed)
    pts = rng.uniform((h_bounds[0], d_bounds[0]), (h_bounds[1], d_bounds[1]), size=(n_test, 2))
    predicted = classify_many(hs, pts)
    actual = np.asarray(exact_fn(pts[:, 0], pts[:, 1]), dtype=bool)
    false_safe = int(np.sum(predicted & ~actual))
    false_unsafe = int(np.sum(~predicted & actual))
    return ClassificationReport(
        n_test=n_test,
        error_rate=(false_safe + false_unsafe) / n_test,
        false_safe_count=false_safe,
        false_unsafe_count=false_unsafe,
    )


def build_nadir_halfspaces(cfg: ChaConfig, T: float, R: float, F: float, dP: float, f0: float, f_max_lim: float) -> HalfspaceSet:
    """Sample, classify, hull, and emit half-spaces for one nadir constraint."""
    t0 = time.perf_counter()
    feasible = sample_feasible(cfg, T, R, F, dP, f0, f_max_lim)
    poly = quickhull2d(feasible)
    if poly.degenerate:
        raise DegeneratePolygonError(
            "feasible samples are collinear; nadir region has no interior"
        )
    poly = simplify_polygon(poly, max_vertices=cfg.max_hyperplanes)
    hs = polygon_to_halfspaces(poly)
    meta = BuildMeta(
        n_samples=cfg.n_samples,
        n_feasible=len(feasible),
        n_hyperplanes=len(hs),
        wall_time_s=time.perf_counter() - t0,
    )
    return HalfspaceSet(coeffs=hs.coeffs, meta=meta)
