"""Independent brute-force oracles used by the test suite only.

These deliberately avoid the library's own code paths: hulls come from a
gift-wrapping march, quantiles from Monte Carlo or dense grids, and QP
solutions from explicit active-set enumeration of the KKT systems.
"""

import itertools

import numpy as np


def jarvis_hull(points: np.ndarray) -> np.ndarray:
    """Gift-wrapping convex hull, counter-clockwise from the lowest point.

    Collinear boundary points are skipped (ties broken by distance), matching
    the strictly-convex vertex convention.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    start = np.lexsort((pts[:, 1], pts[:, 0]))[0]
    hull = [start]
    current = start
    while True:
        candidate = (current + 1) % n
        for i in range(n):
            if i == current:
                continue
            u = pts[candidate] - pts[current]
            v = pts[i] - pts[current]
            c = u[0] * v[1] - u[1] * v[0]
            if c < 0:
                candidate = i
            elif c == 0:
                d_cand = np.dot(pts[candidate] - pts[current], pts[candidate] - pts[current])
                d_i = np.dot(pts[i] - pts[current], pts[i] - pts[current])
                if d_i > d_cand:
                    candidate = i
        if candidate == start:
            break
        hull.append(candidate)
        current = candidate
    verts = pts[hull]
    # gift wrapping with cross<0 preference walks clockwise; flip to CCW
    x, y = verts[:, 0], verts[:, 1]
    if 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y) < 0:
        verts = np.vstack([verts[:1], verts[1:][::-1]])
    return verts


def halfspace_vertices(coeffs: np.ndarray) -> np.ndarray:
    """Vertices of the bounded intersection of half-spaces w.x + b >= 0.

    Enumerates all boundary-line pairs, keeps intersection points satisfying
    every half-space, and deduplicates.
    """
    verts = []
    m = len(coeffs)
    for i, j in itertools.combinations(range(m), 2):
        A = np.array([coeffs[i, :2], coeffs[j, :2]])
        rhs = -np.array([coeffs[i, 2], coeffs[j, 2]])
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        p = np.linalg.solve(A, rhs)
        if np.all(coeffs[:, 0] * p[0] + coeffs[:, 1] * p[1] + coeffs[:, 2] >= -1e-7):
            verts.append(p)
    verts = np.array(verts)
    keep = []
    for p in verts:
        if not any(np.linalg.norm(p - verts[k]) < 1e-7 for k in keep):
            keep.append(int(np.where((verts == p).all(axis=1))[0][0]))
    return verts[keep]


def match_vertex_sets(a: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> bool:
    """True iff the two vertex sets coincide up to tol (order-free)."""
    if len(a) != len(b):
        return False
    b_used = np.zeros(len(b), dtype=bool)
    for p in a:
        dists = np.linalg.norm(b - p, axis=1)
        dists[b_used] = np.inf
        j = int(np.argmin(dists))
        if dists[j] > tol:
            return False
        b_used[j] = True
    return True


def active_set_qp(Q, c, A_eq, b_eq, G, h):
    """Global QP minimizer by enumerating active sets of G x <= h.

    For each subset of inequality rows treated as equalities, solves the
    KKT system; keeps stationary points that are primal feasible with
    nonnegative inequality multipliers; returns the best (x, objective).
    """
    n = len(c)
    m_eq = 0 if A_eq is None else len(b_eq)
    m_in = 0 if G is None else len(h)
    best_x, best_obj = None, np.inf
    for r in range(min(m_in, n) + 1):
        for active in itertools.combinations(range(m_in), r):
            rows = [] if m_eq == 0 else [A_eq]
            rhs = [] if m_eq == 0 else [b_eq]
            if active:
                rows.append(G[list(active)])
                rhs.append(h[list(active)])
            n_con = m_eq + len(active)
            kkt = np.zeros((n + n_con, n + n_con))
            kkt[:n, :n] = Q
            rvec = np.concatenate([-c] + [np.asarray(v, float) for v in rhs])
            if n_con:
                C = np.vstack(rows)
                kkt[:n, n:] = C.T
                kkt[n:, :n] = C
            try:
                sol = np.linalg.solve(kkt, rvec)
            except np.linalg.LinAlgError:
                continue
            x = sol[:n]
            mult = sol[n + m_eq:]
            if np.any(mult < -1e-9):
                continue
            if m_in and np.any(G @ x - h > 1e-8):
                continue
            if m_eq and np.any(np.abs(A_eq @ x - b_eq) > 1e-8):
                continue
            obj = 0.5 * x @ Q @ x + c @ x
            if obj < best_obj - 1e-12:
                best_obj, best_x = obj, x
    return best_x, best_obj
