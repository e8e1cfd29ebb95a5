"""Convex quadratic programming by a primal-dual interior-point method.

Solves  min 0.5 x'Qx + c'x  subject to  A_eq x = b_eq,  A_in x <= b_in,
lb <= x <= ub, with Q symmetric positive semidefinite.  The algorithm is
Mehrotra's predictor-corrector: bounds are folded into the inequality
block, the data is Ruiz-equilibrated, and each iteration factorizes the
regularized KKT system

    [Q + dI     A'        G'    ] [dx]
    [A         -dI        0     ] [dy]  = rhs
    [G          0    -(S/Z + dI)] [dz]

once, reusing the factorization for the affine and corrector solves.
Multipliers follow the Lagrangian L = f + y'(A x - b) + z'(G x - h) with
z >= 0, so at a minimum  Qx + c + A'y + G'z = 0.  Residuals are reported
in the original (unscaled) data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

__all__ = ["QpProblem", "QpResult", "solve_qp", "dump_problem"]

_RUIZ_ITERS = 10
_REG = 1e-9
_FRACTION_TO_BOUNDARY = 0.995
_DIVERGENCE_CAP = 1e12


def _as_sparse(M, shape) -> sp.csr_matrix:
    if M is None:
        return sp.csr_matrix(shape)
    if sp.issparse(M):
        return M.tocsr().astype(float)
    return sp.csr_matrix(np.atleast_2d(np.asarray(M, dtype=float)))


@dataclass
class QpProblem:
    """Immutable problem data; validates shapes, symmetry, and Q's PSD-ness."""

    Q: sp.csr_matrix
    c: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_in: sp.csr_matrix
    b_in: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    var_names: list[str] = field(default_factory=list)
    eq_names: list[str] = field(default_factory=list)
    in_names: list[str] = field(default_factory=list)

    def __init__(self, Q, c, A_eq=None, b_eq=None, A_in=None, b_in=None,
                 lb=None, ub=None, var_names=None, eq_names=None, in_names=None):
        c = np.asarray(c, dtype=float).ravel()
        n = len(c)
        self.c = c
        self.Q = _as_sparse(Q, (n, n))
        if self.Q.shape != (n, n):
            raise ValueError(f"Q must be {n}x{n}, got {self.Q.shape}")
        asym = abs(self.Q - self.Q.T)
        qmax = abs(self.Q).max() if self.Q.nnz else 0.0
        if asym.nnz and asym.max() > 1e-12 * max(1.0, qmax):
            raise ValueError("Q must be symmetric")
        dense_q = self.Q.toarray()
        shift = 1e-10 * max(1.0, float(np.abs(dense_q).max(initial=0.0)))
        try:
            np.linalg.cholesky(dense_q + shift * np.eye(n))
        except np.linalg.LinAlgError:
            raise ValueError("Q must be positive semidefinite") from None

        self.b_eq = np.asarray([] if b_eq is None else b_eq, dtype=float).ravel()
        self.A_eq = _as_sparse(A_eq, (len(self.b_eq), n))
        self.b_in = np.asarray([] if b_in is None else b_in, dtype=float).ravel()
        self.A_in = _as_sparse(A_in, (len(self.b_in), n))
        if self.A_eq.shape != (len(self.b_eq), n):
            raise ValueError("A_eq/b_eq dimensions inconsistent")
        if self.A_in.shape != (len(self.b_in), n):
            raise ValueError("A_in/b_in dimensions inconsistent")
        self.lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float).ravel()
        self.ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float).ravel()
        if len(self.lb) != n or len(self.ub) != n:
            raise ValueError("bounds must match variable count")
        if np.any(self.lb > self.ub):
            j = int(np.argmax(self.lb > self.ub))
            raise ValueError(f"lb > ub for variable {j}")
        self.var_names = list(var_names) if var_names else [f"x{i}" for i in range(n)]
        self.eq_names = list(eq_names) if eq_names else [f"eq{i}" for i in range(len(self.b_eq))]
        self.in_names = list(in_names) if in_names else [f"in{i}" for i in range(len(self.b_in))]
        if len(self.var_names) != n or len(self.eq_names) != len(self.b_eq) or len(self.in_names) != len(self.b_in):
            raise ValueError("name table lengths must match dimensions")

    @property
    def n(self) -> int:
        return len(self.c)

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.Q @ x) + self.c @ x)


@dataclass(frozen=True)
class QpResult:
    status: str  # optimal | infeasible | iteration-limit
    x: np.ndarray
    objective: float
    y_eq: np.ndarray
    z_in: np.ndarray
    z_lb: np.ndarray
    z_ub: np.ndarray
    primal_residual: float
    dual_residual: float
    comp_residual: float
    iterations: int
    most_violated: list[tuple[str, float]]


def _ruiz_equilibrate(Q, A, G):
    """Symmetric Ruiz scaling of [[Q, K'], [K, 0]] with K = [A; G].

    Returns diagonal scalings (d for variables, e_a and e_g for constraint
    rows) such that the scaled blocks are D Q D, Ea A D, Eg G D.
    """
    n = Q.shape[0]
    me, mi = A.shape[0], G.shape[0]
    d = np.ones(n)
    ea = np.ones(me)
    eg = np.ones(mi)
    Qa, Aa, Ga = abs(Q.copy()), abs(A.copy()), abs(G.copy())
    for _ in range(_RUIZ_ITERS):
        col = np.maximum(
            Qa.max(axis=0).toarray().ravel() if Qa.nnz else np.zeros(n),
            np.maximum(
                Aa.max(axis=0).toarray().ravel() if Aa.nnz else np.zeros(n),
                Ga.max(axis=0).toarray().ravel() if Ga.nnz else np.zeros(n),
            ),
        )
        row_a = Aa.max(axis=1).toarray().ravel() if Aa.nnz else np.zeros(me)
        row_g = Ga.max(axis=1).toarray().ravel() if Ga.nnz else np.zeros(mi)
        sc = 1.0 / np.sqrt(np.where(col > 0, col, 1.0))
        sa = 1.0 / np.sqrt(np.where(row_a > 0, row_a, 1.0))
        sg = 1.0 / np.sqrt(np.where(row_g > 0, row_g, 1.0))
        d *= sc
        ea *= sa
        eg *= sg
        Dc = sp.diags(sc)
        Qa = sp.diags(sc) @ Qa @ Dc
        Aa = sp.diags(sa) @ Aa @ Dc
        Ga = sp.diags(sg) @ Ga @ Dc
    return d, ea, eg


def _fold_constraints(p: QpProblem):
    """Stack user inequalities and finite bounds into G x <= h.

    Variables with lb == ub become extra equality rows (a zero-width box
    has no interior for the barrier).  Returns (A, b, G, h, layout) where
    layout maps G rows back to (kind, index).
    """
    n = p.n
    fixed = p.lb == p.ub
    eq_blocks = [p.A_eq]
    beq_blocks = [p.b_eq]
    if fixed.any():
        idx = np.flatnonzero(fixed)
        E = sp.csr_matrix((np.ones(len(idx)), (np.arange(len(idx)), idx)), shape=(len(idx), n))
        eq_blocks.append(E)
        beq_blocks.append(p.lb[idx])
    A = sp.vstack(eq_blocks).tocsr()
    b = np.concatenate(beq_blocks)

    g_blocks = [p.A_in]
    h_blocks = [p.b_in]
    layout: list[tuple[str, int]] = [("in", i) for i in range(len(p.b_in))]
    ub_idx = np.flatnonzero(np.isfinite(p.ub) & ~fixed)
    if len(ub_idx):
        U = sp.csr_matrix((np.ones(len(ub_idx)), (np.arange(len(ub_idx)), ub_idx)), shape=(len(ub_idx), n))
        g_blocks.append(U)
        h_blocks.append(p.ub[ub_idx])
        layout += [("ub", int(j)) for j in ub_idx]
    lb_idx = np.flatnonzero(np.isfinite(p.lb) & ~fixed)
    if len(lb_idx):
        L = sp.csr_matrix((-np.ones(len(lb_idx)), (np.arange(len(lb_idx)), lb_idx)), shape=(len(lb_idx), n))
        g_blocks.append(L)
        h_blocks.append(-p.lb[lb_idx])
        layout += [("lb", int(j)) for j in lb_idx]
    G = sp.vstack(g_blocks).tocsr()
    h = np.concatenate(h_blocks)
    n_fixed_eq = int(fixed.sum())
    return A, b, G, h, layout, n_fixed_eq


def _unscaled_residuals(p: QpProblem, x, y, z_in, z_lb, z_ub):
    r_d = p.Q @ x + p.c
    if len(p.b_eq):
        r_d = r_d + p.A_eq.T @ y
    if len(p.b_in):
        r_d = r_d + p.A_in.T @ z_in
    r_d = r_d + z_ub - z_lb
    dual = float(np.max(np.abs(r_d))) if len(r_d) else 0.0

    pr = 0.0
    if len(p.b_eq):
        pr = float(np.max(np.abs(p.A_eq @ x - p.b_eq)))
    if len(p.b_in):
        pr = max(pr, float(np.max(np.maximum(p.A_in @ x - p.b_in, 0.0))))
    finite_ub = np.isfinite(p.ub)
    finite_lb = np.isfinite(p.lb)
    if finite_ub.any():
        pr = max(pr, float(np.max(np.maximum(x[finite_ub] - p.ub[finite_ub], 0.0))))
    if finite_lb.any():
        pr = max(pr, float(np.max(np.maximum(p.lb[finite_lb] - x[finite_lb], 0.0))))

    comp = 0.0
    if len(p.b_in):
        comp = float(np.max(np.abs(z_in * (p.b_in - p.A_in @ x))))
    if finite_ub.any():
        comp = max(comp, float(np.max(np.abs(z_ub[finite_ub] * (p.ub[finite_ub] - x[finite_ub])))))
    if finite_lb.any():
        comp = max(comp, float(np.max(np.abs(z_lb[finite_lb] * (x[finite_lb] - p.lb[finite_lb])))))
    return pr, dual, comp


def _violation_report(p: QpProblem, x, k=10):
    entries = []
    if len(p.b_eq):
        r = p.A_eq @ x - p.b_eq
        entries += [(p.eq_names[i], abs(float(v))) for i, v in enumerate(r)]
    if len(p.b_in):
        r = p.A_in @ x - p.b_in
        entries += [(p.in_names[i], float(v)) for i, v in enumerate(r) if v > 0]
    for j in range(p.n):
        if np.isfinite(p.ub[j]) and x[j] > p.ub[j]:
            entries.append((f"{p.var_names[j]}<=ub", float(x[j] - p.ub[j])))
        if np.isfinite(p.lb[j]) and x[j] < p.lb[j]:
            entries.append((f"{p.var_names[j]}>=lb", float(p.lb[j] - x[j])))
    entries.sort(key=lambda t: -t[1])
    return entries[:k]


def solve_qp(p: QpProblem, tol: float = 1e-6, max_iter: int = 200) -> QpResult:
    """Mehrotra predictor-corrector solve of a QpProblem."""
    n = p.n
    A, b, G, h, layout, n_fixed = _fold_constraints(p)
    me, mi = A.shape[0], G.shape[0]

    d, ea, eg = _ruiz_equilibrate(p.Q, A, G)
    Dv = sp.diags(d)
    Qs = (Dv @ p.Q @ Dv).tocsr()
    As = (sp.diags(ea) @ A @ Dv).tocsr()
    Gs = (sp.diags(eg) @ G @ Dv).tocsr()
    cs = d * p.c
    bs = ea * b
    hs = eg * h

    def finish(x_s, y_s, z_s, iters, status_hint=None):
        x = d * x_s
        y_full = ea * y_s if me else np.zeros(0)
        y = y_full[: len(p.b_eq)]
        z_full = eg * z_s if mi else np.zeros(0)
        z_in = np.zeros(len(p.b_in))
        z_lb = np.zeros(n)
        z_ub = np.zeros(n)
        for row, (kind, idx) in enumerate(layout):
            if kind == "in":
                z_in[idx] = z_full[row]
            elif kind == "ub":
                z_ub[idx] = z_full[row]
            else:
                z_lb[idx] = z_full[row]
        # multipliers of folded lb==ub equalities act as bound multipliers
        if n_fixed:
            fixed_idx = np.flatnonzero(p.lb == p.ub)
            for k_row, j in enumerate(fixed_idx):
                mult = y_full[len(p.b_eq) + k_row]
                if mult >= 0:
                    z_ub[j] += mult
                else:
                    z_lb[j] -= mult
        pr, dr, comp = _unscaled_residuals(p, x, y, z_in, z_lb, z_ub)
        scale_p = 1.0 + max(
            float(np.max(np.abs(b))) if len(b) else 0.0,
            float(np.max(np.abs(h))) if len(h) else 0.0,
        )
        scale_d = 1.0 + (float(np.max(np.abs(p.c))) if len(p.c) else 0.0)
        ok = pr <= tol * scale_p and dr <= tol * scale_d and comp <= tol * scale_p * scale_d
        status = "optimal" if ok else (status_hint or "iteration-limit")
        return QpResult(
            status=status,
            x=x,
            objective=p.objective(x),
            y_eq=y,
            z_in=z_in,
            z_lb=z_lb,
            z_ub=z_ub,
            primal_residual=pr,
            dual_residual=dr,
            comp_residual=comp,
            iterations=iters,
            most_violated=_violation_report(p, x) if not ok else [],
        )

    if mi == 0:
        # pure equality QP: one regularized KKT solve
        K = sp.bmat(
            [[Qs + _REG * sp.eye(n), As.T if me else None],
             [As if me else None, -_REG * sp.eye(me) if me else None]],
            format="csc",
        )
        rhs = np.concatenate([-cs, bs])
        sol = splu(K).solve(rhs)
        # an unmet residual here means the equalities are inconsistent
        return finish(sol[:n], sol[n:], np.zeros(0), 1, status_hint="infeasible")

    # starting point (Mehrotra): one Newton-like solve with unit slack
    # weights gives primal and dual estimates, then both are shifted into
    # the strict interior proportionally to the initial complementarity
    K0 = sp.bmat(
        [
            [Qs + sp.eye(n), As.T if me else None, Gs.T],
            [As if me else None, -_REG * sp.eye(me) if me else None, None],
            [Gs, None, -sp.eye(mi)],
        ],
        format="csc",
    )
    sol0 = splu(K0).solve(np.concatenate([-cs, bs, hs]))
    x = sol0[:n]
    y = sol0[n : n + me]
    z_hat = -sol0[n + me :]
    s_hat = hs - Gs @ x
    dp_shift = max(0.0, -1.5 * float(s_hat.min()))
    dd_shift = max(0.0, -1.5 * float(z_hat.min()))
    s = s_hat + dp_shift
    z = z_hat + dd_shift
    dot = float(s @ z)
    s = s + (0.5 * dot / max(float(z.sum()), 1e-10) + 1.0)
    z = z + (0.5 * dot / max(float(s.sum()), 1e-10) + 1.0)

    def kkt_solve(lu, K, r_d, r_p, r_g, r_c):
        rhs = np.concatenate([-r_d, -r_p, -r_g + r_c / z])
        sol = lu.solve(rhs)
        sol += lu.solve(rhs - K @ sol)  # one round of iterative refinement
        dx = sol[:n]
        dy = sol[n : n + me]
        dz = sol[n + me :]
        ds = -r_g - Gs @ dx
        return dx, dy, dz, ds

    status_hint = None
    it = 0
    for it in range(1, max_iter + 1):
        r_d = Qs @ x + cs + (As.T @ y if me else 0.0) + Gs.T @ z
        r_p = As @ x - bs if me else np.zeros(0)
        r_g = Gs @ x + s - hs
        mu = float(s @ z) / mi

        # scaled convergence probe (cheap); exact unscaled check in finish()
        if (
            mu <= 0.1 * tol
            and (not me or np.max(np.abs(r_p)) <= 0.1 * tol * (1 + np.max(np.abs(bs))))
            and np.max(np.abs(r_g)) <= 0.1 * tol * (1 + np.max(np.abs(hs)))
            and np.max(np.abs(r_d)) <= 0.1 * tol * (1 + np.max(np.abs(cs)))
        ):
            res = finish(x, y, z, it)
            if res.status == "optimal":
                return res

        if not np.all(np.isfinite(x)) or float(np.max(np.abs(z))) > _DIVERGENCE_CAP:
            status_hint = "infeasible"
            break

        # diverging multipliers along an approximate Farkas ray
        # (A'y + G'z ~ 0, z >= 0, b'y + h'z < 0) certify primal infeasibility
        norm_dual = max(
            float(np.max(np.abs(y))) if me else 0.0, float(np.max(np.abs(z)))
        )
        if norm_dual > 1e6:
            yn = y / norm_dual if me else y
            zn = z / norm_dual
            ray_res = (As.T @ yn if me else 0.0) + Gs.T @ zn
            ray_gap = (bs @ yn if me else 0.0) + hs @ zn
            rhs_scale = 1.0 + max(
                float(np.max(np.abs(bs))) if me else 0.0,
                float(np.max(np.abs(hs))) if mi else 0.0,
            )
            if float(np.max(np.abs(ray_res))) <= 1e-6 and ray_gap < -1e-8 * rhs_scale:
                status_hint = "infeasible"
                break

        W = s / z + _REG
        K = sp.bmat(
            [
                [Qs + _REG * sp.eye(n), As.T if me else None, Gs.T],
                [As if me else None, -_REG * sp.eye(me) if me else None, None],
                [Gs, None, -sp.diags(W)],
            ],
            format="csc",
        )
        try:
            lu = splu(K)
        except RuntimeError:
            status_hint = "infeasible"
            break

        # predictor
        dx, dy, dz, ds = kkt_solve(lu, K, r_d, r_p, r_g, s * z)
        ap = 1.0 if np.all(ds >= 0) else min(1.0, float(np.min(-s[ds < 0] / ds[ds < 0])))
        ad = 1.0 if np.all(dz >= 0) else min(1.0, float(np.min(-z[dz < 0] / dz[dz < 0])))
        a_aff = min(ap, ad)
        mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / mi
        sigma = min(1.0, (max(mu_aff, 0.0) / mu) ** 3) if mu > 0 else 0.0

        # corrector; Q couples primal and dual blocks, so one common step
        # length keeps the Newton contraction (unequal steps are LP-only)
        r_c = s * z + ds * dz - sigma * mu
        dx, dy, dz, ds = kkt_solve(lu, K, r_d, r_p, r_g, r_c)
        ap = 1.0 if np.all(ds >= 0) else min(1.0, _FRACTION_TO_BOUNDARY * float(np.min(-s[ds < 0] / ds[ds < 0])))
        ad = 1.0 if np.all(dz >= 0) else min(1.0, _FRACTION_TO_BOUNDARY * float(np.min(-z[dz < 0] / dz[dz < 0])))
        alpha = min(ap, ad)

        x = x + alpha * dx
        s = s + alpha * ds
        y = y + alpha * dy
        z = z + alpha * dz

        if alpha < 1e-10:
            status_hint = "infeasible" if mu < 1e-8 else None
            break

    return finish(x, y, z, it, status_hint)


def dump_problem(p: QpProblem, path: str) -> None:
    """Write the problem as a plain-text header plus COO triplets."""
    with open(path, "w") as fh:
        fh.write(f"n {p.n} m_eq {len(p.b_eq)} m_in {len(p.b_in)}\n")
        for tag, M in (("Q", p.Q), ("A_eq", p.A_eq), ("A_in", p.A_in)):
            coo = M.tocoo()
            fh.write(f"{tag} nnz {coo.nnz}\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i} {j} {v!r}\n")
        for tag, v in (("c", p.c), ("b_eq", p.b_eq), ("b_in", p.b_in), ("lb", p.lb), ("ub", p.ub)):
            fh.write(f"{tag} " + " ".join(repr(float(t)) for t in v) + "\n")
