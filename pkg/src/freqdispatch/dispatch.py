"""Assembly and audit of the frequency-secure dispatch QP.

One solve covers Nt look-ahead periods.  Decision variables per period:
generator outputs and reserves, scheduled renewable power and withheld
reserve, virtual inertia and droop of each renewable and storage unit,
storage power, frequency reserve, state of charge and conversion loss,
plus the system-level inertia and damping aggregates they induce.

In `online` mode the inertia/droop variables range over their unit boxes
and the frequency constraints (RoCoF floor, steady-state floor, nadir
half-spaces) are enforced; in `fixed` mode the parameters are pinned to
their fixed values and the frequency constraints are dropped, leaving
the audit to report any resulting violations.

Chance constraints on generator limits, renewable reserves, and line
flows are deterministic at quantiles of the projected forecast mixture,
all precomputed before assembly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import sfr
from .nadir_hull import HalfspaceSet
from .qpsolver import QpProblem, QpResult
from .uncertainty import Gmm, affine_project, quantile

__all__ = [
    "Generator",
    "ResUnit",
    "EssUnit",
    "Line",
    "ProbabilityLevels",
    "DispatchCase",
    "ScenarioSlice",
    "VarIndex",
    "BuiltQp",
    "QuantileTable",
    "DispatchSolution",
    "CostBreakdown",
    "Violation",
    "StructuralInfeasibleError",
    "aggregated_sfr_params",
    "hd_bounds",
    "reformulate_quantiles",
    "build_qp",
    "decode_solution",
    "verify_solution",
    "sharing_diagnostics",
]


class StructuralInfeasibleError(ValueError):
    """Dispatch data cannot balance regardless of the optimizer."""


@dataclass(frozen=True)
class Generator:
    name: str
    a: float  # $/MW^2
    b: float  # $/MW
    c: float  # $
    rgc: float  # reserve cost $/MW
    p_max: float
    p_min: float
    ramp_up: float  # MW per step
    ramp_down: float
    beta: float  # affine participation factor
    H: float  # inertia, s
    inv_R: float  # droop gain 1/R_i, p.u.
    F: float  # turbine fraction, p.u.
    T: float  # governor-turbine time constant, s

    def __post_init__(self):
        if self.p_min > self.p_max:
            raise ValueError(f"{self.name}: p_min > p_max")
        if self.a < 0:
            raise ValueError(f"{self.name}: quadratic fuel coefficient must be >= 0")
        if self.beta < 0:
            raise ValueError(f"{self.name}: beta must be >= 0")
        if min(self.ramp_up, self.ramp_down, self.rgc) < 0:
            raise ValueError(f"{self.name}: ramps and reserve cost must be >= 0")
        if min(self.H, self.inv_R, self.T) <= 0 or self.F < 0:
            raise ValueError(f"{self.name}: frequency parameters out of range")


@dataclass(frozen=True)
class ResUnit:
    name: str
    cap: float  # MW
    h_max: float
    d_max: float
    fixed_h: float
    fixed_d: float

    def __post_init__(self):
        if self.cap <= 0:
            raise ValueError(f"{self.name}: cap must be positive")
        if not (0 <= self.fixed_h <= self.h_max and 0 <= self.fixed_d <= self.d_max):
            raise ValueError(f"{self.name}: fixed inertia/droop outside [0, max]")


@dataclass(frozen=True)
class EssUnit:
    name: str
    eta_c: float
    eta_d: float
    p_max: float
    e_min: float
    e_max: float
    e_init: float
    h_max: float
    d_max: float
    fixed_h: float
    fixed_d: float
    dt_pfr: float  # hours of primary-frequency support the floor must hold

    def __post_init__(self):
        if not (0 < self.eta_c <= 1 and 0 < self.eta_d <= 1):
            raise ValueError(f"{self.name}: efficiencies must lie in (0, 1]")
        if self.p_max <= 0:
            raise ValueError(f"{self.name}: p_max must be positive")
        if self.e_min < self.p_max * self.dt_pfr:
            raise ValueError(
                f"{self.name}: e_min must cover p_max*dt_pfr = {self.p_max * self.dt_pfr}"
            )
        if not self.e_min <= self.e_init <= self.e_max:
            raise ValueError(f"{self.name}: e_init outside [e_min, e_max]")
        if not (0 <= self.fixed_h <= self.h_max and 0 <= self.fixed_d <= self.d_max):
            raise ValueError(f"{self.name}: fixed inertia/droop outside [0, max]")


@dataclass(frozen=True)
class Line:
    name: str
    limit: float  # MW
    ptdf_gen: np.ndarray
    ptdf_res: np.ndarray
    ptdf_ess: np.ndarray
    ptdf_load: np.ndarray

    def __post_init__(self):
        for tag in ("ptdf_gen", "ptdf_res", "ptdf_ess", "ptdf_load"):
            arr = np.asarray(getattr(self, tag), dtype=float)
            object.__setattr__(self, tag, arr)
            if arr.size and np.max(np.abs(arr)) > 1.0 + 1e-9:
                raise ValueError(f"{self.name}: |{tag}| must not exceed 1")
        if self.limit <= 0:
            raise ValueError(f"{self.name}: limit must be positive")


@dataclass(frozen=True)
class ProbabilityLevels:
    """Allowable violation probabilities of the chance constraints."""

    gen_up: float = 0.05
    gen_down: float = 0.05
    res_reserve: float = 0.05
    line_plus: float = 0.05
    line_minus: float = 0.05

    def __post_init__(self):
        for name in ("gen_up", "gen_down", "res_reserve", "line_plus", "line_minus"):
            v = getattr(self, name)
            if not 0.0 < v < 0.5:
                raise ValueError(f"probability level {name}={v} must lie in (0, 0.5)")


@dataclass(frozen=True)
class DispatchCase:
    name: str
    p_base: float  # MVA
    d0: float  # load damping, p.u.
    generators: tuple[Generator, ...]
    res_units: tuple[ResUnit, ...]
    ess_units: tuple[EssUnit, ...]
    load_names: tuple[str, ...]
    lines: tuple[Line, ...]
    limits: sfr.FrequencyLimits
    alphas: ProbabilityLevels = ProbabilityLevels()
    kappa: float = 0.15  # disturbance fraction of current load
    rwc: float = 100.0  # renewable reserve cost scale, $/MW
    rec: float = 10.0  # storage reserve cost scale, $/MW
    dt_hours: float = 0.25

    def __post_init__(self):
        if self.p_base <= 0 or self.d0 < 0:
            raise ValueError("p_base must be positive and d0 nonnegative")
        if self.kappa < 0 or self.dt_hours <= 0:
            raise ValueError("kappa must be >= 0 and dt_hours > 0")
        if self.rwc <= 0 or self.rec <= 0:
            raise ValueError("reserve cost scales must be positive")
        betas = sum(g.beta for g in self.generators)
        if abs(betas - 1.0) > 1e-9:
            raise ValueError(
                f"participation factors must sum to 1 (got {betas}); renormalize first"
            )
        for line in self.lines:
            if (
                len(line.ptdf_gen) != len(self.generators)
                or len(line.ptdf_res) != len(self.res_units)
                or len(line.ptdf_ess) != len(self.ess_units)
                or len(line.ptdf_load) != len(self.load_names)
            ):
                raise ValueError(f"{line.name}: PTDF lengths do not match unit lists")
        # reserve-cost ordering: storage reserve must undercut renewable
        # reserve for every forecast level (forecast <= cap)
        for j in self.res_units:
            for k in self.ess_units:
                if self.rwc / j.cap <= self.rec / k.p_max:
                    raise ValueError(
                        f"reserve cost ordering violated: rwc/{j.name}.cap <= "
                        f"rec/{k.name}.p_max; storage must be the cheaper reserve"
                    )

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def n_res(self) -> int:
        return len(self.res_units)

    @property
    def n_ess(self) -> int:
        return len(self.ess_units)


@dataclass(frozen=True)
class ScenarioSlice:
    """Per-period data for one solve window: loads, forecasts, uncertainty."""

    loads: np.ndarray  # (Nt, Nd) MW
    w_fore: np.ndarray  # (Nt, Nw) MW
    gmms: tuple[Gmm, ...]  # one joint mixture per period, dim Nw
    dP: np.ndarray  # (Nt,) per-unit disturbance magnitudes

    def __post_init__(self):
        loads = np.asarray(self.loads, dtype=float)
        w_fore = np.asarray(self.w_fore, dtype=float)
        dP = np.asarray(self.dP, dtype=float)
        object.__setattr__(self, "loads", loads)
        object.__setattr__(self, "w_fore", w_fore)
        object.__setattr__(self, "dP", dP)
        nt = loads.shape[0]
        if w_fore.shape[0] != nt or len(self.gmms) != nt or dP.shape != (nt,):
            raise ValueError("slice arrays must agree on the number of periods")
        if w_fore.size and np.any(w_fore <= 0):
            raise ValueError("forecasts must be strictly positive")

    @property
    def n_periods(self) -> int:
        return self.loads.shape[0]


def aggregated_sfr_params(case: DispatchCase) -> tuple[float, float, float, float]:
    """Thermal-side aggregates (H_thermal, R, F, T) on the system base.

    T is the capacity-weighted mean of the generator time constants, which
    the single-machine aggregation assumes common.
    """
    pmax = np.array([g.p_max for g in case.generators])
    h = float(np.sum([g.H * g.p_max for g in case.generators]) / case.p_base)
    r = float(np.sum([g.inv_R * g.p_max for g in case.generators]) / case.p_base)
    f = float(np.sum([g.F * g.inv_R * g.p_max for g in case.generators]) / case.p_base)
    t = float(np.sum([g.T * g.p_max for g in case.generators]) / pmax.sum())
    return h, r, f, t


def hd_bounds(case: DispatchCase) -> tuple[tuple[float, float], tuple[float, float]]:
    """(H, D) box for the nadir hull: zero to maximal converter support."""
    h_th, _, _, _ = aggregated_sfr_params(case)
    h_add = (
        sum(r.h_max * r.cap for r in case.res_units)
        + sum(e.h_max * e.p_max for e in case.ess_units)
    ) / case.p_base
    d_add = (
        sum(r.d_max * r.cap for r in case.res_units)
        + sum(e.d_max * e.p_max for e in case.ess_units)
    ) / case.p_base
    return (h_th, h_th + h_add), (case.d0, case.d0 + d_add)


@dataclass(frozen=True)
class QuantileTable:
    """Chance-constraint right-hand sides for one period."""

    sum_lo: float  # Q(sum W | alpha_gen_up)
    sum_hi: float  # Q(sum W | 1 - alpha_gen_down)
    res_lo: np.ndarray  # Q(W_j | alpha_res_reserve), shape (Nw,)
    line_plus: np.ndarray  # Q(sum s_aff W | 1 - alpha_line_plus), shape (Nl,)
    line_minus: np.ndarray  # Q(-sum s_aff W | 1 - alpha_line_minus), shape (Nl,)


def _line_affine_ptdf(case: DispatchCase, line: Line) -> tuple[np.ndarray, float]:
    m = float(np.sum(line.ptdf_gen * np.array([g.beta for g in case.generators])))
    return line.ptdf_res - m, m


def reformulate_quantiles(case: DispatchCase, sl: ScenarioSlice) -> list[QuantileTable]:
    """Evaluate every chance-constraint quantile ahead of QP assembly."""
    nw = case.n_res
    nl = len(case.lines)
    if nw == 0:
        # no renewable uncertainty: every projection is a point mass at 0
        trivial = QuantileTable(
            sum_lo=0.0, sum_hi=0.0, res_lo=np.zeros(0),
            line_plus=np.zeros(nl), line_minus=np.zeros(nl),
        )
        return [trivial] * sl.n_periods
    ones = np.ones(nw)
    tables = []
    for t in range(sl.n_periods):
        g = sl.gmms[t]
        if g.dim != nw:
            raise ValueError(f"period {t}: mixture dimension {g.dim} != {nw} units")
        sum_proj = affine_project(g, ones)
        sum_lo = quantile(sum_proj, case.alphas.gen_up)
        sum_hi = quantile(sum_proj, 1.0 - case.alphas.gen_down)
        res_lo = np.array(
            [
                quantile(affine_project(g, np.eye(nw)[j]), case.alphas.res_reserve)
                for j in range(nw)
            ]
        )
        lp, lm = [], []
        for line in case.lines:
            s_aff, _ = _line_affine_ptdf(case, line)
            proj = affine_project(g, s_aff)
            lp.append(quantile(proj, 1.0 - case.alphas.line_plus))
            neg = affine_project(g, -s_aff)
            lm.append(quantile(neg, 1.0 - case.alphas.line_minus))
        tables.append(
            QuantileTable(
                sum_lo=sum_lo,
                sum_hi=sum_hi,
                res_lo=res_lo,
                line_plus=np.array(lp),
                line_minus=np.array(lm),
            )
        )
    return tables


class VarIndex:
    """Column layout of the stacked per-period decision vector."""

    def __init__(self, nt: int, ng: int, nw: int, ne: int):
        self.nt, self.ng, self.nw, self.ne = nt, ng, nw, ne
        self.stride = 2 * ng + 4 * nw + 6 * ne + 2
        self.n = nt * self.stride

    def P(self, t, i):
        return t * self.stride + i

    def Rg(self, t, i):
        return t * self.stride + self.ng + i

    def Wsche(self, t, j):
        return t * self.stride + 2 * self.ng + j

    def Rw(self, t, j):
        return t * self.stride + 2 * self.ng + self.nw + j

    def Hres(self, t, j):
        return t * self.stride + 2 * self.ng + 2 * self.nw + j

    def Dres(self, t, j):
        return t * self.stride + 2 * self.ng + 3 * self.nw + j

    def Pe(self, t, k):
        return t * self.stride + 2 * self.ng + 4 * self.nw + k

    def Re(self, t, k):
        return t * self.stride + 2 * self.ng + 4 * self.nw + self.ne + k

    def E(self, t, k):
        return t * self.stride + 2 * self.ng + 4 * self.nw + 2 * self.ne + k

    def Loss(self, t, k):
        return t * self.stride + 2 * self.ng + 4 * self.nw + 3 * self.ne + k

    def Hess(self, t, k):
        return t * self.stride + 2 * self.ng + 4 * self.nw + 4 * self.ne + k

    def Dess(self, t, k):
        return t * self.stride + 2 * self.ng + 4 * self.nw + 5 * self.ne + k

    def Hsys(self, t):
        return t * self.stride + 2 * self.ng + 4 * self.nw + 6 * self.ne

    def Dsys(self, t):
        return t * self.stride + 2 * self.ng + 4 * self.nw + 6 * self.ne + 1


@dataclass
class BuiltQp:
    problem: QpProblem
    index: VarIndex
    constant_cost: float
    mode: str
    quantiles: list[QuantileTable]


def _structural_checks(case: DispatchCase, sl: ScenarioSlice) -> None:
    gen_max = sum(g.p_max for g in case.generators)
    gen_min = sum(g.p_min for g in case.generators)
    ess_max = sum(e.p_max for e in case.ess_units)
    for t in range(sl.n_periods):
        load = float(sl.loads[t].sum())
        supply = gen_max + float(sl.w_fore[t].sum()) + ess_max
        if supply < load:
            raise StructuralInfeasibleError(
                f"period {t}: total capacity {supply:.1f} MW below load {load:.1f} MW"
            )
        if gen_min - ess_max > load:
            raise StructuralInfeasibleError(
                f"period {t}: minimum generation {gen_min:.1f} MW cannot back down to load {load:.1f} MW"
            )


def build_qp(
    case: DispatchCase,
    sl: ScenarioSlice,
    mode: str,
    cha_sets: list[HalfspaceSet | None] | None = None,
    p_prev: np.ndarray | None = None,
    e_prev: np.ndarray | None = None,
    quantiles: list[QuantileTable] | None = None,
) -> BuiltQp:
    """Assemble the dispatch QP for one solve window.

    cha_sets supplies one nadir half-space set per period (online mode).
    p_prev anchors the first-period ramp constraints; e_prev the storage
    recursion.  Defaults: generators at their economic midpoint, storage
    at its initial charge.
    """
    if mode not in ("online", "fixed"):
        raise ValueError("mode must be 'online' or 'fixed'")
    _structural_checks(case, sl)
    nt, ng, nw, ne = sl.n_periods, case.n_gen, case.n_res, case.n_ess
    nl = len(case.lines)
    if mode == "online":
        if cha_sets is None or len(cha_sets) != nt:
            raise ValueError("online mode needs one half-space set per period")
    if p_prev is None:
        p_prev = np.array([0.5 * (g.p_min + g.p_max) for g in case.generators])
    if e_prev is None:
        e_prev = np.array([e.e_init for e in case.ess_units])
    if quantiles is None:
        quantiles = reformulate_quantiles(case, sl)

    idx = VarIndex(nt, ng, nw, ne)
    n = idx.n
    lims = case.limits
    h_th, r_agg, f_agg, t_agg = aggregated_sfr_params(case)

    q_diag = np.zeros(n)
    c_lin = np.zeros(n)
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    var_names = [""] * n

    eq_r, eq_c, eq_v, eq_rhs, eq_names = [], [], [], [], []
    in_r, in_c, in_v, in_rhs, in_names = [], [], [], [], []

    def add_eq(cols, vals, rhs, name):
        row = len(eq_rhs)
        eq_r.extend([row] * len(cols))
        eq_c.extend(cols)
        eq_v.extend(vals)
        eq_rhs.append(rhs)
        eq_names.append(name)

    def add_in(cols, vals, rhs, name):
        row = len(in_rhs)
        in_r.extend([row] * len(cols))
        in_c.extend(cols)
        in_v.extend(vals)
        in_rhs.append(rhs)
        in_names.append(name)

    constant_cost = 0.0
    for t in range(nt):
        qt = quantiles[t]
        load_t = float(sl.loads[t].sum())

        # generators
        for i, g in enumerate(case.generators):
            p, rg = idx.P(t, i), idx.Rg(t, i)
            var_names[p] = f"P[{t},{g.name}]"
            var_names[rg] = f"Rg[{t},{g.name}]"
            q_diag[p] = 2.0 * g.a
            c_lin[p] = g.b
            c_lin[rg] = g.rgc
            constant_cost += g.c
            lb[p], ub[p] = g.p_min, g.p_max
            lb[rg] = g.inv_R * g.p_max * lims.f_ss_lim / lims.f0
            add_in([p, rg], [1.0, 1.0], g.p_max, f"cap[{t},{g.name}]")
            if t == 0:
                add_in([p], [1.0], g.ramp_up + p_prev[i], f"rampup[{t},{g.name}]")
                add_in([p], [-1.0], g.ramp_down - p_prev[i], f"rampdn[{t},{g.name}]")
            else:
                pm = idx.P(t - 1, i)
                add_in([p, pm], [1.0, -1.0], g.ramp_up, f"rampup[{t},{g.name}]")
                add_in([p, pm], [-1.0, 1.0], g.ramp_down, f"rampdn[{t},{g.name}]")
            if g.beta > 0:
                rw_ws = [idx.Rw(t, j) for j in range(nw)] + [idx.Wsche(t, j) for j in range(nw)]
                ones2 = [1.0] * (2 * nw)
                add_in(
                    [p, rg] + rw_ws,
                    [1.0 / g.beta, 1.0 / g.beta] + ones2,
                    qt.sum_lo + g.p_max / g.beta,
                    f"affine_up[{t},{g.name}]",
                )
                add_in(
                    [p] + rw_ws,
                    [-1.0 / g.beta] + [-1.0] * (2 * nw),
                    -qt.sum_hi - g.p_min / g.beta,
                    f"affine_dn[{t},{g.name}]",
                )

        # renewables
        for j, r in enumerate(case.res_units):
            ws, rw = idx.Wsche(t, j), idx.Rw(t, j)
            hj, dj = idx.Hres(t, j), idx.Dres(t, j)
            var_names[ws] = f"Wsche[{t},{r.name}]"
            var_names[rw] = f"Rw[{t},{r.name}]"
            var_names[hj] = f"Hres[{t},{r.name}]"
            var_names[dj] = f"Dres[{t},{r.name}]"
            w_fore = float(sl.w_fore[t, j])
            q_diag[rw] = 2.0 * case.rwc / w_fore
            lb[ws], ub[ws] = 0.0, w_fore
            lb[rw] = 0.0
            if mode == "fixed":
                lb[hj] = ub[hj] = r.fixed_h
                lb[dj] = ub[dj] = r.fixed_d
            else:
                lb[hj], ub[hj] = 0.0, r.h_max
                lb[dj], ub[dj] = 0.0, r.d_max
            add_eq([ws, rw], [1.0, 1.0], w_fore, f"res_split[{t},{r.name}]")
            add_in(
                [ws, dj, hj],
                [1.0, r.cap * lims.f_max_lim / lims.f0, 2.0 * r.cap * lims.rocof_lim / lims.f0],
                float(qt.res_lo[j]),
                f"res_reserve[{t},{r.name}]",
            )

        # storage
        for k, e in enumerate(case.ess_units):
            pe, re_, ee = idx.Pe(t, k), idx.Re(t, k), idx.E(t, k)
            lo, hk, dk = idx.Loss(t, k), idx.Hess(t, k), idx.Dess(t, k)
            var_names[pe] = f"Pe[{t},{e.name}]"
            var_names[re_] = f"Re[{t},{e.name}]"
            var_names[ee] = f"E[{t},{e.name}]"
            var_names[lo] = f"Loss[{t},{e.name}]"
            var_names[hk] = f"Hess[{t},{e.name}]"
            var_names[dk] = f"Dess[{t},{e.name}]"
            q_diag[re_] = 2.0 * case.rec / e.p_max
            c_lin[lo] = 1.0
            lb[pe], ub[pe] = -e.p_max, e.p_max
            lb[re_] = 0.0
            lb[ee], ub[ee] = e.e_min, e.e_max
            lb[lo] = 0.0
            if mode == "fixed":
                lb[hk] = ub[hk] = e.fixed_h
                lb[dk] = ub[dk] = e.fixed_d
            else:
                lb[hk], ub[hk] = 0.0, e.h_max
                lb[dk], ub[dk] = 0.0, e.d_max
            if t == 0:
                add_eq(
                    [ee, pe, lo],
                    [1.0, case.dt_hours, case.dt_hours],
                    float(e_prev[k]),
                    f"soc[{t},{e.name}]",
                )
            else:
                add_eq(
                    [ee, idx.E(t - 1, k), pe, lo],
                    [1.0, -1.0, case.dt_hours, case.dt_hours],
                    0.0,
                    f"soc[{t},{e.name}]",
                )
            add_in([pe, re_], [1.0, 1.0], e.p_max, f"ess_cap[{t},{e.name}]")
            add_in([pe, lo], [1.0 / e.eta_d - 1.0, -1.0], 0.0, f"loss_dis[{t},{e.name}]")
            add_in([pe, lo], [e.eta_c - 1.0, -1.0], 0.0, f"loss_chg[{t},{e.name}]")
            add_in(
                [dk, hk, re_],
                [e.p_max * lims.f_max_lim / lims.f0, 2.0 * e.p_max * lims.rocof_lim / lims.f0, -1.0],
                0.0,
                f"ess_reserve[{t},{e.name}]",
            )

        # power balance
        cols = (
            [idx.P(t, i) for i in range(ng)]
            + [idx.Wsche(t, j) for j in range(nw)]
            + [idx.Pe(t, k) for k in range(ne)]
        )
        add_eq(cols, [1.0] * len(cols), load_t, f"balance[{t}]")

        # system inertia and damping definitions
        hs, ds = idx.Hsys(t), idx.Dsys(t)
        var_names[hs] = f"Hsys[{t}]"
        var_names[ds] = f"Dsys[{t}]"
        lb[hs] = 0.0
        lb[ds] = 0.0
        add_eq(
            [hs]
            + [idx.Hres(t, j) for j in range(nw)]
            + [idx.Hess(t, k) for k in range(ne)],
            [case.p_base]
            + [-r.cap for r in case.res_units]
            + [-e.p_max for e in case.ess_units],
            sum(g.H * g.p_max for g in case.generators),
            f"hsys_def[{t}]",
        )
        add_eq(
            [ds]
            + [idx.Dres(t, j) for j in range(nw)]
            + [idx.Dess(t, k) for k in range(ne)],
            [case.p_base]
            + [-r.cap for r in case.res_units]
            + [-e.p_max for e in case.ess_units],
            case.d0 * case.p_base,
            f"dsys_def[{t}]",
        )

        if mode == "online":
            dp = float(sl.dP[t])
            lb[hs] = max(lb[hs], lims.f0 * dp / (2.0 * lims.rocof_lim))
            lb[ds] = max(lb[ds], lims.f0 * dp / lims.f_ss_lim - r_agg)
            for p_i, (w_h, w_d, b_off) in enumerate(cha_sets[t].coeffs):
                add_in([hs, ds], [-w_h, -w_d], float(b_off), f"nadir[{t},{p_i}]")

        # line flows at quantile security
        for li, line in enumerate(case.lines):
            s_aff, m_l = _line_affine_ptdf(case, line)
            load_inj = float(line.ptdf_load @ sl.loads[t])
            cols_p = [idx.P(t, i) for i in range(ng)]
            cols_rw = [idx.Rw(t, j) for j in range(nw)]
            cols_ws = [idx.Wsche(t, j) for j in range(nw)]
            cols_pe = [idx.Pe(t, k) for k in range(ne)]
            add_in(
                cols_p + cols_rw + cols_ws + cols_pe,
                list(line.ptdf_gen) + list(-s_aff) + [m_l] * nw + list(line.ptdf_ess),
                line.limit - float(qt.line_plus[li]) + load_inj,
                f"flow_up[{t},{line.name}]",
            )
            add_in(
                cols_p + cols_rw + cols_ws + cols_pe,
                list(-line.ptdf_gen) + list(s_aff) + [-m_l] * nw + list(-line.ptdf_ess),
                line.limit - float(qt.line_minus[li]) - load_inj,
                f"flow_dn[{t},{line.name}]",
            )

    A_eq = sp.coo_matrix((eq_v, (eq_r, eq_c)), shape=(len(eq_rhs), n)).tocsr()
    A_in = sp.coo_matrix((in_v, (in_r, in_c)), shape=(len(in_rhs), n)).tocsr()
    problem = QpProblem(
        Q=sp.diags(q_diag).tocsr(),
        c=c_lin,
        A_eq=A_eq,
        b_eq=np.array(eq_rhs),
        A_in=A_in,
        b_in=np.array(in_rhs),
        lb=lb,
        ub=ub,
        var_names=var_names,
        eq_names=eq_names,
        in_names=in_names,
    )
    return BuiltQp(
        problem=problem,
        index=idx,
        constant_cost=constant_cost,
        mode=mode,
        quantiles=quantiles,
    )


@dataclass(frozen=True)
class CostBreakdown:
    fuel: float
    gen_reserve: float
    res_reserve: float
    ess_reserve: float
    ess_loss: float

    @property
    def total(self) -> float:
        return self.fuel + self.gen_reserve + self.res_reserve + self.ess_reserve + self.ess_loss


@dataclass
class DispatchSolution:
    mode: str
    gen_p: np.ndarray  # (Nt, Ng)
    gen_rg: np.ndarray
    res_sched: np.ndarray  # (Nt, Nw)
    res_reserve: np.ndarray
    res_h: np.ndarray
    res_d: np.ndarray
    ess_p: np.ndarray  # (Nt, Ne)
    ess_reserve: np.ndarray
    ess_e: np.ndarray
    ess_loss: np.ndarray
    ess_h: np.ndarray
    ess_d: np.ndarray
    h_sys: np.ndarray  # (Nt,)
    d_sys: np.ndarray
    costs: CostBreakdown
    objective: float

    @property
    def n_periods(self) -> int:
        return self.gen_p.shape[0]

    def curtailment_fraction(self, w_fore: np.ndarray) -> float:
        """Withheld reserve as a fraction of total forecast energy."""
        total_fore = float(np.sum(w_fore))
        return float(np.sum(self.res_reserve)) / total_fore if total_fore else 0.0


def decode_solution(result: QpResult, built: BuiltQp, case: DispatchCase, sl: ScenarioSlice) -> DispatchSolution:
    """Unpack the primal vector and recompute the cost breakdown from data."""
    idx = built.index
    x = result.x
    nt, ng, nw, ne = idx.nt, idx.ng, idx.nw, idx.ne

    def grid(fn, cols):
        return np.array([[x[fn(t, u)] for u in range(cols)] for t in range(nt)]).reshape(nt, cols)

    gen_p = grid(idx.P, ng)
    gen_rg = grid(idx.Rg, ng)
    res_sched = grid(idx.Wsche, nw)
    res_reserve = grid(idx.Rw, nw)
    res_h = grid(idx.Hres, nw)
    res_d = grid(idx.Dres, nw)
    ess_p = grid(idx.Pe, ne)
    ess_reserve = grid(idx.Re, ne)
    ess_e = grid(idx.E, ne)
    ess_loss = grid(idx.Loss, ne)
    ess_h = grid(idx.Hess, ne)
    ess_d = grid(idx.Dess, ne)
    h_sys = np.array([x[idx.Hsys(t)] for t in range(nt)])
    d_sys = np.array([x[idx.Dsys(t)] for t in range(nt)])

    a = np.array([g.a for g in case.generators])
    b = np.array([g.b for g in case.generators])
    cc = np.array([g.c for g in case.generators])
    rgc = np.array([g.rgc for g in case.generators])
    fuel = float(np.sum(a * gen_p**2 + b * gen_p + cc))
    gen_res_cost = float(np.sum(rgc * gen_rg))
    res_res_cost = float(np.sum(case.rwc / sl.w_fore * res_reserve**2))
    rec_k = np.array([case.rec / e.p_max for e in case.ess_units])
    ess_res_cost = float(np.sum(rec_k * ess_reserve**2))
    loss_cost = float(np.sum(ess_loss))
    costs = CostBreakdown(
        fuel=fuel,
        gen_reserve=gen_res_cost,
        res_reserve=res_res_cost,
        ess_reserve=ess_res_cost,
        ess_loss=loss_cost,
    )
    return DispatchSolution(
        mode=built.mode,
        gen_p=gen_p,
        gen_rg=gen_rg,
        res_sched=res_sched,
        res_reserve=res_reserve,
        res_h=res_h,
        res_d=res_d,
        ess_p=ess_p,
        ess_reserve=ess_reserve,
        ess_e=ess_e,
        ess_loss=ess_loss,
        ess_h=ess_h,
        ess_d=ess_d,
        h_sys=h_sys,
        d_sys=d_sys,
        costs=costs,
        objective=result.objective + built.constant_cost,
    )


@dataclass(frozen=True)
class Violation:
    period: int
    name: str
    magnitude: float
    family: str


def verify_solution(
    sol: DispatchSolution,
    case: DispatchCase,
    sl: ScenarioSlice,
    p_prev: np.ndarray | None = None,
    e_prev: np.ndarray | None = None,
    quantiles: list[QuantileTable] | None = None,
    tol: float = 1e-6,
) -> list[Violation]:
    """Re-check every constraint family from raw data, independently.

    The frequency family evaluates the exact closed-form metrics at each
    period's aggregated (H, D), including the original nonlinear nadir
    rather than its half-space surrogate.
    """
    out: list[Violation] = []
    nt = sol.n_periods
    lims = case.limits
    h_th, r_agg, f_agg, t_agg = aggregated_sfr_params(case)
    if p_prev is None:
        p_prev = np.array([0.5 * (g.p_min + g.p_max) for g in case.generators])
    if e_prev is None:
        e_prev = np.array([e.e_init for e in case.ess_units])
    if quantiles is None:
        quantiles = reformulate_quantiles(case, sl)

    def check(period, name, magnitude, family, limit=tol):
        if magnitude > limit:
            out.append(Violation(period, name, float(magnitude), family))

    for t in range(nt):
        qt = quantiles[t]
        load_t = float(sl.loads[t].sum())
        balance = sol.gen_p[t].sum() + sol.res_sched[t].sum() + sol.ess_p[t].sum() - load_t
        check(t, "balance", abs(balance), "balance")

        for i, g in enumerate(case.generators):
            p, rg = sol.gen_p[t, i], sol.gen_rg[t, i]
            check(t, f"cap[{g.name}]", p + rg - g.p_max, "gen")
            check(t, f"pmin[{g.name}]", g.p_min - p, "gen")
            check(t, f"rg_floor[{g.name}]", g.inv_R * g.p_max * lims.f_ss_lim / lims.f0 - rg, "gen")
            prev = p_prev[i] if t == 0 else sol.gen_p[t - 1, i]
            check(t, f"rampup[{g.name}]", p - prev - g.ramp_up, "gen")
            check(t, f"rampdn[{g.name}]", prev - p - g.ramp_down, "gen")
            if g.beta > 0:
                tot = float(np.sum(sol.res_reserve[t]) + np.sum(sol.res_sched[t]))
                check(
                    t,
                    f"affine_up[{g.name}]",
                    (p + rg - g.p_max) / g.beta + tot - qt.sum_lo,
                    "gen",
                )
                check(
                    t,
                    f"affine_dn[{g.name}]",
                    qt.sum_hi - ((p - g.p_min) / g.beta + tot),
                    "gen",
                )

        for j, r in enumerate(case.res_units):
            ws, rw = sol.res_sched[t, j], sol.res_reserve[t, j]
            hj, dj = sol.res_h[t, j], sol.res_d[t, j]
            w_fore = float(sl.w_fore[t, j])
            check(t, f"res_split[{r.name}]", abs(ws + rw - w_fore), "res")
            check(t, f"res_range[{r.name}]", max(-ws, ws - w_fore), "res")
            req = dj * r.cap * lims.f_max_lim / lims.f0 + 2 * hj * r.cap * lims.rocof_lim / lims.f0
            check(t, f"res_reserve[{r.name}]", ws + req - float(qt.res_lo[j]), "res")
            check(t, f"res_hd_box[{r.name}]", max(-hj, hj - r.h_max, -dj, dj - r.d_max), "res")

        for k, e in enumerate(case.ess_units):
            pe, re_, ee = sol.ess_p[t, k], sol.ess_reserve[t, k], sol.ess_e[t, k]
            lo, hk, dk = sol.ess_loss[t, k], sol.ess_h[t, k], sol.ess_d[t, k]
            prev_e = e_prev[k] if t == 0 else sol.ess_e[t - 1, k]
            check(t, f"soc[{e.name}]", abs(ee - prev_e + (pe + lo) * case.dt_hours), "ess")
            check(t, f"soc_range[{e.name}]", max(e.e_min - ee, ee - e.e_max), "ess")
            check(t, f"ess_p_range[{e.name}]", max(-e.p_max - pe, pe - e.p_max), "ess")
            check(t, f"ess_cap[{e.name}]", pe + re_ - e.p_max, "ess")
            loss_d = (1.0 / e.eta_d - 1.0) * pe
            loss_c = (e.eta_c - 1.0) * pe
            check(t, f"loss_floor[{e.name}]", max(loss_d, loss_c) - lo, "ess")
            check(t, f"loss_tight[{e.name}]", abs(lo - max(loss_d, loss_c)), "ess")
            req = dk * e.p_max * lims.f_max_lim / lims.f0 + 2 * hk * e.p_max * lims.rocof_lim / lims.f0
            check(t, f"ess_reserve[{e.name}]", req - re_, "ess")

        for li, line in enumerate(case.lines):
            s_aff, m_l = _line_affine_ptdf(case, line)
            load_inj = float(line.ptdf_load @ sl.loads[t])
            base = (
                float(line.ptdf_gen @ sol.gen_p[t])
                - float(s_aff @ sol.res_reserve[t])
                + m_l * float(np.sum(sol.res_sched[t]))
                + float(line.ptdf_ess @ sol.ess_p[t])
                - load_inj
            )
            check(t, f"flow_up[{line.name}]", base + float(qt.line_plus[li]) - line.limit, "line")
            check(t, f"flow_dn[{line.name}]", -base + float(qt.line_minus[li]) - line.limit, "line")

        # consistency of the aggregates, then the exact frequency audit
        h_def = (
            sum(g.H * g.p_max for g in case.generators)
            + float(np.sum([r.cap * sol.res_h[t, j] for j, r in enumerate(case.res_units)]))
            + float(np.sum([e.p_max * sol.ess_h[t, k] for k, e in enumerate(case.ess_units)]))
        ) / case.p_base
        d_def = case.d0 + (
            float(np.sum([r.cap * sol.res_d[t, j] for j, r in enumerate(case.res_units)]))
            + float(np.sum([e.p_max * sol.ess_d[t, k] for k, e in enumerate(case.ess_units)]))
        ) / case.p_base
        check(t, "hsys_def", abs(sol.h_sys[t] - h_def), "frequency")
        check(t, "dsys_def", abs(sol.d_sys[t] - d_def), "frequency")

        params = sfr.AggregatedSfrParams(H=h_def, D=d_def, R=r_agg, F=f_agg, T=t_agg)
        dp = float(sl.dP[t])
        check(t, "rocof", sfr.rocof_max(params, dp, lims.f0) - lims.rocof_lim, "frequency", limit=1e-9)
        check(t, "steady_state", sfr.delta_f_ss(params, dp, lims.f0) - lims.f_ss_lim, "frequency", limit=1e-9)
        dfmax, _ = sfr.delta_f_nadir(params, dp, lims.f0)
        check(t, "nadir", dfmax - lims.f_max_lim, "frequency", limit=1e-9)
    return out


@dataclass(frozen=True)
class SharingDiagnostics:
    res_ratio_spread: float
    ess_ratio_spread: float
    gen_incremental: np.ndarray  # (Nt, Ng) marginal fuel cost
    res_incremental: np.ndarray  # (Nt, Nw) marginal value of scheduling


def sharing_diagnostics(
    sol: DispatchSolution,
    case: DispatchCase,
    sl: ScenarioSlice,
    quantiles: list[QuantileTable] | None = None,
    atol: float = 1e-6,
) -> SharingDiagnostics:
    """Reserve-sharing uniformity across units with interior allocations.

    A unit is excluded from a period's ratio spread when any of its own
    inequality constraints is active there (schedule at 0 or at forecast,
    reserve requirement tight, capacity tight); the proportional-sharing
    condition only applies to interior units.  The spread is the worst
    relative max-min gap across periods with two or more interior units.
    """
    nt = sol.n_periods
    lims = case.limits
    if quantiles is None:
        quantiles = reformulate_quantiles(case, sl)
    res_spread = 0.0
    ess_spread = 0.0
    for t in range(nt):
        qt = quantiles[t]
        ratios = []
        for j, r in enumerate(case.res_units):
            ws = sol.res_sched[t, j]
            w_fore = float(sl.w_fore[t, j])
            req = (
                sol.res_d[t, j] * r.cap * lims.f_max_lim / lims.f0
                + 2 * sol.res_h[t, j] * r.cap * lims.rocof_lim / lims.f0
            )
            slack = float(qt.res_lo[j]) - (ws + req)
            if ws <= atol or ws >= w_fore - atol or slack <= atol * max(1.0, w_fore):
                continue
            ratios.append(sol.res_reserve[t, j] / w_fore)
        if len(ratios) >= 2:
            mean = np.mean(ratios)
            if mean > 0:
                res_spread = max(res_spread, (max(ratios) - min(ratios)) / mean)
        ratios_e = []
        for k, e in enumerate(case.ess_units):
            re_ = sol.ess_reserve[t, k]
            req = (
                sol.ess_d[t, k] * e.p_max * lims.f_max_lim / lims.f0
                + 2 * sol.ess_h[t, k] * e.p_max * lims.rocof_lim / lims.f0
            )
            if (
                re_ <= atol
                or sol.ess_p[t, k] + re_ >= e.p_max - atol
                or re_ - req <= atol * max(1.0, e.p_max)
            ):
                continue
            ratios_e.append(re_ / e.p_max)
        if len(ratios_e) >= 2:
            mean = np.mean(ratios_e)
            if mean > 0:
                ess_spread = max(ess_spread, (max(ratios_e) - min(ratios_e)) / mean)

    a = np.array([g.a for g in case.generators])
    b = np.array([g.b for g in case.generators])
    gen_inc = 2.0 * a * sol.gen_p + b
    res_inc = -2.0 * (case.rwc / sl.w_fore) * (sl.w_fore - sol.res_sched)
    return SharingDiagnostics(
        res_ratio_spread=res_spread,
        ess_ratio_spread=ess_spread,
        gen_incremental=gen_inc,
        res_incremental=res_inc,
    )
