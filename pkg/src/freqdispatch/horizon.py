"""Receding-horizon driver.

Every resolve interval the dispatch window is re-solved over the full
look-ahead horizon with fresh forecasts, and only the first commit block
is put into effect; storage state of charge and generator operating
points carry across solve boundaries.  A full day at 15-minute resolution
with hourly re-solves is 24 solves committing 4 periods each.

Two parameter policies are compared: `online` co-optimizes the converter
inertia/droop settings under the frequency constraints, `fixed` pins them
at their static values and drops the frequency constraints, reproducing
the behavior of a dispatch that does not adapt them; the exact-metric
audit then shows where the fixed policy leaves the system insecure.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import sfr
from .dispatch import (
    CostBreakdown,
    DispatchCase,
    DispatchSolution,
    ScenarioSlice,
    Violation,
    aggregated_sfr_params,
    build_qp,
    decode_solution,
    hd_bounds,
    reformulate_quantiles,
    verify_solution,
)
from .nadir_hull import ChaConfig, HalfspaceSet, build_nadir_halfspaces
from .qpsolver import solve_qp
from .uncertainty import Gmm, affine_project

__all__ = [
    "HorizonConfig",
    "ScenarioTimeline",
    "SolveRecord",
    "RunReport",
    "FrequencyRow",
    "ComparisonReport",
    "InfeasibleSolveError",
    "run_rolling",
    "compare_modes",
    "frequency_timeline",
    "reserve_zigzag",
]


def synthesize_timeline(
    case: DispatchCase,
    load_profile: np.ndarray,
    wind_profile: np.ndarray,
    cfg: HorizonConfig,
    sigma_frac: float = 0.06,
    gamma: float = 0.15,
    corr: float = 0.3,
    seed: int = 0,
) -> ScenarioTimeline:
    """Rolling-forecast timeline from a smooth day profile.

    load_profile (P, Nd) and wind_profile (P, Nw) must cover
    day_steps - resolve_every_steps + horizon_steps periods.  Forecast
    means are the profile values; the forecast spread per unit is
    sigma_frac of the window-mean wind, grown by (1 + gamma * tau) with
    lead step tau, so every re-solve sees the near periods more sharply.
    Uncertainty is a two-component mixture with matched mean and variance.
    """
    load_profile = np.asarray(load_profile, dtype=float)
    wind_profile = np.asarray(wind_profile, dtype=float)
    needed = cfg.day_steps - cfg.resolve_every_steps + cfg.horizon_steps
    if len(load_profile) < needed or len(wind_profile) < needed:
        raise ValueError(f"profiles must cover {needed} periods")
    nw = wind_profile.shape[1]
    s_count = cfg.n_solves
    loads = np.empty((s_count, cfg.horizon_steps, load_profile.shape[1]))
    w_fore = np.empty((s_count, cfg.horizon_steps, nw))
    dP = np.empty((s_count, cfg.horizon_steps))
    gmms = []
    for s in range(s_count):
        start = s * cfg.resolve_every_steps
        window = slice(start, start + cfg.horizon_steps)
        loads[s] = load_profile[window]
        w_fore[s] = wind_profile[window]
        dP[s] = case.kappa * load_profile[window].sum(axis=1) / case.p_base
        w_ref = wind_profile[window].mean(axis=0)
        per_solve = []
        for tau in range(cfg.horizon_steps):
            sigma = sigma_frac * (1.0 + gamma * tau) * w_ref
            mu = w_fore[s, tau]
            offset = 0.4 * sigma
            cov = np.empty((nw, nw))
            for a_ in range(nw):
                for b_ in range(nw):
                    cov[a_, b_] = (1.0 if a_ == b_ else corr) * sigma[a_] * sigma[b_]
            comp_cov = (1.0 - 0.16) * cov  # offsets carry 0.16 sigma^2
            per_solve.append(
                Gmm(
                    weights=np.array([0.5, 0.5]),
                    means=np.vstack([mu - offset, mu + offset]),
                    covariances=np.array([comp_cov, comp_cov]),
                )
            )
        gmms.append(tuple(per_solve))
    return ScenarioTimeline(
        loads=loads, w_fore=w_fore, gmms=tuple(gmms), dP=dP, seed=seed
    )


class InfeasibleSolveError(RuntimeError):
    def __init__(self, solve_index: int, detail: str):
        super().__init__(f"solve {solve_index}: {detail}")
        self.solve_index = solve_index
        self.detail = detail


@dataclass(frozen=True)
class HorizonConfig:
    step_minutes: int = 15
    horizon_steps: int = 16
    resolve_every_steps: int = 4
    commit_steps: int = 4
    day_steps: int = 96
    cha_samples: int = 50_000
    seed: int = 0
    qp_tol: float = 1e-8
    threads: int = 1

    def __post_init__(self):
        if not self.commit_steps <= self.resolve_every_steps <= self.horizon_steps:
            raise ValueError("need commit_steps <= resolve_every_steps <= horizon_steps")
        if self.day_steps % self.resolve_every_steps != 0:
            raise ValueError("day_steps must be a multiple of resolve_every_steps")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")

    @property
    def n_solves(self) -> int:
        return self.day_steps // self.resolve_every_steps


@dataclass(frozen=True)
class ScenarioTimeline:
    """Forecast data per (solve instant, lead step).

    loads: (S, H, Nd) MW; w_fore: (S, H, Nw) MW; gmms: S tuples of H joint
    mixtures; dP: (S, H) per-unit disturbance magnitudes; seed: generator
    seed recorded for reproducibility.  Within each solve the forecast
    spread must be nondecreasing in the lead step.
    """

    loads: np.ndarray
    w_fore: np.ndarray
    gmms: tuple[tuple[Gmm, ...], ...]
    dP: np.ndarray
    seed: int = 0

    def __post_init__(self):
        loads = np.asarray(self.loads, dtype=float)
        w_fore = np.asarray(self.w_fore, dtype=float)
        dP = np.asarray(self.dP, dtype=float)
        object.__setattr__(self, "loads", loads)
        object.__setattr__(self, "w_fore", w_fore)
        object.__setattr__(self, "dP", dP)
        if loads.ndim != 3 or w_fore.ndim != 3 or dP.ndim != 2:
            raise ValueError("timeline arrays must be (S, H, ...) shaped")
        s, h = loads.shape[:2]
        if w_fore.shape[:2] != (s, h) or dP.shape != (s, h) or len(self.gmms) != s:
            raise ValueError("timeline arrays must agree on solves and horizon")
        nw = w_fore.shape[2]
        if nw:
            for si, per_solve in enumerate(self.gmms):
                spreads = []
                for g in per_solve:
                    sig2 = [
                        affine_project(g, np.eye(nw)[j]).pooled_sigma() for j in range(nw)
                    ]
                    spreads.append(sig2)
                spreads = np.asarray(spreads)
                if np.any(np.diff(spreads, axis=0) < -1e-9):
                    raise ValueError(
                        f"solve {si}: forecast spread must be nondecreasing in lead step"
                    )

    @property
    def n_solves(self) -> int:
        return self.loads.shape[0]

    @property
    def horizon_steps(self) -> int:
        return self.loads.shape[1]

    def window(self, s: int) -> ScenarioSlice:
        return ScenarioSlice(
            loads=self.loads[s],
            w_fore=self.w_fore[s],
            gmms=self.gmms[s],
            dP=self.dP[s],
        )


@dataclass
class SolveRecord:
    solve_index: int
    start_period: int
    solution: DispatchSolution  # full look-ahead window
    violations: list[Violation]
    wall_time_s: float


@dataclass
class RunReport:
    mode: str
    case_name: str
    seed: int
    solve_records: list[SolveRecord]
    committed: DispatchSolution  # concatenated commit blocks
    committed_w_fore: np.ndarray  # (day_steps, Nw)
    committed_dP: np.ndarray  # (day_steps,)
    costs: CostBreakdown  # committed periods only
    curtailment_pct: float
    audit_violations: list[Violation]  # committed-period audit, re-indexed

    @property
    def n_committed(self) -> int:
        return self.committed.n_periods


def _committed_costs(case: DispatchCase, sol: DispatchSolution, w_fore: np.ndarray) -> CostBreakdown:
    a = np.array([g.a for g in case.generators])
    b = np.array([g.b for g in case.generators])
    cc = np.array([g.c for g in case.generators])
    rgc = np.array([g.rgc for g in case.generators])
    rec_k = np.array([case.rec / e.p_max for e in case.ess_units])
    return CostBreakdown(
        fuel=float(np.sum(a * sol.gen_p**2 + b * sol.gen_p + cc)),
        gen_reserve=float(np.sum(rgc * sol.gen_rg)),
        res_reserve=float(np.sum(case.rwc / w_fore * sol.res_reserve**2)),
        ess_reserve=float(np.sum(rec_k * sol.ess_reserve**2)),
        ess_loss=float(np.sum(sol.ess_loss)),
    )


def _concat_solutions(mode: str, case: DispatchCase, parts: list[DispatchSolution], w_fores: list[np.ndarray]) -> DispatchSolution:
    stack = lambda attr: np.concatenate([getattr(p, attr) for p in parts], axis=0)  # noqa: E731
    w_fore = np.concatenate(w_fores, axis=0)
    merged = DispatchSolution(
        mode=mode,
        gen_p=stack("gen_p"),
        gen_rg=stack("gen_rg"),
        res_sched=stack("res_sched"),
        res_reserve=stack("res_reserve"),
        res_h=stack("res_h"),
        res_d=stack("res_d"),
        ess_p=stack("ess_p"),
        ess_reserve=stack("ess_reserve"),
        ess_e=stack("ess_e"),
        ess_loss=stack("ess_loss"),
        ess_h=stack("ess_h"),
        ess_d=stack("ess_d"),
        h_sys=stack("h_sys"),
        d_sys=stack("d_sys"),
        costs=CostBreakdown(0, 0, 0, 0, 0),
        objective=0.0,
    )
    costs = _committed_costs(case, merged, w_fore)
    merged.costs = costs
    merged.objective = costs.total
    return merged


def _slice_solution(sol: DispatchSolution, lo: int, hi: int) -> DispatchSolution:
    cut = lambda arr: arr[lo:hi]  # noqa: E731
    return DispatchSolution(
        mode=sol.mode,
        gen_p=cut(sol.gen_p),
        gen_rg=cut(sol.gen_rg),
        res_sched=cut(sol.res_sched),
        res_reserve=cut(sol.res_reserve),
        res_h=cut(sol.res_h),
        res_d=cut(sol.res_d),
        ess_p=cut(sol.ess_p),
        ess_reserve=cut(sol.ess_reserve),
        ess_e=cut(sol.ess_e),
        ess_loss=cut(sol.ess_loss),
        ess_h=cut(sol.ess_h),
        ess_d=cut(sol.ess_d),
        h_sys=cut(sol.h_sys),
        d_sys=cut(sol.d_sys),
        costs=sol.costs,
        objective=sol.objective,
    )


def _build_cha_sets(case: DispatchCase, sl: ScenarioSlice, cfg: HorizonConfig, cache: dict) -> list[HalfspaceSet]:
    h_b, d_b = hd_bounds(case)
    _, r_agg, f_agg, t_agg = aggregated_sfr_params(case)
    cha_cfg = ChaConfig(
        h_bounds=h_b, d_bounds=d_b, n_samples=cfg.cha_samples, seed=cfg.seed
    )

    def build_one(dp: float) -> HalfspaceSet:
        return build_nadir_halfspaces(
            cha_cfg, t_agg, r_agg, f_agg, dp, case.limits.f0, case.limits.f_max_lim
        )

    keys = [float(sl.dP[t]) for t in range(sl.n_periods)]
    missing = sorted({k for k in keys if k not in cache})
    if missing:
        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                for k, hs in zip(missing, pool.map(build_one, missing)):
                    cache[k] = hs
        else:
            for k in missing:
                cache[k] = build_one(k)
    return [cache[k] for k in keys]


def run_rolling(case: DispatchCase, timeline: ScenarioTimeline, cfg: HorizonConfig, mode: str) -> RunReport:
    """Execute the full day of rolling solves and assemble the report.

    Raises InfeasibleSolveError as soon as any window fails to solve or an
    online-mode window fails its own audit; audit findings in fixed mode
    are collected into the report instead (the insecurity is the finding).
    """
    if timeline.n_solves != cfg.n_solves or timeline.horizon_steps != cfg.horizon_steps:
        raise ValueError(
            f"timeline shape ({timeline.n_solves}, {timeline.horizon_steps}) does not "
            f"match config ({cfg.n_solves}, {cfg.horizon_steps})"
        )
    p_prev = np.array([0.5 * (g.p_min + g.p_max) for g in case.generators])
    e_prev = np.array([e.e_init for e in case.ess_units])

    cha_cache: dict = {}
    records: list[SolveRecord] = []
    committed_parts: list[DispatchSolution] = []
    committed_fores: list[np.ndarray] = []
    audit: list[Violation] = []

    for s in range(cfg.n_solves):
        t0 = time.perf_counter()
        sl = timeline.window(s)
        sets = _build_cha_sets(case, sl, cfg, cha_cache) if mode == "online" else None
        quantiles = reformulate_quantiles(case, sl)
        built = build_qp(
            case, sl, mode, cha_sets=sets, p_prev=p_prev, e_prev=e_prev,
            quantiles=quantiles,
        )
        result = solve_qp(built.problem, tol=cfg.qp_tol, max_iter=300)
        if result.status != "optimal":
            worst = ", ".join(f"{n} (+{v:.3g})" for n, v in result.most_violated[:5])
            raise InfeasibleSolveError(s, f"status {result.status}; worst: {worst}")
        sol = decode_solution(result, built, case, sl)
        violations = verify_solution(
            sol, case, sl, p_prev=p_prev, e_prev=e_prev, quantiles=quantiles
        )
        if mode == "online" and violations:
            v = violations[0]
            raise InfeasibleSolveError(
                s, f"audit failed: {v.name} at window period {v.period} by {v.magnitude:.3g}"
            )
        records.append(
            SolveRecord(
                solve_index=s,
                start_period=s * cfg.resolve_every_steps,
                solution=sol,
                violations=violations,
                wall_time_s=time.perf_counter() - t0,
            )
        )
        commit = _slice_solution(sol, 0, cfg.commit_steps)
        committed_parts.append(commit)
        committed_fores.append(sl.w_fore[: cfg.commit_steps])
        for v in violations:
            if v.period < cfg.commit_steps:
                audit.append(
                    Violation(
                        period=s * cfg.resolve_every_steps + v.period,
                        name=v.name,
                        magnitude=v.magnitude,
                        family=v.family,
                    )
                )
        p_prev = commit.gen_p[-1].copy()
        e_prev = commit.ess_e[-1].copy() if case.n_ess else e_prev

    committed = _concat_solutions(mode, case, committed_parts, committed_fores)
    w_fore_all = np.concatenate(committed_fores, axis=0)
    curtailment = 100.0 * committed.curtailment_fraction(w_fore_all)
    return RunReport(
        mode=mode,
        case_name=case.name,
        seed=cfg.seed,
        solve_records=records,
        committed=committed,
        committed_w_fore=w_fore_all,
        committed_dP=np.concatenate(
            [timeline.dP[s, : cfg.commit_steps] for s in range(cfg.n_solves)]
        ),
        costs=committed.costs,
        curtailment_pct=curtailment,
        audit_violations=audit,
    )


@dataclass(frozen=True)
class FrequencyRow:
    period: int
    dp: float
    h_sys: float
    d_sys: float
    rocof: float
    delta_f_ss: float
    delta_f_max: float
    rocof_ok: bool
    ss_ok: bool
    nadir_ok: bool


def frequency_timeline(report: RunReport, case: DispatchCase) -> list[FrequencyRow]:
    """Exact security metrics at each committed period's aggregates."""
    _, r_agg, f_agg, t_agg = aggregated_sfr_params(case)
    rows = []
    for t in range(report.n_committed):
        params = sfr.AggregatedSfrParams(
            H=float(report.committed.h_sys[t]),
            D=float(report.committed.d_sys[t]),
            R=r_agg,
            F=f_agg,
            T=t_agg,
        )
        dp = float(report.committed_dP[t])
        m = sfr.frequency_metrics(params, dp, case.limits.f0)
        chk = sfr.check_limits(m, case.limits)
        rows.append(
            FrequencyRow(
                period=t,
                dp=dp,
                h_sys=params.H,
                d_sys=params.D,
                rocof=m.rocof_max,
                delta_f_ss=m.delta_f_ss,
                delta_f_max=m.delta_f_max,
                rocof_ok=chk.rocof_ok,
                ss_ok=chk.ss_ok,
                nadir_ok=chk.nadir_ok,
            )
        )
    return rows


def reserve_zigzag(report: RunReport, cfg: HorizonConfig) -> list[dict]:
    """Committed total renewable reserve vs the previous solve's schedule.

    The re-solve sees each wall-clock period at a shorter lead time, hence
    tighter forecasts; the committed reserve drops below what the previous
    solve had scheduled for the same period, giving the sawtooth shape.
    """
    rows = []
    for rec in report.solve_records:
        for tau in range(cfg.commit_steps):
            g = rec.start_period + tau
            committed = float(np.sum(rec.solution.res_reserve[tau]))
            prev_sched = None
            if rec.solve_index > 0:
                prev = report.solve_records[rec.solve_index - 1]
                offset = g - prev.start_period
                if 0 <= offset < prev.solution.n_periods:
                    prev_sched = float(np.sum(prev.solution.res_reserve[offset]))
            rows.append(
                {
                    "period": g,
                    "committed_rw": committed,
                    "prev_scheduled_rw": prev_sched,
                }
            )
    return rows


@dataclass
class ComparisonReport:
    online: RunReport
    fixed: RunReport | None
    fixed_failure: str | None

    def summary_rows(self) -> list[dict]:
        rows = []
        for label, rep in (("fixed", self.fixed), ("online", self.online)):
            if rep is None:
                continue
            rows.append(
                {
                    "mode": label,
                    "fuel_cost": rep.costs.fuel,
                    "res_reserve_cost": rep.costs.res_reserve,
                    "ess_reserve_cost": rep.costs.ess_reserve,
                    "curtailment_pct": rep.curtailment_pct,
                }
            )
        return rows


def compare_modes(case: DispatchCase, timeline: ScenarioTimeline, cfg: HorizonConfig) -> ComparisonReport:
    """Run both parameter policies on identical inputs.

    A fixed-mode solve failure is reported, not fatal; the online run must
    succeed.
    """
    online = run_rolling(case, timeline, cfg, "online")
    fixed = None
    failure = None
    try:
        fixed = run_rolling(case, timeline, cfg, "fixed")
    except InfeasibleSolveError as exc:
        failure = str(exc)
    return ComparisonReport(online=online, fixed=fixed, fixed_failure=failure)
