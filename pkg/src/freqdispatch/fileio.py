"""Case, scenario, and result serialization.

Inputs are strict JSON: unknown or missing fields are rejected with
path-addressed messages, non-finite numbers are rejected everywhere, and
files written by `save_case`/`save_scenario` are canonical (sorted keys,
two-space indent) so a load/save round trip is byte-identical.  Results
go to a directory of CSVs with fixed column orders plus a metadata JSON
carrying the seeds and a configuration hash; floats in CSVs carry nine
significant digits.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from pathlib import Path

import numpy as np

from . import sfr
from .dispatch import (
    DispatchCase,
    DispatchSolution,
    EssUnit,
    Generator,
    Line,
    ProbabilityLevels,
    ResUnit,
)
from .horizon import (
    ComparisonReport,
    HorizonConfig,
    RunReport,
    ScenarioTimeline,
    frequency_timeline,
    reserve_zigzag,
)
from .uncertainty import Gmm

__all__ = [
    "SchemaError",
    "load_case",
    "save_case",
    "load_scenario",
    "save_scenario",
    "save_report",
    "load_solution",
    "config_hash",
    "hull_svg",
]

SCHEMA_VERSION = 1

SUMMARY_COLUMNS = ["mode", "fuel_cost", "res_reserve_cost", "ess_reserve_cost", "curtailment_pct"]
COMMITTED_COLUMNS = ["period", "kind", "name", "power_mw", "reserve_mw", "soc_mwh", "loss_mw"]
ALLOCATION_COLUMNS = ["period", "kind", "name", "inertia_s", "droop_pu"]
FREQUENCY_COLUMNS = [
    "period", "dp_pu", "h_sys_s", "d_sys_pu", "rocof_hz_per_s",
    "delta_f_ss_hz", "delta_f_max_hz", "rocof_ok", "ss_ok", "nadir_ok",
]
RESERVES_COLUMNS = ["period", "committed_rw_mw", "prev_scheduled_rw_mw", "w_fore_mw", "w_sched_mw"]


class SchemaError(ValueError):
    """Input file violates the documented schema; message carries the path."""


def _reject_nonfinite(token: str):
    raise SchemaError(f"non-finite number {token!r} is not allowed")


def _load_json(path) -> dict:
    text = Path(path).read_text()
    try:
        return json.loads(text, parse_constant=_reject_nonfinite)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


class _Node:
    """Field-checked view of a JSON object; tracks its path for messages."""

    def __init__(self, obj, path: str):
        if not isinstance(obj, dict):
            raise SchemaError(f"{path}: expected an object")
        self.obj = obj
        self.path = path
        self.seen: set[str] = set()

    def get(self, key, kind=None):
        if key not in self.obj:
            raise SchemaError(f"{self.path}.{key}: missing required field")
        self.seen.add(key)
        val = self.obj[key]
        if kind == "number":
            if not isinstance(val, (int, float)) or isinstance(val, bool):
                raise SchemaError(f"{self.path}.{key}: expected a number")
            val = float(val)
        elif kind == "int":
            if not isinstance(val, int) or isinstance(val, bool):
                raise SchemaError(f"{self.path}.{key}: expected an integer")
        elif kind == "str":
            if not isinstance(val, str):
                raise SchemaError(f"{self.path}.{key}: expected a string")
        elif kind == "list":
            if not isinstance(val, list):
                raise SchemaError(f"{self.path}.{key}: expected an array")
        return val

    def child(self, key) -> "_Node":
        return _Node(self.get(key), f"{self.path}.{key}")

    def children(self, key) -> list["_Node"]:
        val = self.get(key, "list")
        return [_Node(v, f"{self.path}.{key}[{i}]") for i, v in enumerate(val)]

    def numbers(self, key) -> np.ndarray:
        val = self.get(key, "list")
        arr = np.asarray(val, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise SchemaError(f"{self.path}.{key}: non-finite entries")
        return arr

    def finish(self):
        unknown = set(self.obj) - self.seen
        if unknown:
            raise SchemaError(f"{self.path}.{sorted(unknown)[0]}: unknown field")


def load_case(path, renormalize_beta: bool = True) -> DispatchCase:
    """Parse and fully validate a case file."""
    root = _Node(_load_json(path), "case")
    if root.get("schema_version", "int") != SCHEMA_VERSION:
        raise SchemaError(f"case.schema_version: expected {SCHEMA_VERSION}")
    lim = root.child("frequency_limits")
    limits = sfr.FrequencyLimits(
        f0=lim.get("f0_hz", "number"),
        f_max_lim=lim.get("f_max_lim_hz", "number"),
        rocof_lim=lim.get("rocof_lim_hz_per_s", "number"),
        f_ss_lim=lim.get("f_ss_lim_hz", "number"),
    )
    lim.finish()
    al = root.child("probability_levels")
    alphas = ProbabilityLevels(
        gen_up=al.get("gen_up", "number"),
        gen_down=al.get("gen_down", "number"),
        res_reserve=al.get("res_reserve", "number"),
        line_plus=al.get("line_plus", "number"),
        line_minus=al.get("line_minus", "number"),
    )
    al.finish()

    generators = []
    for g in root.children("generators"):
        generators.append(Generator(
            name=g.get("name", "str"),
            a=g.get("cost_quad", "number"),
            b=g.get("cost_lin", "number"),
            c=g.get("cost_const", "number"),
            rgc=g.get("reserve_cost", "number"),
            p_max=g.get("p_max_mw", "number"),
            p_min=g.get("p_min_mw", "number"),
            ramp_up=g.get("ramp_up_mw", "number"),
            ramp_down=g.get("ramp_down_mw", "number"),
            beta=g.get("beta", "number"),
            H=g.get("inertia_s", "number"),
            inv_R=g.get("droop_gain_pu", "number"),
            F=g.get("turbine_fraction_pu", "number"),
            T=g.get("time_constant_s", "number"),
        ))
        g.finish()
    res_units = []
    for r in root.children("res_units"):
        res_units.append(ResUnit(
            name=r.get("name", "str"),
            cap=r.get("cap_mw", "number"),
            h_max=r.get("h_max_s", "number"),
            d_max=r.get("d_max_pu", "number"),
            fixed_h=r.get("fixed_h_s", "number"),
            fixed_d=r.get("fixed_d_pu", "number"),
        ))
        r.finish()
    ess_units = []
    for e in root.children("ess_units"):
        ess_units.append(EssUnit(
            name=e.get("name", "str"),
            eta_c=e.get("eta_charge", "number"),
            eta_d=e.get("eta_discharge", "number"),
            p_max=e.get("p_max_mw", "number"),
            e_min=e.get("e_min_mwh", "number"),
            e_max=e.get("e_max_mwh", "number"),
            e_init=e.get("e_init_mwh", "number"),
            h_max=e.get("h_max_s", "number"),
            d_max=e.get("d_max_pu", "number"),
            fixed_h=e.get("fixed_h_s", "number"),
            fixed_d=e.get("fixed_d_pu", "number"),
            dt_pfr=e.get("pfr_hours", "number"),
        ))
        e.finish()
    load_names = [str(s) for s in root.get("load_names", "list")]
    lines = []
    for ln in root.children("lines"):
        lines.append(Line(
            name=ln.get("name", "str"),
            limit=ln.get("limit_mw", "number"),
            ptdf_gen=ln.numbers("ptdf_gen"),
            ptdf_res=ln.numbers("ptdf_res"),
            ptdf_ess=ln.numbers("ptdf_ess"),
            ptdf_load=ln.numbers("ptdf_load"),
        ))
        ln.finish()

    betas = sum(g.beta for g in generators)
    if abs(betas - 1.0) > 1e-9:
        if not renormalize_beta or betas <= 0:
            raise SchemaError(f"case.generators: participation factors sum to {betas}, expected 1")
        warnings.warn(
            f"participation factors sum to {betas:.6g}; renormalizing to 1",
            stacklevel=2,
        )
        generators = [
            Generator(**{**g.__dict__, "beta": g.beta / betas}) for g in generators
        ]

    case = DispatchCase(
        name=root.get("name", "str"),
        p_base=root.get("p_base_mva", "number"),
        d0=root.get("d0_pu", "number"),
        generators=tuple(generators),
        res_units=tuple(res_units),
        ess_units=tuple(ess_units),
        load_names=tuple(load_names),
        lines=tuple(lines),
        limits=limits,
        alphas=alphas,
        kappa=root.get("kappa", "number"),
        rwc=root.get("rwc", "number"),
        rec=root.get("rec", "number"),
        dt_hours=root.get("dt_hours", "number"),
    )
    root.finish()
    return case


def case_to_dict(case: DispatchCase) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "name": case.name,
        "p_base_mva": case.p_base,
        "d0_pu": case.d0,
        "kappa": case.kappa,
        "rwc": case.rwc,
        "rec": case.rec,
        "dt_hours": case.dt_hours,
        "frequency_limits": {
            "f0_hz": case.limits.f0,
            "f_max_lim_hz": case.limits.f_max_lim,
            "rocof_lim_hz_per_s": case.limits.rocof_lim,
            "f_ss_lim_hz": case.limits.f_ss_lim,
        },
        "probability_levels": {
            "gen_up": case.alphas.gen_up,
            "gen_down": case.alphas.gen_down,
            "res_reserve": case.alphas.res_reserve,
            "line_plus": case.alphas.line_plus,
            "line_minus": case.alphas.line_minus,
        },
        "generators": [
            {
                "name": g.name, "cost_quad": g.a, "cost_lin": g.b, "cost_const": g.c,
                "reserve_cost": g.rgc, "p_max_mw": g.p_max, "p_min_mw": g.p_min,
                "ramp_up_mw": g.ramp_up, "ramp_down_mw": g.ramp_down, "beta": g.beta,
                "inertia_s": g.H, "droop_gain_pu": g.inv_R,
                "turbine_fraction_pu": g.F, "time_constant_s": g.T,
            }
            for g in case.generators
        ],
        "res_units": [
            {
                "name": r.name, "cap_mw": r.cap, "h_max_s": r.h_max, "d_max_pu": r.d_max,
                "fixed_h_s": r.fixed_h, "fixed_d_pu": r.fixed_d,
            }
            for r in case.res_units
        ],
        "ess_units": [
            {
                "name": e.name, "eta_charge": e.eta_c, "eta_discharge": e.eta_d,
                "p_max_mw": e.p_max, "e_min_mwh": e.e_min, "e_max_mwh": e.e_max,
                "e_init_mwh": e.e_init, "h_max_s": e.h_max, "d_max_pu": e.d_max,
                "fixed_h_s": e.fixed_h, "fixed_d_pu": e.fixed_d, "pfr_hours": e.dt_pfr,
            }
            for e in case.ess_units
        ],
        "load_names": list(case.load_names),
        "lines": [
            {
                "name": ln.name, "limit_mw": ln.limit,
                "ptdf_gen": ln.ptdf_gen.tolist(), "ptdf_res": ln.ptdf_res.tolist(),
                "ptdf_ess": ln.ptdf_ess.tolist(), "ptdf_load": ln.ptdf_load.tolist(),
            }
            for ln in case.lines
        ],
    }


def _dump_canonical(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n")


def save_case(case: DispatchCase, path) -> None:
    _dump_canonical(case_to_dict(case), path)


def load_scenario(path) -> tuple[ScenarioTimeline, dict]:
    """Parse a scenario file; returns the timeline and the horizon block."""
    root = _Node(_load_json(path), "scenario")
    if root.get("schema_version", "int") != SCHEMA_VERSION:
        raise SchemaError(f"scenario.schema_version: expected {SCHEMA_VERSION}")
    hz_node = root.child("horizon")
    horizon = {
        "step_minutes": hz_node.get("step_minutes", "int"),
        "horizon_steps": hz_node.get("horizon_steps", "int"),
        "resolve_every_steps": hz_node.get("resolve_every_steps", "int"),
        "commit_steps": hz_node.get("commit_steps", "int"),
        "day_steps": hz_node.get("day_steps", "int"),
    }
    hz_node.finish()
    seed = root.get("seed", "int")
    solves = root.children("solves")
    if not solves:
        raise SchemaError("scenario.solves: must not be empty")
    loads, w_fore, dP, gmms = [], [], [], []
    for s_node in solves:
        loads.append(s_node.numbers("loads"))
        w_fore.append(s_node.numbers("w_fore"))
        dP.append(s_node.numbers("dP"))
        per_solve = []
        for g_node in s_node.children("gmms"):
            try:
                g = Gmm(
                    weights=g_node.numbers("weights"),
                    means=g_node.numbers("means"),
                    covariances=g_node.numbers("covariances"),
                )
            except ValueError as exc:
                raise SchemaError(f"{g_node.path}: {exc}") from None
            g_node.finish()
            per_solve.append(g)
        gmms.append(tuple(per_solve))
        s_node.finish()
    root.finish()
    try:
        timeline = ScenarioTimeline(
            loads=np.array(loads), w_fore=np.array(w_fore),
            gmms=tuple(gmms), dP=np.array(dP), seed=seed,
        )
    except ValueError as exc:
        raise SchemaError(f"scenario: {exc}") from None
    return timeline, horizon


def save_scenario(timeline: ScenarioTimeline, horizon: dict, path) -> None:
    obj = {
        "schema_version": SCHEMA_VERSION,
        "seed": timeline.seed,
        "horizon": horizon,
        "solves": [
            {
                "loads": timeline.loads[s].tolist(),
                "w_fore": timeline.w_fore[s].tolist(),
                "dP": timeline.dP[s].tolist(),
                "gmms": [
                    {
                        "weights": g.weights.tolist(),
                        "means": g.means.tolist(),
                        "covariances": g.covariances.tolist(),
                    }
                    for g in timeline.gmms[s]
                ],
            }
            for s in range(timeline.n_solves)
        ],
    }
    _dump_canonical(obj, path)


def config_hash(case: DispatchCase, timeline: ScenarioTimeline, cfg: HorizonConfig) -> str:
    blob = json.dumps(
        {
            "case": case_to_dict(case),
            "scenario_seed": timeline.seed,
            "scenario_shape": [timeline.n_solves, timeline.horizon_steps],
            "load_sum": float(timeline.loads.sum()),
            "wind_sum": float(timeline.w_fore.sum()),
            "cfg": {
                "horizon_steps": cfg.horizon_steps,
                "resolve_every_steps": cfg.resolve_every_steps,
                "commit_steps": cfg.commit_steps,
                "day_steps": cfg.day_steps,
                "cha_samples": cfg.cha_samples,
                "seed": cfg.seed,
                "qp_tol": cfg.qp_tol,
            },
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.9g}"


def _write_csv(path: Path, columns: list[str], rows: list[list]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_run_csvs(report: RunReport, case: DispatchCase, cfg: HorizonConfig, outdir: Path) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    sol = report.committed

    rows = []
    for t in range(report.n_committed):
        for i, g in enumerate(case.generators):
            rows.append([t, "gen", g.name, sol.gen_p[t, i], sol.gen_rg[t, i], None, None])
        for j, r in enumerate(case.res_units):
            rows.append([t, "res", r.name, sol.res_sched[t, j], sol.res_reserve[t, j], None, None])
        for k, e in enumerate(case.ess_units):
            rows.append([t, "ess", e.name, sol.ess_p[t, k], sol.ess_reserve[t, k],
                         sol.ess_e[t, k], sol.ess_loss[t, k]])
    _write_csv(outdir / "committed.csv", COMMITTED_COLUMNS, rows)

    rows = []
    for t in range(report.n_committed):
        for j, r in enumerate(case.res_units):
            rows.append([t, "res", r.name, sol.res_h[t, j], sol.res_d[t, j]])
        for k, e in enumerate(case.ess_units):
            rows.append([t, "ess", e.name, sol.ess_h[t, k], sol.ess_d[t, k]])
    _write_csv(outdir / "allocation.csv", ALLOCATION_COLUMNS, rows)

    rows = [
        [r.period, r.dp, r.h_sys, r.d_sys, r.rocof, r.delta_f_ss, r.delta_f_max,
         r.rocof_ok, r.ss_ok, r.nadir_ok]
        for r in frequency_timeline(report, case)
    ]
    _write_csv(outdir / "frequency.csv", FREQUENCY_COLUMNS, rows)

    zig = reserve_zigzag(report, cfg)
    rows = []
    for entry in zig:
        t = entry["period"]
        rows.append([
            t, entry["committed_rw"], entry["prev_scheduled_rw"],
            float(report.committed_w_fore[t].sum()), float(sol.res_sched[t].sum()),
        ])
    _write_csv(outdir / "reserves.csv", RESERVES_COLUMNS, rows)

    _write_csv(
        outdir / "summary.csv",
        SUMMARY_COLUMNS,
        [[report.mode, report.costs.fuel, report.costs.res_reserve,
          report.costs.ess_reserve, report.curtailment_pct]],
    )


def _solution_to_dict(sol: DispatchSolution) -> dict:
    return {
        "mode": sol.mode,
        "gen_p": sol.gen_p.tolist(),
        "gen_rg": sol.gen_rg.tolist(),
        "res_sched": sol.res_sched.tolist(),
        "res_reserve": sol.res_reserve.tolist(),
        "res_h": sol.res_h.tolist(),
        "res_d": sol.res_d.tolist(),
        "ess_p": sol.ess_p.tolist(),
        "ess_reserve": sol.ess_reserve.tolist(),
        "ess_e": sol.ess_e.tolist(),
        "ess_loss": sol.ess_loss.tolist(),
        "ess_h": sol.ess_h.tolist(),
        "ess_d": sol.ess_d.tolist(),
        "h_sys": sol.h_sys.tolist(),
        "d_sys": sol.d_sys.tolist(),
    }


def load_solution(path) -> DispatchSolution:
    from .dispatch import CostBreakdown

    node = _Node(_load_json(path), "solution")
    sol = DispatchSolution(
        mode=node.get("mode", "str"),
        gen_p=node.numbers("gen_p"),
        gen_rg=node.numbers("gen_rg"),
        res_sched=node.numbers("res_sched"),
        res_reserve=node.numbers("res_reserve"),
        res_h=node.numbers("res_h"),
        res_d=node.numbers("res_d"),
        ess_p=node.numbers("ess_p"),
        ess_reserve=node.numbers("ess_reserve"),
        ess_e=node.numbers("ess_e"),
        ess_loss=node.numbers("ess_loss"),
        ess_h=node.numbers("ess_h"),
        ess_d=node.numbers("ess_d"),
        h_sys=node.numbers("h_sys"),
        d_sys=node.numbers("d_sys"),
        costs=CostBreakdown(0, 0, 0, 0, 0),
        objective=0.0,
    )
    node.finish()
    return sol


def save_report(
    report: RunReport | ComparisonReport,
    case: DispatchCase,
    timeline: ScenarioTimeline,
    cfg: HorizonConfig,
    outdir,
) -> None:
    """Write the result bundle: per-mode CSVs, solution dump, metadata."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if isinstance(report, ComparisonReport):
        runs = [("online", report.online)] + ([("fixed", report.fixed)] if report.fixed else [])
        for label, rep in runs:
            _write_run_csvs(rep, case, cfg, outdir / label)
            _dump_canonical(_solution_to_dict(rep.committed), outdir / label / "solution.json")
        _write_csv(
            outdir / "summary.csv",
            SUMMARY_COLUMNS,
            [[r["mode"], r["fuel_cost"], r["res_reserve_cost"], r["ess_reserve_cost"],
              r["curtailment_pct"]] for r in report.summary_rows()],
        )
        meta: dict = {
            "modes": [label for label, _ in runs],
            "fixed_failure": report.fixed_failure,
            "fixed_audit_violations": [
                {"period": v.period, "name": v.name, "magnitude": v.magnitude, "family": v.family}
                for v in (report.fixed.audit_violations if report.fixed else [])
            ],
        }
    else:
        _write_run_csvs(report, case, cfg, outdir)
        _dump_canonical(_solution_to_dict(report.committed), outdir / "solution.json")
        meta = {
            "modes": [report.mode],
            "audit_violations": [
                {"period": v.period, "name": v.name, "magnitude": v.magnitude, "family": v.family}
                for v in report.audit_violations
            ],
        }
    meta.update(
        {
            "case": case.name,
            "seed": cfg.seed,
            "config_hash": config_hash(case, timeline, cfg),
            "cha_samples": cfg.cha_samples,
        }
    )
    _dump_canonical(meta, outdir / "run_meta.json")


def hull_svg(points: np.ndarray, vertices: np.ndarray, feasible: np.ndarray, path) -> None:
    """Scatter of (H, D) samples with the hull polygon, as a standalone SVG."""
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    size, margin = 640.0, 40.0

    def xy(p):
        q = (p - lo) / span
        return margin + q[0] * (size - 2 * margin), size - margin - q[1] * (size - 2 * margin)

    sub = points[:: max(1, len(points) // 2000)]
    sub_feas = feasible[:: max(1, len(points) // 2000)]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0f}" height="{size:.0f}" '
        f'viewBox="0 0 {size:.0f} {size:.0f}">',
        f'<rect width="{size:.0f}" height="{size:.0f}" fill="white"/>',
    ]
    for p, ok in zip(sub, sub_feas):
        x, y = xy(p)
        color = "#e6b400" if ok else "#2060c0"
        parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="1.5" fill="{color}"/>')
    pts = " ".join(f"{xy(v)[0]:.1f},{xy(v)[1]:.1f}" for v in vertices)
    parts.append(f'<polygon points="{pts}" fill="none" stroke="#c03030" stroke-width="2" stroke-dasharray="6,4"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
