"""Command-line entry point.

Subcommands cover the pipeline end to end: `simulate-freq` runs the
frequency-response model, `check-convexity` certifies the nadir Hessians,
`cha` builds and scores a nadir half-space set, `quantile` queries the
forecast mixture, `solve` runs one look-ahead window, `roll` runs the
full receding-horizon day (one or both parameter policies), and `verify`
re-audits a saved run against its case and scenario.

Exit codes: 0 success, 1 validation error, 2 infeasible model or failed
audit, 3 internal numeric failure.  Diagnostics go to stderr, data to
files or stdout.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, fileio, sfr
from .dispatch import (
    ProbabilityLevels,
    StructuralInfeasibleError,
    aggregated_sfr_params,
    build_qp,
    decode_solution,
    hd_bounds,
    reformulate_quantiles,
    verify_solution,
)
from .horizon import (
    ComparisonReport,
    HorizonConfig,
    InfeasibleSolveError,
    compare_modes,
    run_rolling,
)
from .nadir_hull import (
    ChaConfig,
    EmptyRegionError,
    build_nadir_halfspaces,
    classification_error,
    quickhull2d,
    sample_points,
)
from .qpsolver import solve_qp
from .sfr import nadir_deviation
from .uncertainty import affine_project, quantile

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_INFEASIBLE = 2
EXIT_NUMERIC = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freqdispatch",
        description="Frequency-secure look-ahead dispatch with online inertia/droop allocation.",
    )
    parser.add_argument("--version", action="version", version=f"freqdispatch {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-freq", help="frequency metrics and step response of aggregate parameters")
    p.add_argument("--inertia", type=float, required=True, help="aggregate inertia H (s)")
    p.add_argument("--damping", type=float, required=True, help="aggregate damping D (p.u.)")
    p.add_argument("--droop", type=float, required=True, help="aggregate thermal droop gain R (p.u.)")
    p.add_argument("--fraction", type=float, required=True, help="aggregate turbine fraction gain F (p.u.)")
    p.add_argument("--time-constant", type=float, required=True, help="governor time constant T (s)")
    p.add_argument("--dp", type=float, required=True, help="disturbance magnitude (p.u.)")
    p.add_argument("--f0", type=float, default=50.0, help="nominal frequency (Hz)")
    p.add_argument("--t-end", type=float, default=60.0, help="simulation end time (s)")
    p.add_argument("--dt", type=float, default=1e-3, help="integration step (s)")
    p.add_argument("--trajectory", type=Path, help="write the simulated (t, df) samples to this CSV")
    p.add_argument("--json-summary", action="store_true", help="print metrics as JSON")

    p = sub.add_parser("check-convexity", help="finite-difference Hessian certificate of the nadir function")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fd-step", type=float, default=1e-4, help="step relative to each coordinate range")
    p.add_argument("--psd-tol", type=float, default=1e-8, help="relative eigenvalue tolerance")
    p.add_argument("--json-summary", action="store_true")

    p = sub.add_parser("cha", help="build nadir half-spaces for a case and score the classifier")
    p.add_argument("--case", type=Path, required=True)
    p.add_argument("--dp", type=float, required=True, help="disturbance magnitude (p.u.)")
    p.add_argument("--samples", type=int, default=50_000)
    p.add_argument("--test-samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, help="write half-space rows (w_h,w_d,b) to this CSV")
    p.add_argument("--svg", type=Path, help="write a sample/hull sketch to this SVG")
    p.add_argument("--json-summary", action="store_true")

    p = sub.add_parser("quantile", help="quantiles of the projected forecast mixture")
    p.add_argument("--scenario", type=Path, required=True)
    p.add_argument("--solve-index", type=int, default=0)
    p.add_argument("--step", type=int, default=0, help="lead step within the solve window")
    p.add_argument("--alpha", type=float, required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--unit", type=int, help="unit index for a marginal quantile")
    group.add_argument("--total", action="store_true", help="quantile of the summed output")
    group.add_argument("--coeffs", type=str, help="comma-separated projection coefficients")
    p.add_argument("--json-summary", action="store_true")

    for name in ("solve", "roll"):
        p = sub.add_parser(
            name,
            help="solve one look-ahead window" if name == "solve" else "run the rolling day",
        )
        p.add_argument("--case", type=Path, required=True)
        p.add_argument("--scenario", type=Path, required=True)
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--samples", type=int, default=50_000, help="hull training samples per period")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--kappa", type=float, help="override the case disturbance fraction")
        p.add_argument("--alpha", type=float, help="override all chance-constraint levels")
        p.add_argument("--json-summary", action="store_true")
        if name == "solve":
            p.add_argument("--solve-index", type=int, default=0)
            p.add_argument("--mode", choices=["online", "fixed"], default="online")
        else:
            p.add_argument("--mode", choices=["online", "fixed", "both"], default="both")

    p = sub.add_parser("verify", help="re-audit a saved run directory")
    p.add_argument("--case", type=Path, required=True)
    p.add_argument("--scenario", type=Path, required=True)
    p.add_argument("--run", type=Path, required=True, help="directory holding solution.json")
    p.add_argument("--json-summary", action="store_true")
    return parser


def _apply_overrides(case, args):
    if getattr(args, "kappa", None) is not None:
        case = dataclasses.replace(case, kappa=args.kappa)
    if getattr(args, "alpha", None) is not None:
        a = args.alpha
        case = dataclasses.replace(
            case, alphas=ProbabilityLevels(a, a, a, a, a)
        )
    return case


def _horizon_config(block: dict, args) -> HorizonConfig:
    return HorizonConfig(
        step_minutes=block["step_minutes"],
        horizon_steps=block["horizon_steps"],
        resolve_every_steps=block["resolve_every_steps"],
        commit_steps=block["commit_steps"],
        day_steps=block["day_steps"],
        cha_samples=args.samples,
        seed=args.seed,
        threads=args.threads,
    )


def _emit(args, payload: dict, text_lines: list[str]) -> None:
    if getattr(args, "json_summary", False):
        print(json.dumps(payload, sort_keys=True))
    else:
        for line in text_lines:
            print(line)


def _cmd_simulate_freq(args) -> int:
    params = sfr.AggregatedSfrParams(
        H=args.inertia, D=args.damping, R=args.droop, F=args.fraction, T=args.time_constant
    )
    metrics = sfr.frequency_metrics(params, args.dp, args.f0)
    if args.trajectory:
        t, df = sfr.simulate_step_response(params, args.dp, args.f0, args.t_end, args.dt)
        with open(args.trajectory, "w") as fh:
            fh.write("t_s,delta_f_hz\n")
            for ti, fi in zip(t, df):
                fh.write(f"{ti:.9g},{fi:.9g}\n")
    payload = {
        "rocof_hz_per_s": metrics.rocof_max,
        "delta_f_ss_hz": metrics.delta_f_ss,
        "delta_f_max_hz": metrics.delta_f_max,
        "t_nadir_s": metrics.t_nadir,
        "omega_n_rad_s": metrics.omega_n,
        "zeta": metrics.zeta,
    }
    _emit(args, payload, [f"{k}: {v:.9g}" for k, v in payload.items()])
    return EXIT_OK


def _cmd_check_convexity(args) -> int:
    report = sfr.certify_convexity(
        n_samples=args.samples, fd_step=args.fd_step, psd_tol=args.psd_tol, seed=args.seed
    )
    payload = {
        "n_samples": report.n_samples,
        "min_eigenvalue": report.min_eigenvalue,
        "n_violations": report.n_violations,
    }
    _emit(
        args,
        payload,
        [
            f"samples: {report.n_samples}",
            f"min eigenvalue: {report.min_eigenvalue:.9g}",
            f"violations: {report.n_violations}",
        ],
    )
    return EXIT_OK


def _cmd_cha(args) -> int:
    case = fileio.load_case(args.case)
    _, r_agg, f_agg, t_agg = aggregated_sfr_params(case)
    h_b, d_b = hd_bounds(case)
    cfg = ChaConfig(h_bounds=h_b, d_bounds=d_b, n_samples=args.samples, seed=args.seed)
    hs = build_nadir_halfspaces(
        cfg, t_agg, r_agg, f_agg, args.dp, case.limits.f0, case.limits.f_max_lim
    )
    lim = case.limits

    def exact(H, D):
        return nadir_deviation(H, D, t_agg, r_agg, f_agg, args.dp, lim.f0) <= lim.f_max_lim

    score = classification_error(hs, exact, args.test_samples, args.seed + 1, h_b, d_b)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("w_h,w_d,b\n")
            for w_h, w_d, b in hs.coeffs:
                fh.write(f"{w_h:.9g},{w_d:.9g},{b:.9g}\n")
    if args.svg:
        pts = sample_points(cfg)
        feas = nadir_deviation(pts[:, 0], pts[:, 1], t_agg, r_agg, f_agg, args.dp, lim.f0) <= lim.f_max_lim
        poly = quickhull2d(pts[feas])
        fileio.hull_svg(pts, poly.vertices, feas, args.svg)
    payload = {
        "initial_samples": args.samples,
        "hyperplanes": len(hs),
        "build_time_s": hs.meta.wall_time_s,
        "test_samples": score.n_test,
        "classification_error_pct": 100.0 * score.error_rate,
        "false_safe": score.false_safe_count,
        "false_unsafe": score.false_unsafe_count,
    }
    _emit(
        args,
        payload,
        [
            f"initial samples: {args.samples}",
            f"hyperplanes: {len(hs)}",
            f"build time (s): {hs.meta.wall_time_s:.4f}",
            f"classification error (%): {100.0 * score.error_rate:.4f}",
            f"false safe: {score.false_safe_count}",
            f"false unsafe: {score.false_unsafe_count}",
        ],
    )
    return EXIT_OK


def _cmd_quantile(args) -> int:
    timeline, _ = fileio.load_scenario(args.scenario)
    if not 0 <= args.solve_index < timeline.n_solves:
        raise fileio.SchemaError(f"solve index {args.solve_index} outside 0..{timeline.n_solves - 1}")
    if not 0 <= args.step < timeline.horizon_steps:
        raise fileio.SchemaError(f"step {args.step} outside 0..{timeline.horizon_steps - 1}")
    g = timeline.gmms[args.solve_index][args.step]
    if args.unit is not None:
        coeffs = np.eye(g.dim)[args.unit]
    elif args.total:
        coeffs = np.ones(g.dim)
    else:
        coeffs = np.array([float(v) for v in args.coeffs.split(",")])
    value = quantile(affine_project(g, coeffs), args.alpha)
    _emit(args, {"alpha": args.alpha, "quantile_mw": value}, [f"quantile: {value:.9g}"])
    return EXIT_OK


def _cmd_solve(args) -> int:
    case = _apply_overrides(fileio.load_case(args.case), args)
    timeline, block = fileio.load_scenario(args.scenario)
    cfg = _horizon_config(block, args)
    sl = timeline.window(args.solve_index)
    sets = None
    if args.mode == "online":
        from .horizon import _build_cha_sets

        sets = _build_cha_sets(case, sl, cfg, {})
    quantiles = reformulate_quantiles(case, sl)
    built = build_qp(case, sl, args.mode, cha_sets=sets, quantiles=quantiles)
    result = solve_qp(built.problem, tol=cfg.qp_tol, max_iter=300)
    if result.status != "optimal":
        for name, v in result.most_violated:
            print(f"violated: {name} by {v:.6g}", file=sys.stderr)
        print(f"window solve: {result.status}", file=sys.stderr)
        return EXIT_INFEASIBLE
    sol = decode_solution(result, built, case, sl)
    violations = verify_solution(sol, case, sl, quantiles=quantiles)
    args.out.mkdir(parents=True, exist_ok=True)
    fileio._dump_canonical(fileio._solution_to_dict(sol), args.out / "solution.json")
    payload = {
        "objective": sol.objective,
        "fuel_cost": sol.costs.fuel,
        "gen_reserve_cost": sol.costs.gen_reserve,
        "res_reserve_cost": sol.costs.res_reserve,
        "ess_reserve_cost": sol.costs.ess_reserve,
        "ess_loss": sol.costs.ess_loss,
        "audit_violations": len(violations),
    }
    _emit(args, payload, [f"{k}: {v}" for k, v in payload.items()])
    return EXIT_OK if not violations else EXIT_INFEASIBLE


def _cmd_roll(args) -> int:
    case = _apply_overrides(fileio.load_case(args.case), args)
    timeline, block = fileio.load_scenario(args.scenario)
    cfg = _horizon_config(block, args)
    if args.mode == "both":
        report: ComparisonReport | None = compare_modes(case, timeline, cfg)
        fileio.save_report(report, case, timeline, cfg, args.out)
        rows = report.summary_rows()
        payload = {
            "summary": rows,
            "fixed_failure": report.fixed_failure,
            "fixed_nadir_failures": sum(
                1 for v in (report.fixed.audit_violations if report.fixed else []) if v.name == "nadir"
            ),
        }
        lines = [
            "mode,fuel_cost,res_reserve_cost,ess_reserve_cost,curtailment_pct"
        ] + [
            f"{r['mode']},{r['fuel_cost']:.9g},{r['res_reserve_cost']:.9g},"
            f"{r['ess_reserve_cost']:.9g},{r['curtailment_pct']:.9g}"
            for r in rows
        ]
        _emit(args, payload, lines)
        return EXIT_OK
    run = run_rolling(case, timeline, cfg, args.mode)
    fileio.save_report(run, case, timeline, cfg, args.out)
    payload = {
        "mode": run.mode,
        "total_cost": run.costs.total,
        "curtailment_pct": run.curtailment_pct,
        "audit_violations": len(run.audit_violations),
    }
    _emit(args, payload, [f"{k}: {v}" for k, v in payload.items()])
    return EXIT_OK


def _cmd_verify(args) -> int:
    case = fileio.load_case(args.case)
    timeline, block = fileio.load_scenario(args.scenario)
    sol = fileio.load_solution(args.run / "solution.json")
    commit = block["commit_steps"]
    resolve = block["resolve_every_steps"]
    violations = []
    p_prev = np.array([0.5 * (g.p_min + g.p_max) for g in case.generators])
    e_prev = np.array([e.e_init for e in case.ess_units])
    from .dispatch import ScenarioSlice
    from .horizon import _slice_solution

    for s in range(timeline.n_solves):
        lo = s * resolve
        part = _slice_solution(sol, lo, lo + commit)
        sl = ScenarioSlice(
            loads=timeline.loads[s][:commit],
            w_fore=timeline.w_fore[s][:commit],
            gmms=timeline.gmms[s][:commit],
            dP=timeline.dP[s][:commit],
        )
        violations += [
            dataclasses.replace(v, period=lo + v.period)
            for v in verify_solution(part, case, sl, p_prev=p_prev, e_prev=e_prev)
        ]
        p_prev = part.gen_p[-1]
        e_prev = part.ess_e[-1] if case.n_ess else e_prev
    for v in violations:
        print(f"period {v.period}: {v.name} violated by {v.magnitude:.6g} ({v.family})", file=sys.stderr)
    _emit(
        args,
        {"violations": len(violations)},
        [f"violations: {len(violations)}"],
    )
    return EXIT_OK if not violations else EXIT_INFEASIBLE


_HANDLERS = {
    "simulate-freq": _cmd_simulate_freq,
    "check-convexity": _cmd_check_convexity,
    "cha": _cmd_cha,
    "quantile": _cmd_quantile,
    "solve": _cmd_solve,
    "roll": _cmd_roll,
    "verify": _cmd_verify,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (EmptyRegionError, StructuralInfeasibleError, InfeasibleSolveError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (fileio.SchemaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
