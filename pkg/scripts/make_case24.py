#!/usr/bin/env python3
"""Construct the bundled 24-bus-style desk case and its day scenario.

The network is synthetic but dimensioned like a classic 24-bus test
system: 23 thermal generators (about 3.1 GW), 3 wind farms totaling
700 MW with a 300 MW / 1200 MWh storage unit, 17 loads, and 34 lines
whose PTDFs come from an actual DC network model.  The day profile is
tuned so that the static inertia/droop policy violates the frequency
nadir at the evening peak while the online allocation stays secure with
margin; the script asserts those margins before writing anything.

Writes cases/case24.json and cases/day1.json (deterministic), then smoke
checks one peak-hour solve in both modes.
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from freqdispatch import fileio, sfr
from freqdispatch.dispatch import (
    DispatchCase,
    EssUnit,
    Generator,
    Line,
    ProbabilityLevels,
    ResUnit,
    aggregated_sfr_params,
    build_qp,
    hd_bounds,
    reformulate_quantiles,
)
from freqdispatch.horizon import HorizonConfig, synthesize_timeline
from freqdispatch.nadir_hull import ChaConfig, build_nadir_halfspaces
from freqdispatch.qpsolver import solve_qp

HERE = Path(__file__).resolve().parents[1]
RNG = np.random.default_rng(2024)

F0 = 50.0
LIMITS = sfr.FrequencyLimits(f0=F0, f_max_lim=0.5, rocof_lim=0.5, f_ss_lim=0.25)
KAPPA = 0.15

# unit classes: (count, p_max, p_min_frac, quad, lin, const, ramp_frac, H, inv_R, F, T)
GEN_CLASSES = [
    (2, 400.0, 0.50, 0.0018, 8.0, 250.0, 0.10, 6.5, 19.0, 0.20, 8.5),
    (1, 350.0, 0.35, 0.0045, 19.0, 220.0, 0.15, 6.0, 21.0, 0.22, 8.0),
    (3, 197.0, 0.35, 0.0060, 21.0, 180.0, 0.20, 5.5, 22.0, 0.25, 8.0),
    (4, 155.0, 0.30, 0.0085, 24.0, 140.0, 0.25, 5.0, 23.0, 0.25, 7.5),
    (3, 100.0, 0.30, 0.0120, 28.0, 100.0, 0.30, 4.5, 23.5, 0.28, 7.5),
    (4, 76.0, 0.25, 0.0150, 33.0, 80.0, 0.40, 4.5, 24.5, 0.28, 7.0),
    (4, 20.0, 0.00, 0.0300, 42.0, 30.0, 0.60, 4.0, 26.0, 0.30, 6.5),
    (2, 12.0, 0.00, 0.0400, 48.0, 20.0, 0.80, 4.0, 26.0, 0.30, 6.5),
]

GEN_BUSES = [1, 2, 7, 13, 15, 16, 18, 21, 22, 23]
WIND = [("wind_a", 250.0, 3), ("wind_b", 280.0, 9), ("wind_c", 170.0, 17)]
ESS_BUS = 11
LOAD_BUSES = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 13, 14, 15, 16, 18, 19, 20]
LOAD_SHARES = np.array([6, 5, 10, 4, 4, 8, 7, 9, 10, 11, 15, 11, 18, 6, 19, 10, 7], float)
BRANCHES = [
    (1, 2), (1, 3), (1, 5), (2, 4), (2, 6), (3, 9), (3, 24), (4, 9), (5, 10),
    (6, 10), (7, 8), (8, 9), (8, 10), (9, 11), (9, 12), (10, 11), (10, 12),
    (11, 13), (11, 14), (12, 13), (12, 23), (13, 23), (14, 16), (15, 16),
    (15, 21), (15, 24), (16, 17), (16, 19), (17, 18), (17, 22), (18, 21),
    (19, 20), (20, 23), (21, 22),
]

HORIZON = dict(step_minutes=15, horizon_steps=16, resolve_every_steps=4,
               commit_steps=4, day_steps=96)


def build_generators():
    gens = []
    i = 0
    for count, pmax, pmin_f, a, b, c, ramp_f, h, inv_r, f, t in GEN_CLASSES:
        for _ in range(count):
            jitter = 1.0 + 0.04 * (RNG.random() - 0.5)
            gens.append(Generator(
                name=f"g{i + 1:02d}",
                a=a * jitter, b=b * jitter, c=c,
                rgc=2.0 + 0.5 * RNG.random(),
                p_max=pmax, p_min=pmin_f * pmax,
                ramp_up=ramp_f * pmax, ramp_down=ramp_f * pmax,
                beta=0.0,
                H=h, inv_R=inv_r, F=f, T=t,
            ))
            i += 1
    # the mid-size coal and gas units share the affine regulation duty
    reg = [g for g in gens if 76.0 <= g.p_max <= 197.0]
    total = sum(g.p_max for g in reg)
    by_name = {g.name: g for g in gens}
    for g in reg:
        by_name[g.name] = Generator(**{**g.__dict__, "beta": g.p_max / total})
    return [by_name[g.name] for g in gens]


def build_ptdfs(n_bus=24, slack=0):
    x = 0.03 + 0.12 * RNG.random(len(BRANCHES))
    A = np.zeros((len(BRANCHES), n_bus))
    for li, (f, t) in enumerate(BRANCHES):
        A[li, f - 1] = 1.0
        A[li, t - 1] = -1.0
    Bd = np.diag(1.0 / x)
    Bbus = A.T @ Bd @ A
    keep = [i for i in range(n_bus) if i != slack]
    Binv = np.zeros((n_bus, n_bus))
    Binv[np.ix_(keep, keep)] = np.linalg.inv(Bbus[np.ix_(keep, keep)])
    ptdf = Bd @ A @ Binv  # (lines, buses), injection withdrawn at slack
    assert np.max(np.abs(ptdf)) <= 1.0 + 1e-9
    return ptdf


def day_profile(n_periods):
    """Total load (MW) with a morning shoulder and an evening peak."""
    hours = np.arange(n_periods) * 0.25
    base = 1850.0
    morning = 520.0 * np.exp(-0.5 * ((hours - 10.5) / 3.2) ** 2)
    evening = 800.0 * np.exp(-0.5 * ((hours - 18.5) / 2.1) ** 2)
    night_dip = -260.0 * np.exp(-0.5 * ((hours - 3.5) / 2.6) ** 2)
    return base + morning + evening + night_dip


def wind_profile(n_periods, caps):
    """Per-farm wind forecast (MW), sagging through the evening."""
    hours = np.arange(n_periods) * 0.25
    shape = (
        0.46
        + 0.16 * np.cos((hours - 2.0) / 24.0 * 2 * np.pi)
        - 0.14 * np.exp(-0.5 * ((hours - 18.0) / 3.0) ** 2)
    )
    phase = np.array([0.0, 1.3, 2.9])
    farm = shape[:, None] * (1.0 + 0.06 * np.sin(hours[:, None] / 3.7 + phase))
    farm = np.clip(farm, 0.22, 0.85)
    return farm * np.asarray(caps)


def main():
    gens = build_generators()
    total_gen = sum(g.p_max for g in gens)
    wind_caps = [w[1] for w in WIND]
    p_base = total_gen + sum(wind_caps) + 300.0
    print(f"fleet: {len(gens)} generators, {total_gen:.0f} MW thermal, base {p_base:.0f} MVA")

    res_units = [
        ResUnit(name=n, cap=c, h_max=5.0, d_max=10.0, fixed_h=2.0, fixed_d=5.0)
        for n, c, _ in WIND
    ]
    ess_units = [EssUnit(
        name="ess_1", eta_c=0.95, eta_d=0.95, p_max=300.0,
        e_min=240.0, e_max=1080.0, e_init=600.0,
        h_max=5.0, d_max=15.0, fixed_h=4.0, fixed_d=10.0, dt_pfr=0.5,
    )]

    ptdf = build_ptdfs()
    gen_buses = [GEN_BUSES[i % len(GEN_BUSES)] for i in range(len(gens))]
    wind_buses = [w[2] for w in WIND]
    load_shares = LOAD_SHARES / LOAD_SHARES.sum()

    n_periods = HORIZON["day_steps"] - HORIZON["resolve_every_steps"] + HORIZON["horizon_steps"]
    totals = day_profile(n_periods)
    winds = wind_profile(n_periods, wind_caps)
    loads = totals[:, None] * load_shares[None, :]

    # nominal line loadings over the day set the ratings with 40% headroom
    gen_share = np.array([g.p_max for g in gens]) / total_gen
    flows = []
    for t in range(n_periods):
        net = totals[t] - winds[t].sum()
        inj = np.zeros(24)
        for i, bus in enumerate(gen_buses):
            inj[bus - 1] += net * gen_share[i] * 0.95
        inj[ESS_BUS - 1] += net * 0.05
        for j, bus in enumerate(wind_buses):
            inj[bus - 1] += winds[t, j]
        for d, bus in enumerate(LOAD_BUSES):
            inj[bus - 1] -= loads[t, d]
        flows.append(ptdf @ inj)
    ratings = np.maximum(1.4 * np.max(np.abs(np.array(flows)), axis=0), 120.0)

    lines = []
    for li, (f, t) in enumerate(BRANCHES):
        row = ptdf[li]
        lines.append(Line(
            name=f"l{li + 1:02d}_{f}_{t}",
            limit=float(ratings[li]),
            ptdf_gen=np.array([row[b - 1] for b in gen_buses]),
            ptdf_res=np.array([row[b - 1] for b in wind_buses]),
            ptdf_ess=np.array([row[ESS_BUS - 1]]),
            ptdf_load=np.array([row[b - 1] for b in LOAD_BUSES]),
        ))

    case = DispatchCase(
        name="case24",
        p_base=p_base,
        d0=1.0,
        generators=tuple(gens),
        res_units=tuple(res_units),
        ess_units=tuple(ess_units),
        load_names=tuple(f"d{b:02d}" for b in LOAD_BUSES),
        lines=tuple(lines),
        limits=LIMITS,
        alphas=ProbabilityLevels(),
        kappa=KAPPA,
        rwc=120.0,
        rec=9.0,
        dt_hours=0.25,
    )

    # frequency-security margins that make the two policies diverge
    h_th, r_agg, f_agg, t_agg = aggregated_sfr_params(case)
    (h_lo, h_hi), (d_lo, d_hi) = hd_bounds(case)
    peak = totals.max()
    dp_peak = KAPPA * peak / p_base
    fixed_h = h_th + (2.0 * 700.0 + 4.0 * 300.0) / p_base
    fixed_d = 1.0 + (5.0 * 700.0 + 10.0 * 300.0) / p_base
    nadir_fixed, _ = sfr.delta_f_nadir(
        sfr.AggregatedSfrParams(H=fixed_h, D=fixed_d, R=r_agg, F=f_agg, T=t_agg), dp_peak, F0
    )
    nadir_online, _ = sfr.delta_f_nadir(
        sfr.AggregatedSfrParams(H=h_hi, D=d_hi, R=r_agg, F=f_agg, T=t_agg), dp_peak, F0
    )
    rocof_floor = F0 * dp_peak / (2.0 * LIMITS.rocof_lim)
    ss_floor = F0 * dp_peak / LIMITS.f_ss_lim - r_agg
    print(f"peak load {peak:.0f} MW, dP {dp_peak:.4f} pu")
    print(f"aggregates: H_th {h_th:.2f}s (box to {h_hi:.2f}), R {r_agg:.2f}, F {f_agg:.2f}, T {t_agg:.2f}")
    print(f"fixed policy nadir at peak: {nadir_fixed:.3f} Hz (limit 0.5)")
    print(f"online corner nadir at peak: {nadir_online:.3f} Hz")
    print(f"rocof floor {rocof_floor:.2f} <= {h_hi:.2f}; ss floor {ss_floor:.2f} <= {d_hi:.2f}")
    assert nadir_fixed > LIMITS.f_max_lim + 0.02, "fixed policy must fail the peak nadir"
    assert nadir_online < LIMITS.f_max_lim - 0.02, "online corner must pass the peak nadir"
    assert rocof_floor < h_hi - 0.10, "inertia floor needs headroom"
    assert ss_floor < d_hi - 0.15, "damping floor needs headroom"

    cfg = HorizonConfig(**HORIZON, cha_samples=50_000, seed=11)
    timeline = synthesize_timeline(
        case, loads, winds, cfg, sigma_frac=0.06, gamma=0.15, corr=0.3, seed=11
    )

    out = HERE / "cases"
    out.mkdir(exist_ok=True)
    fileio.save_case(case, out / "case24.json")
    fileio.save_scenario(timeline, HORIZON, out / "day1.json")
    print(f"wrote {out / 'case24.json'} and {out / 'day1.json'}")

    # smoke: the peak-hour window must solve online and fail nadir when fixed
    peak_solve = int(np.argmax([timeline.loads[s].sum() for s in range(timeline.n_solves)]))
    sl = timeline.window(peak_solve)
    quantiles = reformulate_quantiles(case, sl)
    cha_cfg = ChaConfig(h_bounds=(h_lo, h_hi), d_bounds=(d_lo, d_hi), n_samples=50_000, seed=11)
    sets = [
        build_nadir_halfspaces(cha_cfg, t_agg, r_agg, f_agg, float(sl.dP[t]), F0, LIMITS.f_max_lim)
        for t in range(sl.n_periods)
    ]
    built = build_qp(case, sl, "online", cha_sets=sets, quantiles=quantiles)
    result = solve_qp(built.problem, tol=1e-8, max_iter=300)
    print(f"peak online solve (solve {peak_solve}): {result.status} in {result.iterations} iterations")
    assert result.status == "optimal", result.most_violated
    built_f = build_qp(case, sl, "fixed", quantiles=quantiles)
    result_f = solve_qp(built_f.problem, tol=1e-8, max_iter=300)
    print(f"peak fixed solve: {result_f.status} in {result_f.iterations} iterations")
    assert result_f.status == "optimal", result_f.most_violated


if __name__ == "__main__":
    main()
