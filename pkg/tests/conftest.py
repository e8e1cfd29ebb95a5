import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from freqdispatch.dispatch import (
    DispatchCase,
    EssUnit,
    Generator,
    Line,
    ProbabilityLevels,
    ResUnit,
    ScenarioSlice,
)
from freqdispatch.sfr import FrequencyLimits
from freqdispatch.uncertainty import Gmm


def small_case(**overrides) -> DispatchCase:
    """Three generators, two wind units, one storage unit, two light lines."""
    gens = (
        Generator("g1", a=0.010, b=15.0, c=100.0, rgc=2.0, p_max=400.0, p_min=50.0,
                  ramp_up=120.0, ramp_down=120.0, beta=0.5, H=5.0, inv_R=25.0, F=0.25, T=8.0),
        Generator("g2", a=0.020, b=25.0, c=80.0, rgc=2.5, p_max=300.0, p_min=40.0,
                  ramp_up=100.0, ramp_down=100.0, beta=0.3, H=5.0, inv_R=25.0, F=0.25, T=8.0),
        Generator("g3", a=0.030, b=40.0, c=50.0, rgc=3.0, p_max=200.0, p_min=0.0,
                  ramp_up=150.0, ramp_down=150.0, beta=0.2, H=5.0, inv_R=25.0, F=0.25, T=8.0),
    )
    res = (
        ResUnit("w1", cap=150.0, h_max=5.0, d_max=10.0, fixed_h=2.0, fixed_d=5.0),
        ResUnit("w2", cap=250.0, h_max=5.0, d_max=10.0, fixed_h=2.0, fixed_d=5.0),
    )
    ess = (
        EssUnit("s1", eta_c=0.95, eta_d=0.95, p_max=80.0, e_min=100.0, e_max=350.0,
                e_init=200.0, h_max=5.0, d_max=15.0, fixed_h=4.0, fixed_d=10.0, dt_pfr=0.5),
    )
    lines = (
        Line("l1", limit=500.0,
             ptdf_gen=np.array([0.3, -0.2, 0.1]), ptdf_res=np.array([0.25, -0.15]),
             ptdf_ess=np.array([0.2]), ptdf_load=np.array([0.2, -0.1])),
        Line("l2", limit=450.0,
             ptdf_gen=np.array([-0.1, 0.3, 0.2]), ptdf_res=np.array([-0.2, 0.3]),
             ptdf_ess=np.array([-0.15]), ptdf_load=np.array([0.1, 0.25])),
    )
    kwargs = dict(
        name="small",
        p_base=1380.0,
        d0=1.0,
        generators=gens,
        res_units=res,
        ess_units=ess,
        load_names=("d1", "d2"),
        lines=lines,
        limits=FrequencyLimits(f0=50.0, f_max_lim=0.5, rocof_lim=0.5, f_ss_lim=0.25),
        alphas=ProbabilityLevels(),
        kappa=0.15,
        rwc=100.0,
        rec=10.0,
        dt_hours=0.25,
    )
    kwargs.update(overrides)
    return DispatchCase(**kwargs)


def make_gmm(w_fore: np.ndarray, sigma: np.ndarray, corr: float = 0.3) -> Gmm:
    """Two-component mixture with the requested mean and spread."""
    nw = len(w_fore)
    offset = 0.4 * sigma
    means = np.vstack([w_fore - offset, w_fore + offset])
    cov = np.empty((nw, nw))
    for a in range(nw):
        for b in range(nw):
            cov[a, b] = (corr if a != b else 1.0) * sigma[a] * sigma[b]
    scale = 1.0 - 0.16  # keeps total variance at sigma^2 given the offsets
    return Gmm(
        weights=np.array([0.5, 0.5]),
        means=means,
        covariances=np.array([scale * cov, scale * cov]),
    )


def make_slice(case: DispatchCase, total_loads, w_fore_rows, sigma_frac=0.06) -> ScenarioSlice:
    """Scenario window with loads split across the case's two load buses."""
    nt = len(total_loads)
    loads = np.array([[0.6 * L, 0.4 * L] for L in total_loads])
    w_fore = np.asarray(w_fore_rows, dtype=float)
    gmms = tuple(
        make_gmm(w_fore[t], sigma_frac * w_fore[t]) for t in range(nt)
    )
    dP = case.kappa * np.array([L for L in total_loads]) / case.p_base
    return ScenarioSlice(loads=loads, w_fore=w_fore, gmms=gmms, dP=dP)


@pytest.fixture
def case():
    return small_case()
