"""Aggregated system-frequency-response model and its security metrics.

All online units are lumped into one equivalent machine whose post-step
frequency deviation is the second-order-plus-zero response

    df(s)/dP(s) = -(1/2HT) * (1 + T s) / (s^2 + 2*zeta*wn*s + wn^2)

with wn = sqrt((D+R)/2HT) and zeta = (2H + (D+F)T) / (2*sqrt(2HT(D+R))).
Three metrics are exposed in closed form: the maximum rate of change of
frequency f0*dP/2H, the steady-state deviation f0*dP/(R+D), and the nadir

    df_max = f0*dP/(R+D) * (1 + exp(-zeta*wn*t_nadir) * sqrt(T(R-F)/2H))

where t_nadir is the first positive stationary time of the step response.
A fixed-step RK4 time-domain simulation serves as the independent oracle,
and `certify_convexity` checks numerically that df_max is convex in (H, D)
over a box of realistic parameters via finite-difference Hessians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "AggregatedSfrParams",
    "FrequencyLimits",
    "FrequencyMetrics",
    "LimitCheck",
    "ConvexityBox",
    "ConvexityReport",
    "DegenerateSystemError",
    "InvalidParametersError",
    "IntegrationError",
    "derived_modes",
    "rocof_max",
    "delta_f_ss",
    "delta_f_nadir",
    "nadir_deviation",
    "simulate_step_response",
    "check_limits",
    "certify_convexity",
]


class DegenerateSystemError(ValueError):
    """Raised when D + R = 0, i.e. the system has no synchronizing gain."""


class InvalidParametersError(ValueError):
    """Raised for parameter combinations outside the model's validity."""


class IntegrationError(RuntimeError):
    """Raised when the time-domain simulation produces non-finite state."""


@dataclass(frozen=True)
class AggregatedSfrParams:
    """System-level aggregate parameters of the frequency-response model.

    H: aggregate inertia (s, on system base).
    D: aggregate damping (p.u.) = load damping plus converter droop.
    R: aggregate thermal droop gain (p.u.).
    F: aggregate turbine fraction gain (p.u.); must not exceed R.
    T: common governor-turbine time constant (s).
    """

    H: float
    D: float
    R: float
    F: float
    T: float

    def __post_init__(self) -> None:
        if not (self.H > 0 and self.T > 0):
            raise InvalidParametersError("H and T must be strictly positive")
        if self.R < 0 or self.D < 0:
            raise InvalidParametersError("R and D must be nonnegative")
        if self.F > self.R:
            raise InvalidParametersError(
                f"turbine fraction gain F={self.F} exceeds droop gain R={self.R}"
            )


@dataclass(frozen=True)
class FrequencyLimits:
    """Allowable ranges for the three frequency-security metrics."""

    f0: float
    f_max_lim: float
    rocof_lim: float
    f_ss_lim: float

    def __post_init__(self) -> None:
        for name in ("f0", "f_max_lim", "rocof_lim", "f_ss_lim"):
            if not getattr(self, name) > 0:
                raise InvalidParametersError(f"{name} must be strictly positive")
        if self.f_ss_lim > self.f_max_lim:
            raise InvalidParametersError("f_ss_lim must not exceed f_max_lim")


@dataclass(frozen=True)
class FrequencyMetrics:
    """Evaluated security metrics for one disturbance (all magnitudes)."""

    rocof_max: float
    delta_f_ss: float
    delta_f_max: float
    t_nadir: float
    omega_n: float
    zeta: float


@dataclass(frozen=True)
class LimitCheck:
    """Per-metric pass/fail of a FrequencyMetrics against FrequencyLimits."""

    rocof_ok: bool
    ss_ok: bool
    nadir_ok: bool

    @property
    def all_ok(self) -> bool:
        return self.rocof_ok and self.ss_ok and self.nadir_ok


def derived_modes(p: AggregatedSfrParams) -> tuple[float, float]:
    """Natural frequency wn (rad/s) and damping ratio zeta of the aggregate."""
    if p.D + p.R == 0:
        raise DegenerateSystemError("D + R = 0: no synchronizing gain")
    omega_n = math.sqrt((p.D + p.R) / (2.0 * p.H * p.T))
    zeta = (2.0 * p.H + (p.D + p.F) * p.T) / (
        2.0 * math.sqrt(2.0 * p.H * p.T * (p.D + p.R))
    )
    return omega_n, zeta


def rocof_max(p: AggregatedSfrParams, dP: float, f0: float) -> float:
    """Maximum rate of change of frequency f0*dP/2H (Hz/s), at t = 0+."""
    if dP < 0:
        raise InvalidParametersError("disturbance magnitude must be nonnegative")
    return f0 * dP / (2.0 * p.H)


def delta_f_ss(p: AggregatedSfrParams, dP: float, f0: float) -> float:
    """Steady-state frequency deviation f0*dP/(R+D) (Hz)."""
    if p.D + p.R == 0:
        raise DegenerateSystemError("D + R = 0: no synchronizing gain")
    if dP < 0:
        raise InvalidParametersError("disturbance magnitude must be nonnegative")
    return f0 * dP / (p.R + p.D)


def delta_f_nadir(p: AggregatedSfrParams, dP: float, f0: float) -> tuple[float, float]:
    """Maximum transient deviation (Hz) and the time it occurs (s).

    Uses the closed form for the oscillatory case zeta < 1, with the atan
    branch chosen so t_nadir is the first positive stationary time.  For
    zeta >= 1 the closed form's atan argument is no longer real, so the
    maximum is located on the simulated step response instead; when the
    response is monotone its supremum is the steady-state value, approached
    asymptotically, and t_nadir is reported as infinity.
    """
    if p.D + p.R == 0:
        raise DegenerateSystemError("D + R = 0: no synchronizing gain")
    if dP < 0:
        raise InvalidParametersError("disturbance magnitude must be nonnegative")
    omega_n, zeta = derived_modes(p)
    if zeta < 1.0:
        omega_r = omega_n * math.sqrt(1.0 - zeta * zeta)
        # atan2 lands in (0, pi); adds pi automatically when zw - 1/T < 0
        t_nadir = math.atan2(omega_r, zeta * omega_n - 1.0 / p.T) / omega_r
        amp = math.sqrt(p.T * (p.R - p.F) / (2.0 * p.H))
        dfss = f0 * dP / (p.R + p.D)
        return dfss * (1.0 + math.exp(-zeta * omega_n * t_nadir) * amp), t_nadir
    t, df = simulate_step_response(p, dP, f0)
    i = int(np.argmax(np.abs(df)))
    dfss = f0 * dP / (p.R + p.D)
    if abs(df[i]) <= dfss:
        return dfss, math.inf
    return float(abs(df[i])), float(t[i])


def _nadir_parts(H, D, T, R, F):
    """Unit-scale (f0*dP = 1) nadir split as (base, excess).

    base = 1/(R+D) is the steady-state deviation; excess is the overshoot
    term base * sqrt(T(R-F)/2H) * exp(-zw * t_nadir).  Keeping the two parts
    separate preserves full relative precision of the exponentially small
    excess, which plain evaluation of base*(1+...) would round away; the
    finite-difference Hessians in `certify_convexity` need that precision.

    For zeta >= 1 the stationary-time formula continues analytically
    (atan -> atanh); when no positive stationary time exists the response
    is monotone and the nadir equals the steady-state value (excess = 0).
    """
    H, D, T, R, F = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (H, D, T, R, F))
    )
    base = 1.0 / (R + D)
    wn2 = (R + D) / (2.0 * H * T)
    zw = (2.0 * H + (D + F) * T) / (4.0 * H * T)  # zeta * omega_n
    g = zw - 1.0 / T
    disc = wn2 - zw * zw  # omega_r^2, negative when overdamped
    amp = np.sqrt(T * (R - F) / (2.0 * H))

    phi = np.full_like(base, np.inf)  # exp(-phi): no stationary point -> 0
    safe = np.where(disc > 0, disc, 1.0)

    osc_left = (disc > 0) & (g <= 0)
    if np.any(osc_left):
        wr = np.sqrt(safe)
        phi = np.where(osc_left, zw * np.arctan2(wr, g) / wr, phi)

    pos = g > 0
    v = np.divide(disc, g * g, out=np.zeros_like(base), where=pos)
    # atan(sqrt(v))/sqrt(v) and atanh(sqrt(-v))/sqrt(-v) share one power
    # series in v; use it near v = 0 where both direct forms cancel badly
    series = pos & (np.abs(v) < 1e-2)
    if np.any(series):
        s = np.zeros_like(base)
        for k in range(9, -1, -1):
            s = s * (-v) + 1.0 / (2 * k + 1)
        phi = np.where(series, zw * s / np.where(pos, g, 1.0), phi)
    osc_right = pos & (v >= 1e-2)
    if np.any(osc_right):
        wr = np.sqrt(safe)
        phi = np.where(osc_right, zw * np.arctan2(wr, g) / wr, phi)
    mono_or_stat = pos & (v <= -1e-2)
    if np.any(mono_or_stat):
        wt = np.sqrt(np.where(mono_or_stat, -disc, 1.0))
        ratio = np.divide(wt, g, out=np.zeros_like(base), where=mono_or_stat)
        stat = mono_or_stat & (ratio < 1.0)  # else monotone, phi stays inf
        phi = np.where(
            stat,
            zw * np.arctanh(np.where(stat, ratio, 0.0)) / wt,
            phi,
        )

    with np.errstate(under="ignore"):
        excess = base * amp * np.exp(-phi)
    return base, excess


def nadir_deviation(H, D, T, R, F, dP, f0):
    """Vectorized maximum transient deviation (Hz) over arrays of (H, D).

    T, R, F may be scalars or arrays broadcastable against H and D.
    Matches `delta_f_nadir` for zeta < 1 and the simulated maximum for
    zeta >= 1 (analytic continuation of the stationary-time formula).
    """
    base, excess = _nadir_parts(H, D, T, R, F)
    return f0 * dP * (base + excess)


def simulate_step_response(
    p: AggregatedSfrParams,
    dP: float,
    f0: float,
    t_end: float = 60.0,
    dt: float = 1e-3,
) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-step RK4 integration of the step response; returns (t, df).

    Integrates the controllable-canonical realization of the deviation
    transfer function under a step of size dP; df is in Hz (scaled by f0).
    The RK4 one-step map of this LTI system is a constant affine map, so
    the recurrence is evaluated chunk-wise with precomputed step powers.
    """
    if dt <= 0:
        raise InvalidParametersError("dt must be strictly positive")
    if t_end <= 0:
        raise InvalidParametersError("t_end must be strictly positive")
    if dP < 0:
        raise InvalidParametersError("disturbance magnitude must be nonnegative")
    a0 = (p.D + p.R) / (2.0 * p.H * p.T)
    a1 = (2.0 * p.H + (p.D + p.F) * p.T) / (2.0 * p.H * p.T)
    c0 = -1.0 / (2.0 * p.H * p.T)
    c1 = -1.0 / (2.0 * p.H)
    # augmented state (x1, x2, u): one RK4 step is z <- M z
    A = np.array([[0.0, 1.0, 0.0], [-a0, -a1, 1.0], [0.0, 0.0, 0.0]])
    hA = dt * A
    M = np.eye(3) + hA + hA @ hA / 2.0 + hA @ hA @ hA / 6.0 + hA @ hA @ hA @ hA / 24.0

    n_steps = int(round(t_end / dt))
    chunk = 512
    powers = np.empty((chunk + 1, 3, 3))
    powers[0] = np.eye(3)
    for i in range(chunk):
        powers[i + 1] = M @ powers[i]

    df = np.empty(n_steps + 1)
    df[0] = 0.0
    z = np.array([0.0, 0.0, dP])
    done = 0
    while done < n_steps:
        k = min(chunk, n_steps - done)
        states = powers[1 : k + 1] @ z
        df[done + 1 : done + 1 + k] = f0 * (c0 * states[:, 0] + c1 * states[:, 1])
        z = states[-1]
        done += k
    if not np.all(np.isfinite(df)):
        raise IntegrationError("non-finite state in step-response integration")
    t = np.arange(n_steps + 1) * dt
    return t, df


def frequency_metrics(p: AggregatedSfrParams, dP: float, f0: float) -> FrequencyMetrics:
    """Evaluate all three security metrics plus the modal quantities."""
    omega_n, zeta = derived_modes(p)
    dfmax, t_nadir = delta_f_nadir(p, dP, f0)
    return FrequencyMetrics(
        rocof_max=rocof_max(p, dP, f0),
        delta_f_ss=delta_f_ss(p, dP, f0),
        delta_f_max=dfmax,
        t_nadir=t_nadir,
        omega_n=omega_n,
        zeta=zeta,
    )


def check_limits(m: FrequencyMetrics, lim: FrequencyLimits) -> LimitCheck:
    """Inclusive comparison of each metric against its limit."""
    return LimitCheck(
        rocof_ok=m.rocof_max <= lim.rocof_lim,
        ss_ok=m.delta_f_ss <= lim.f_ss_lim,
        nadir_ok=m.delta_f_max <= lim.f_max_lim,
    )


@dataclass(frozen=True)
class ConvexityBox:
    """Sampling ranges for the convexity certificate.

    Defaults cover realistic power-system aggregates; the turbine fraction
    is sampled as a ratio f_ratio with F = f_ratio * R so F <= R holds by
    construction.
    """

    h: tuple[float, float] = (0.1, 20.0)
    d: tuple[float, float] = (0.0, 15.0)
    t: tuple[float, float] = (0.1, 20.0)
    r: tuple[float, float] = (1.0, 100.0)
    f_ratio: tuple[float, float] = (0.0, 0.8)

    def __post_init__(self) -> None:
        for name in ("h", "d", "t", "r", "f_ratio"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise InvalidParametersError(f"range {name} must satisfy lo < hi")


@dataclass(frozen=True)
class ConvexityReport:
    n_samples: int
    min_eigenvalue: float
    n_violations: int


def certify_convexity(
    box: ConvexityBox | None = None,
    n_samples: int = 100_000,
    fd_step: float = 1e-4,
    psd_tol: float = 1e-8,
    seed: int = 0,
    deviation_fn=None,
) -> ConvexityReport:
    """Sample the box and test positive semidefiniteness of the nadir Hessian.

    For each uniform sample of (H, D, T, R, f_ratio) the 2x2 Hessian of the
    maximum deviation with respect to (H, D) is formed by central finite
    differences with steps fd_step relative to each coordinate's range.  A
    sample violates convexity when its minimum eigenvalue drops below
    -psd_tol times the magnitude of its maximum eigenvalue.

    deviation_fn(H, D, T, R, F) -> values is a test hook replacing the
    built-in nadir evaluation (plain, uncompensated differencing).
    """
    box = box or ConvexityBox()
    if n_samples < 1:
        raise InvalidParametersError("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    H = rng.uniform(*box.h, n_samples)
    D = rng.uniform(*box.d, n_samples)
    T = rng.uniform(*box.t, n_samples)
    R = rng.uniform(*box.r, n_samples)
    F = rng.uniform(*box.f_ratio, n_samples) * R

    if deviation_fn is None:
        parts = lambda h, d: _nadir_parts(h, d, T, R, F)  # noqa: E731
    else:
        parts = lambda h, d: (deviation_fn(h, d, T, R, F), 0.0)  # noqa: E731

    hh = fd_step * (box.h[1] - box.h[0])
    hd = fd_step * (box.d[1] - box.d[0])
    b00, e00 = parts(H, D)
    bp0, ep0 = parts(H + hh, D)
    bm0, em0 = parts(H - hh, D)
    b0p, e0p = parts(H, D + hd)
    b0m, e0m = parts(H, D - hd)
    bpp, epp = parts(H + hh, D + hd)
    bpm, epm = parts(H + hh, D - hd)
    bmp, emp = parts(H - hh, D + hd)
    bmm, emm = parts(H - hh, D - hd)

    # differencing base and excess separately is algebraically the same
    # stencil but keeps the tiny excess at full relative precision
    hxx = (bp0 - 2.0 * b00 + bm0) / hh**2 + (ep0 - 2.0 * e00 + em0) / hh**2
    hyy = (b0p - 2.0 * b00 + b0m) / hd**2 + (e0p - 2.0 * e00 + e0m) / hd**2
    hxy = (bpp - bpm - bmp + bmm) / (4.0 * hh * hd) + (epp - epm - emp + emm) / (
        4.0 * hh * hd
    )

    half_tr = 0.5 * (hxx + hyy)
    radius = np.sqrt((0.5 * (hxx - hyy)) ** 2 + hxy**2)
    lam_min = half_tr - radius
    lam_max = half_tr + radius
    violations = lam_min < -psd_tol * np.abs(lam_max)
    return ConvexityReport(
        n_samples=n_samples,
        min_eigenvalue=float(lam_min.min()),
        n_violations=int(violations.sum()),
    )
