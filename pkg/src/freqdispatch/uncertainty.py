"""Gaussian-mixture modeling of joint renewable forecast uncertainty.

Mixtures are closed under affine maps: a scalar projection a.W + b of a
joint mixture is again a univariate mixture with component means a.mu + b
and variances a.Sigma.a.  That closure lets every probabilistic constraint
on a linear combination of unit outputs be rewritten as a deterministic
bound at a quantile of the projected mixture, which is what the dispatch
builder consumes.  Quantiles are found by safeguarded Newton iteration on
the mixture CDF.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, ndtr, ndtri

__all__ = [
    "Gmm",
    "UnivariateGmm",
    "affine_project",
    "cdf",
    "pdf",
    "quantile",
    "fit_em",
    "EmTrace",
]

_WEIGHT_TOL = 1e-12
_VARIANCE_CLAMP = 1e-12
_QUANTILE_TOL = 1e-10


@dataclass(frozen=True)
class Gmm:
    """Joint mixture: weights (M,), means (M, n), covariances (M, n, n)."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        cov = np.asarray(self.covariances, dtype=float)
        if w.ndim != 1 or mu.ndim != 2 or cov.ndim != 3:
            raise ValueError("expected weights (M,), means (M,n), covariances (M,n,n)")
        if not (len(w) == len(mu) == len(cov)) or cov.shape[1:] != (mu.shape[1],) * 2:
            raise ValueError("inconsistent component shapes")
        if np.any(w <= 0):
            raise ValueError("component weights must be strictly positive")
        if not np.all(np.isfinite(w)) or not np.all(np.isfinite(mu)) or not np.all(np.isfinite(cov)):
            raise ValueError("mixture parameters must be finite")
        if cov.shape[1]:  # dim-0 mixtures (no uncertain units) skip the checks
            if np.max(np.abs(cov - np.swapaxes(cov, 1, 2))) > 1e-9 * (1 + np.max(np.abs(cov))):
                raise ValueError("covariance matrices must be symmetric")
            eigs = np.linalg.eigvalsh(cov)
            if np.min(eigs) < -1e-9 * max(1.0, float(np.max(np.abs(cov)))):
                raise ValueError("covariance matrices must be positive semidefinite")
        w = w / w.sum()
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)
        for arr in (w, mu, cov):
            arr.setflags(write=False)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        counts = rng.multinomial(n, self.weights)
        draws = []
        for m, k in enumerate(counts):
            if k:
                draws.append(rng.multivariate_normal(self.means[m], self.covariances[m], size=k))
        out = np.vstack(draws)
        return out[rng.permutation(n)]


@dataclass(frozen=True)
class UnivariateGmm:
    """Scalar mixture: weights, means, variances, all shape (M,)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        var = np.asarray(self.variances, dtype=float)
        if not (w.shape == mu.shape == var.shape) or w.ndim != 1:
            raise ValueError("weights, means, variances must share shape (M,)")
        if np.any(w <= 0):
            raise ValueError("component weights must be strictly positive")
        if np.any(var < 0):
            raise ValueError("variances must be nonnegative")
        w = w / w.sum()
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)
        for arr in (w, mu, var):
            arr.setflags(write=False)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def mean(self) -> float:
        return float(self.weights @ self.means)

    def pooled_sigma(self) -> float:
        m = self.mean()
        second = self.weights @ (self.variances + self.means**2)
        return float(np.sqrt(max(second - m * m, 0.0)))


def affine_project(g: Gmm, a, b: float = 0.0) -> UnivariateGmm:
    """Project the joint mixture through x -> a.x + b."""
    a = np.asarray(a, dtype=float)
    if a.shape != (g.dim,):
        raise ValueError(f"coefficient vector must have shape ({g.dim},)")
    means = g.means @ a + b
    variances = np.einsum("i,mij,j->m", a, g.covariances, a)
    if np.min(variances) < -_VARIANCE_CLAMP:
        raise ValueError(
            f"projected variance {variances.min():.3e} is negative beyond tolerance"
        )
    variances = np.clip(variances, 0.0, None)
    return UnivariateGmm(weights=g.weights.copy(), means=means, variances=variances)


def cdf(u: UnivariateGmm, x) -> np.ndarray | float:
    """Mixture CDF; degenerate components contribute a unit step at their mean."""
    x_arr = np.asarray(x, dtype=float)
    sigma = np.sqrt(u.variances)
    z = np.subtract.outer(x_arr, u.means)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.where(
            sigma > 0.0,
            ndtr(z / np.where(sigma > 0.0, sigma, 1.0)),
            (z >= 0.0).astype(float),
        )
    out = vals @ u.weights
    return float(out) if np.isscalar(x) or x_arr.ndim == 0 else out


def pdf(u: UnivariateGmm, x) -> np.ndarray | float:
    """Mixture density; degenerate components contribute nothing (atoms)."""
    x_arr = np.asarray(x, dtype=float)
    sigma = np.sqrt(u.variances)
    z = np.subtract.outer(x_arr, u.means)
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = np.where(
            sigma > 0.0,
            np.exp(-0.5 * (z / np.where(sigma > 0.0, sigma, 1.0)) ** 2)
            / (np.sqrt(2.0 * np.pi) * np.where(sigma > 0.0, sigma, 1.0)),
            0.0,
        )
    out = dens @ u.weights
    return float(out) if np.isscalar(x) or x_arr.ndim == 0 else out


def quantile(u: UnivariateGmm, alpha: float) -> float:
    """Solve cdf(x) = alpha to within 1e-10 in probability.

    Newton iteration on cdf - alpha with the pdf as derivative, started at
    the pooled-normal estimate and safeguarded by bisection on a bracket
    [min(mu) - 12 sigma_max, max(mu) + 12 sigma_max]; falls back to the
    left-continuous inverse when every component is degenerate.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly between 0 and 1")
    sigma = np.sqrt(u.variances)
    if np.all(sigma == 0.0):
        order = np.argsort(u.means, kind="stable")
        cum = np.cumsum(u.weights[order])
        idx = int(np.searchsorted(cum, alpha, side="left"))
        return float(u.means[order][min(idx, len(order) - 1)])

    sig_max = float(sigma.max())
    lo = float(u.means.min()) - 12.0 * sig_max
    hi = float(u.means.max()) + 12.0 * sig_max
    x = u.mean() + u.pooled_sigma() * float(ndtri(alpha))
    x = min(max(x, lo), hi)
    f_lo = cdf(u, lo) - alpha
    for _ in range(200):
        f = cdf(u, x) - alpha
        if abs(f) <= _QUANTILE_TOL:
            return float(x)
        if f * f_lo < 0:
            hi = x
        else:
            lo = x
        d = pdf(u, x)
        if d > 1e-300:
            x_new = x - f / d
        else:
            x_new = 0.5 * (lo + hi)
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        x = x_new
    f = cdf(u, x) - alpha
    if abs(f) <= _QUANTILE_TOL:
        return float(x)
    raise RuntimeError(f"quantile iteration stalled at |cdf-alpha| = {abs(f):.2e}")


@dataclass(frozen=True)
class EmTrace:
    """Fit diagnostics: per-iteration log-likelihood and iteration count."""

    log_likelihood: np.ndarray
    n_iters: int


def fit_em(
    samples: np.ndarray,
    n_components: int,
    max_iters: int = 200,
    tol: float = 1e-8,
    seed: int = 0,
) -> tuple[Gmm, EmTrace]:
    """Fit a joint mixture by expectation-maximization.

    Initialization is k-means style: random distinct samples as centers,
    a few Lloyd passes, then component moments from the induced clusters.
    Covariances are floored at 1e-6 of the per-coordinate sample variance;
    a component that loses all responsibility is re-seeded from a random
    sample.  The returned trace's log-likelihood is nondecreasing.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, dim = X.shape
    M = n_components
    if n < 10 * M * dim:
        raise ValueError(f"need at least {10 * M * dim} samples to fit {M} components in {dim}-d")
    rng = np.random.default_rng(seed)

    centers = X[rng.choice(n, size=M, replace=False)]
    for _ in range(10):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        for m in range(M):
            mask = labels == m
            if mask.any():
                centers[m] = X[mask].mean(axis=0)

    floor = 1e-6 * X.var(axis=0)
    weights = np.full(M, 1.0 / M)
    means = centers.copy()
    covs = np.empty((M, dim, dim))
    for m in range(M):
        mask = labels == m
        pts = X[mask] if mask.sum() > dim else X
        covs[m] = np.cov(pts.T).reshape(dim, dim) + np.diag(floor)
        weights[m] = max(mask.mean(), 1.0 / n)
    weights /= weights.sum()

    ll_trace = []
    prev_ll = -np.inf
    for it in range(max_iters):
        # E step in log space
        log_resp = np.empty((n, M))
        for m in range(M):
            diff = X - means[m]
            chol = np.linalg.cholesky(covs[m])
            sol = np.linalg.solve(chol, diff.T)
            maha = (sol**2).sum(axis=0)
            logdet = 2.0 * np.log(np.diag(chol)).sum()
            log_resp[:, m] = (
                np.log(weights[m]) - 0.5 * (maha + logdet + dim * np.log(2.0 * np.pi))
            )
        ll = float(logsumexp(log_resp, axis=1).sum())
        ll_trace.append(ll)
        resp = np.exp(log_resp - logsumexp(log_resp, axis=1, keepdims=True))

        # M step
        nk = resp.sum(axis=0)
        for m in range(M):
            if nk[m] < 1e-10:
                means[m] = X[rng.integers(n)]
                covs[m] = np.diag(X.var(axis=0) + floor)
                nk[m] = 1.0
                continue
            means[m] = resp[:, m] @ X / nk[m]
            diff = X - means[m]
            covs[m] = (resp[:, m] * diff.T) @ diff / nk[m] + np.diag(floor)
        weights = nk / nk.sum()

        if ll - prev_ll < tol * (1.0 + abs(ll)) and it > 0:
            break
        prev_ll = ll

    gmm = Gmm(weights=weights, means=means, covariances=covs)
    return gmm, EmTrace(log_likelihood=np.array(ll_trace), n_iters=len(ll_trace))
