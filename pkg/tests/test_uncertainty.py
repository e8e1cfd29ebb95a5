import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import ndtri

from freqdispatch import uncertainty as unc
from freqdispatch.uncertainty import Gmm, UnivariateGmm


def two_comp_joint():
    weights = np.array([0.4, 0.6])
    means = np.array([[100.0, 50.0], [120.0, 40.0]])
    covs = np.array([
        [[25.0, 5.0], [5.0, 16.0]],
        [[36.0, -4.0], [-4.0, 9.0]],
    ])
    return Gmm(weights=weights, means=means, covariances=covs)


class TestConstruction:
    def test_weights_renormalized(self):
        g = Gmm(
            weights=np.array([1.0, 3.0]),
            means=np.zeros((2, 1)),
            covariances=np.ones((2, 1, 1)),
        )
        assert abs(g.weights.sum() - 1.0) <= 1e-12
        assert g.weights[1] == pytest.approx(0.75)

    def test_nonpositive_weight_rejected(self):
        with pytest.raises(ValueError):
            Gmm(np.array([0.0, 1.0]), np.zeros((2, 1)), np.ones((2, 1, 1)))

    def test_non_psd_covariance_rejected(self):
        with pytest.raises(ValueError):
            Gmm(
                np.array([1.0]),
                np.zeros((1, 2)),
                np.array([[[1.0, 2.0], [2.0, 1.0]]]),
            )

    def test_asymmetric_covariance_rejected(self):
        with pytest.raises(ValueError):
            Gmm(
                np.array([1.0]),
                np.zeros((1, 2)),
                np.array([[[1.0, 0.5], [0.0, 1.0]]]),
            )


class TestAffineProject:
    def test_unit_vector_gives_marginal(self):
        g = two_comp_joint()
        u = unc.affine_project(g, np.array([0.0, 1.0]))
        assert np.allclose(u.means, g.means[:, 1])
        assert np.allclose(u.variances, g.covariances[:, 1, 1])
        assert np.allclose(u.weights, g.weights)

    def test_zero_vector_point_mass(self):
        g = two_comp_joint()
        u = unc.affine_project(g, np.zeros(2), b=5.0)
        assert np.all(u.means == 5.0)
        assert np.all(u.variances == 0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            unc.affine_project(two_comp_joint(), np.ones(3))

    def test_monte_carlo_kolmogorov_distance(self):
        g = two_comp_joint()
        a = np.array([0.7, -0.3])
        u = unc.affine_project(g, a, b=2.0)
        rng = np.random.default_rng(0)
        draws = g.sample(1_000_000, rng) @ a + 2.0
        draws.sort()
        grid_probs = unc.cdf(u, draws)
        empirical = np.arange(1, len(draws) + 1) / len(draws)
        assert np.max(np.abs(grid_probs - empirical)) < 0.005


class TestCdfPdf:
    def test_limits(self):
        u = unc.affine_project(two_comp_joint(), np.array([1.0, 0.0]))
        lo = u.means.min() - 12 * u.pooled_sigma()
        hi = u.means.max() + 12 * u.pooled_sigma()
        assert unc.cdf(u, lo) <= 1e-12
        assert unc.cdf(u, hi) >= 1.0 - 1e-12

    def test_symmetric_mixture_median(self):
        u = UnivariateGmm(np.array([0.5, 0.5]), np.array([-1.0, 1.0]), np.array([0.25, 0.25]))
        assert unc.cdf(u, 0.0) == pytest.approx(0.5, abs=1e-14)

    def test_monotone_on_grid(self):
        u = unc.affine_project(two_comp_joint(), np.array([0.5, 0.5]))
        m, s = u.mean(), u.pooled_sigma()
        grid = np.linspace(m - 8 * s, m + 8 * s, 1000)
        vals = unc.cdf(u, grid)
        assert np.all(np.diff(vals) >= 0)

    def test_pdf_is_cdf_derivative(self):
        u = unc.affine_project(two_comp_joint(), np.array([0.3, 0.7]))
        m, s = u.mean(), u.pooled_sigma()
        grid = np.linspace(m - 4 * s, m + 4 * s, 200)
        h = 1e-5 * s
        numeric = (unc.cdf(u, grid + h) - unc.cdf(u, grid - h)) / (2 * h)
        assert np.max(np.abs(numeric - unc.pdf(u, grid))) < 1e-6

    def test_degenerate_component_step(self):
        u = UnivariateGmm(np.array([0.5, 0.5]), np.array([0.0, 10.0]), np.array([0.0, 1.0]))
        assert unc.cdf(u, -1e-9) == pytest.approx(0.0, abs=1e-12)
        assert unc.cdf(u, 0.0) == pytest.approx(0.5, abs=1e-12)


class TestQuantile:
    def test_standard_normal_five_percent(self):
        u = UnivariateGmm(np.array([1.0]), np.array([0.0]), np.array([1.0]))
        assert unc.quantile(u, 0.05) == pytest.approx(-1.6449, abs=1e-4)

    def test_symmetric_mixture_median(self):
        u = UnivariateGmm(np.array([0.5, 0.5]), np.array([-3.0, 3.0]), np.array([1.0, 4.0]))
        # symmetry center of the weight-balanced mixture with equal sigmas
        u2 = UnivariateGmm(np.array([0.5, 0.5]), np.array([-3.0, 3.0]), np.array([1.0, 1.0]))
        assert unc.quantile(u2, 0.5) == pytest.approx(0.0, abs=1e-9)

    def test_round_trip(self):
        u = unc.affine_project(two_comp_joint(), np.array([0.6, 0.4]), b=-1.0)
        for alpha in (0.01, 0.05, 0.5, 0.95, 0.99):
            x = unc.quantile(u, alpha)
            assert abs(unc.cdf(u, x) - alpha) <= 1e-10

    def test_well_separated_components(self):
        # near-flat CDF between the two lobes stresses the Newton safeguard
        u = UnivariateGmm(np.array([0.3, 0.7]), np.array([0.0, 1000.0]), np.array([1.0, 4.0]))
        for alpha in (0.05, 0.3, 0.31, 0.9):
            x = unc.quantile(u, alpha)
            assert abs(unc.cdf(u, x) - alpha) <= 1e-10

    def test_domain_errors(self):
        u = UnivariateGmm(np.array([1.0]), np.array([0.0]), np.array([1.0]))
        with pytest.raises(ValueError):
            unc.quantile(u, 0.0)
        with pytest.raises(ValueError):
            unc.quantile(u, 1.0)

    def test_all_degenerate_left_continuous_inverse(self):
        u = UnivariateGmm(np.array([0.25, 0.5, 0.25]), np.array([1.0, 2.0, 3.0]), np.zeros(3))
        assert unc.quantile(u, 0.2) == 1.0
        assert unc.quantile(u, 0.25) == 1.0
        assert unc.quantile(u, 0.26) == 2.0
        assert unc.quantile(u, 0.9) == 3.0

    def test_affine_invariance_scaling(self):
        g = two_comp_joint()
        k, b = 2.5, 7.0
        marginal = unc.affine_project(g, np.array([1.0, 0.0]))
        scaled = unc.affine_project(g, np.array([k, 0.0]), b=b)
        for alpha in (0.05, 0.5, 0.95):
            assert unc.quantile(scaled, alpha) == pytest.approx(
                k * unc.quantile(marginal, alpha) + b, abs=1e-8
            )


class TestFitEm:
    def test_generate_and_recover(self):
        rng = np.random.default_rng(1)
        n = 100_000
        comp = rng.random(n) < 0.3
        x = np.where(comp, rng.normal(0.0, 1.0, n), rng.normal(10.0, 2.0, n))
        gmm, trace = unc.fit_em(x[:, None], 2, seed=2)
        means = np.sort(gmm.means[:, 0])
        assert abs(means[0] - 0.0) < 0.1
        assert abs(means[1] - 10.0) < 0.1
        w = gmm.weights[np.argsort(gmm.means[:, 0])]
        assert abs(w[0] - 0.3) < 0.02

    def test_single_component_closed_form(self):
        rng = np.random.default_rng(3)
        x = rng.normal(5.0, 3.0, size=(2000, 1))
        gmm, _ = unc.fit_em(x, 1, seed=0)
        assert gmm.means[0, 0] == pytest.approx(x.mean(), abs=1e-9)
        assert gmm.covariances[0, 0, 0] == pytest.approx(x.var(), rel=1e-4)

    def test_log_likelihood_nondecreasing(self):
        rng = np.random.default_rng(4)
        x = np.concatenate([rng.normal(0, 1, 500), rng.normal(6, 2, 500)])
        _, trace = unc.fit_em(x[:, None], 2, seed=5)
        assert np.all(np.diff(trace.log_likelihood) >= -1e-9 * np.abs(trace.log_likelihood[:-1]))

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError):
            unc.fit_em(np.zeros((5, 1)), 2)


@settings(max_examples=40, deadline=None)
@given(
    w=st.floats(0.05, 0.95),
    m1=st.floats(-50, 50),
    m2=st.floats(-50, 50),
    s1=st.floats(0.1, 10),
    s2=st.floats(0.1, 10),
    alpha=st.floats(0.01, 0.99),
)
def test_quantile_round_trip_property(w, m1, m2, s1, s2, alpha):
    u = UnivariateGmm(
        np.array([w, 1.0 - w]), np.array([m1, m2]), np.array([s1**2, s2**2])
    )
    x = unc.quantile(u, alpha)
    assert abs(unc.cdf(u, x) - alpha) <= 1e-10
