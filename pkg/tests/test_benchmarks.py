import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from benchmarks import (
    ALLOCATORS, MomentEstimates, equal_weights, estimate_moments, markowitz_weights,
    project_to_simplex, risk_contributions, risk_parity_weights,
)
from conftest import build_return_panel
from errors import InsufficientHistory, SingularCovariance


def _moments(mu, cov) -> MomentEstimates:
    return MomentEstimates(mu_hat=np.asarray(mu, dtype=float), cov_hat=np.asarray(cov, dtype=float), window=252)


def _random_cov(rng, n: int) -> np.ndarray:
    a = rng.normal(size=(n, n))
    return a @ a.T / n + 0.05 * np.eye(n)


def _sharpe(w, mu, cov) -> float:
    return float(w @ mu / np.sqrt(w @ cov @ w))


def _on_simplex(w) -> bool:
    return bool(np.all(w >= 0) and abs(w.sum() - 1.0) <= 1e-12)


class TestEstimateMoments:
    def test_annualized_sample_moments(self, random_return_panel):
        m = estimate_moments(random_return_panel, 300, window=252)
        sample = random_return_panel.returns[49:301]
        np.testing.assert_allclose(m.mu_hat, sample.mean(axis=0) * 252, rtol=1e-12)
        np.testing.assert_allclose(m.cov_hat, np.cov(sample, rowvar=False) * 252, rtol=1e-12)
        np.testing.assert_array_equal(m.cov_hat, m.cov_hat.T)

    def test_not_enough_history(self, random_return_panel):
        with pytest.raises(InsufficientHistory):
            estimate_moments(random_return_panel, 250, window=252)

    def test_rejects_asymmetric_covariance(self):
        with pytest.raises(ValueError):
            _moments([0.1, 0.1], [[0.04, 0.01], [0.0, 0.04]])

    def test_rejects_indefinite_covariance(self):
        with pytest.raises(ValueError):
            _moments([0.1, 0.1], [[0.04, 0.1], [0.1, 0.04]])


class TestProjectToSimplex:
    def test_point_already_on_simplex(self):
        w = np.array([0.2, 0.3, 0.5])
        np.testing.assert_allclose(project_to_simplex(w), w, atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(min_value=-10, max_value=10), min_size=1, max_size=8))
    def test_result_on_simplex(self, values):
        assert _on_simplex(project_to_simplex(np.array(values)))

    def test_negative_entries_clipped(self):
        np.testing.assert_allclose(project_to_simplex(np.array([2.0, -1.0])), [1.0, 0.0])


class TestMarkowitz:
    def test_uncorrelated_tangency(self):
        m = _moments([0.10, 0.05], np.diag([0.04, 0.04]))
        np.testing.assert_allclose(markowitz_weights(m).weights, [2 / 3, 1 / 3], atol=1e-4)

    @pytest.mark.parametrize("mu,var", [((0.08, 0.12), (0.01, 0.09)), ((0.2, 0.03), (0.05, 0.02))])
    def test_closed_form_when_interior(self, mu, var):
        mu, cov = np.array(mu), np.diag(var)
        raw = np.linalg.solve(cov, mu)
        np.testing.assert_allclose(markowitz_weights(_moments(mu, cov)).weights, raw / raw.sum(), atol=1e-4)

    def test_identical_assets(self):
        m = _moments([0.1, 0.1], [[0.04, 0.04], [0.04, 0.04]])
        result = markowitz_weights(m)
        assert _on_simplex(result.weights)
        assert _sharpe(result.weights, m.mu_hat, m.cov_hat) == pytest.approx(0.5, rel=1e-6)

    def test_dominated_asset_gets_nothing(self):
        m = _moments([0.10, -0.05], np.diag([0.04, 0.04]))
        np.testing.assert_allclose(markowitz_weights(m).weights, [1.0, 0.0], atol=1e-8)

    def test_all_negative_means_fall_back_to_min_variance(self):
        result = markowitz_weights(_moments([-0.1, -0.2], np.diag([0.04, 0.01])))
        assert result.diagnostics["min_variance_fallback"]
        np.testing.assert_allclose(result.weights, [0.2, 0.8], atol=1e-6)

    def test_single_asset(self):
        np.testing.assert_array_equal(markowitz_weights(_moments([0.1], [[0.04]])).weights, [1.0])

    def test_matches_grid_brute_force(self):
        rng = np.random.default_rng(31)
        units = 200
        grid = np.array([(a, b, units - a - b) for a in range(units + 1) for b in range(units + 1 - a)]) / units
        for _ in range(5):
            mu = rng.uniform(0.01, 0.15, 3)
            cov = _random_cov(rng, 3) * 0.05
            result = markowitz_weights(_moments(mu, cov))
            vols = np.sqrt(np.einsum("ij,jk,ik->i", grid, cov, grid))
            best = np.max(grid @ mu / vols)
            assert _sharpe(result.weights, mu, cov) >= best - 1e-4

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        m = _moments(rng.uniform(0, 0.1, 5), _random_cov(rng, 5))
        np.testing.assert_array_equal(markowitz_weights(m).weights, markowitz_weights(m).weights)


class TestRiskParity:
    def test_two_asset_inverse_volatility(self):
        w = risk_parity_weights(_moments([0, 0], np.diag([0.04, 0.01]))).weights
        np.testing.assert_allclose(w, [1 / 3, 2 / 3], atol=1e-8)

    def test_three_asset_inverse_volatility(self):
        w = risk_parity_weights(_moments([0, 0, 0], np.diag([1.0, 4.0, 16.0]) * 0.01)).weights
        np.testing.assert_allclose(w, [4 / 7, 2 / 7, 1 / 7], atol=1e-8)

    def test_identity(self):
        w = risk_parity_weights(_moments(np.zeros(4), np.eye(4))).weights
        np.testing.assert_allclose(w, np.full(4, 0.25), atol=1e-12)

    def test_equal_contributions_on_random_covariances(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            n = int(rng.integers(2, 9))
            cov = _random_cov(rng, n)
            result = risk_parity_weights(_moments(np.zeros(n), cov))
            assert _on_simplex(result.weights)
            assert np.max(np.abs(risk_contributions(result.weights, cov) - 1.0 / n)) <= 1e-8

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(4)
        cov = _random_cov(rng, 5)
        perm = rng.permutation(5)
        base = risk_parity_weights(_moments(np.zeros(5), cov)).weights
        moved = risk_parity_weights(_moments(np.zeros(5), cov[np.ix_(perm, perm)])).weights
        np.testing.assert_allclose(moved, base[perm], atol=1e-7)

    @pytest.mark.parametrize("scale", [1e-3, 0.5, 40.0])
    def test_scale_invariance(self, scale):
        cov = _random_cov(np.random.default_rng(6), 4)
        base = risk_parity_weights(_moments(np.zeros(4), cov)).weights
        scaled = risk_parity_weights(_moments(np.zeros(4), cov * scale)).weights
        np.testing.assert_allclose(scaled, base, atol=1e-7)

    def test_zero_variance_asset(self):
        with pytest.raises(SingularCovariance):
            risk_parity_weights(_moments([0, 0], [[0.0, 0.0], [0.0, 0.04]]))


def test_equal_weights_sum_to_one():
    for n in range(1, 20):
        w = equal_weights(n).weights
        assert abs(w.sum() - 1.0) <= 1e-15
        assert np.allclose(w, 1.0 / n)


def test_allocator_registry(random_return_panel):
    m = estimate_moments(random_return_panel, 399, window=252)
    for name, allocator in ALLOCATORS.items():
        result = allocator(m)
        assert result.allocator == name
        assert _on_simplex(result.weights)


def test_constant_shift_of_returns_keeps_risk_parity():
    rng = np.random.default_rng(8)
    returns = rng.normal(0.0, 0.01, size=(300, 3))
    a = risk_parity_weights(estimate_moments(build_return_panel(returns), 299)).weights
    b = risk_parity_weights(estimate_moments(build_return_panel(returns + 0.002), 299)).weights
    np.testing.assert_allclose(a, b, atol=1e-7)


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=-0.05, max_value=0.05, allow_nan=False))
def test_constant_asset_has_null_covariance(value):
    returns = np.random.default_rng(12).normal(0.0, 0.01, size=(260, 3))
    returns[:, 1] = value
    m = estimate_moments(build_return_panel(returns), 259)
    np.testing.assert_array_equal(m.cov_hat[1], 0.0)
    np.testing.assert_array_equal(m.cov_hat[:, 1], 0.0)
    with pytest.raises(SingularCovariance):
        risk_parity_weights(m)
