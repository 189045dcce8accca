import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gamma_ica.errors import DegenerateScatter
from gamma_ica.prewhiten import (
    WhiteningModel,
    fixed_point_update,
    moment_estimates,
    prewhiten_fixed_point,
    whiten,
)


def resubstitute(X, mu, sigma, gamma):
    """Independent evaluation of the weighted moment equations at (mu, sigma)."""
    inv = np.linalg.inv(sigma)
    D = X - mu[:, None]
    w = np.exp(-0.5 * gamma * np.einsum("in,ij,jn->n", D, inv, D))
    mu_new = (X * w).sum(axis=1) / w.sum()
    Dn = X - mu_new[:, None]
    sigma_new = (1 + gamma) * np.einsum("n,in,jn->ij", w, Dn, Dn) / w.sum()
    return mu_new, sigma_new


def contaminated(rng, n=300, frac=0.2, p=2):
    X = rng.normal(size=(p, n))
    m = int(frac * n)
    X[:, :m] = rng.normal(loc=8.0, scale=0.5, size=(p, m))
    return X


class TestFixedPoint:
    def test_gamma_zero_is_moment_estimates(self, rng):
        X = rng.normal(size=(3, 50)) * 2 + 1
        model = prewhiten_fixed_point(X, 0.0)
        mu, sigma = X.mean(axis=1), np.cov(X, bias=True)
        np.testing.assert_array_equal(model.mu, moment_estimates(X)[0])
        np.testing.assert_allclose(model.mu, mu, rtol=1e-15)
        np.testing.assert_allclose(model.sigma, sigma, rtol=1e-14)

    @pytest.mark.parametrize("gamma", [0.1, 0.5, 1.0])
    def test_fixed_point_residual(self, rng, gamma):
        X = contaminated(rng)
        model = prewhiten_fixed_point(X, gamma, tol=1e-12)
        assert model.converged
        mu, sigma = resubstitute(X, model.mu, model.sigma, gamma)
        np.testing.assert_allclose(mu, model.mu, atol=1e-8)
        np.testing.assert_allclose(sigma, model.sigma, atol=1e-8)

    def test_simultaneous_reaches_same_fixed_point(self, rng):
        X = contaminated(rng)
        a = prewhiten_fixed_point(X, 0.3, tol=1e-12)
        b = prewhiten_fixed_point(X, 0.3, tol=1e-12, simultaneous=True)
        np.testing.assert_allclose(a.mu, b.mu, atol=1e-8)
        np.testing.assert_allclose(a.sigma, b.sigma, atol=1e-8)

    def test_robust_to_outliers(self, rng):
        X = contaminated(rng, n=500, frac=0.2)
        robust = prewhiten_fixed_point(X, 0.5)
        moment = prewhiten_fixed_point(X, 0.0)
        assert np.linalg.norm(robust.mu) < 0.2
        assert np.linalg.norm(moment.mu) > 1.0
        np.testing.assert_allclose(robust.sigma, np.eye(2), atol=0.25)

    def test_fisher_consistent_on_gaussian_data(self, rng):
        # the (1 + gamma) factor makes Sigma unbiased at the normal model
        L = np.array([[2.0, 0.0], [1.0, 0.5]])
        X = L @ rng.normal(size=(2, 40000)) + np.array([[1.0], [-2.0]])
        model = prewhiten_fixed_point(X, 0.5)
        np.testing.assert_allclose(model.mu, [1.0, -2.0], atol=0.05)
        np.testing.assert_allclose(model.sigma, L @ L.T, rtol=0.05, atol=0.03)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_affine_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        X = contaminated(rng, n=120)
        B = rng.normal(size=(2, 2)) + 2 * np.eye(2)
        b = rng.normal(size=2)
        base = prewhiten_fixed_point(X, 0.3, tol=1e-13)
        moved = prewhiten_fixed_point(B @ X + b[:, None], 0.3, tol=1e-13)
        np.testing.assert_allclose(moved.mu, B @ base.mu + b, atol=1e-6)
        np.testing.assert_allclose(moved.sigma, B @ base.sigma @ B.T, rtol=1e-6, atol=1e-6)

    def test_update_step_matches_oracle(self, rng):
        X = contaminated(rng)
        mu, sigma = moment_estimates(X)
        got = fixed_point_update(X, mu, sigma, 0.4)
        want = resubstitute(X, mu, sigma, 0.4)
        np.testing.assert_allclose(got[0], want[0], rtol=1e-12)
        np.testing.assert_allclose(got[1], want[1], rtol=1e-12)

    def test_non_convergence_is_flagged(self, rng):
        model = prewhiten_fixed_point(contaminated(rng), 0.5, max_iter=2)
        assert not model.converged
        assert model.iterations == 2


class TestErrors:
    def test_degenerate_weights(self, rng):
        X = rng.normal(size=(2, 100))
        with pytest.raises(DegenerateScatter):
            prewhiten_fixed_point(X, 1.0, init=(np.array([50.0, 50.0]), 1e-4 * np.eye(2)))

    def test_negative_gamma(self, rng):
        with pytest.raises(ValueError):
            prewhiten_fixed_point(rng.normal(size=(2, 10)), -0.1)

    def test_too_few_samples(self, rng):
        with pytest.raises(ValueError):
            prewhiten_fixed_point(rng.normal(size=(3, 3)), 0.1)

    def test_non_finite(self):
        X = np.ones((2, 10))
        X[0, 3] = np.nan
        with pytest.raises(ValueError):
            prewhiten_fixed_point(X, 0.1)


class TestWhiten:
    def test_whitened_moments(self, rng):
        X = rng.normal(size=(3, 200)) * [[1.0], [5.0], [0.2]] + 3.0
        Z = whiten(X, prewhiten_fixed_point(X, 0.0))
        np.testing.assert_allclose(Z.mean(axis=1), 0, atol=1e-12)
        np.testing.assert_allclose(np.cov(Z, bias=True), np.eye(3), atol=1e-12)

    def test_dimension_mismatch(self, rng):
        model = prewhiten_fixed_point(rng.normal(size=(2, 20)), 0.0)
        with pytest.raises(ValueError):
            whiten(rng.normal(size=(3, 5)), model)

    def test_dict_round_trip(self, rng):
        model = prewhiten_fixed_point(contaminated(rng), 0.2)
        back = WhiteningModel.from_dict(model.to_dict())
        np.testing.assert_array_equal(back.mu, model.mu)
        np.testing.assert_array_equal(back.sigma, model.sigma)
        np.testing.assert_array_equal(back.sigma_inv_sqrt, model.sigma_inv_sqrt)
        assert back.gamma == model.gamma and back.converged == model.converged
