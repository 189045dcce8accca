import math

import numpy as np
import pytest
from scipy.stats import gaussian_kde

from conftest import uniform_mixture
from gamma_ica.errors import DegenerateScatter
from gamma_ica.optimizer import OptimizerConfig, fit_ica
from gamma_ica.prewhiten import prewhiten_fixed_point, whiten
from gamma_ica.selection import (
    DEFAULT_GRID,
    CvConfig,
    CvResult,
    _summarise,
    fold_indices,
    gamma_cross_entropy_gauss,
    gamma_cross_entropy_ica,
    parse_grid,
    screen_grid,
    select_gamma_ica,
    select_gamma_prewhiten,
)
from gamma_ica.source_models import SUB_GAUSSIAN, make_model


def contaminated_2d(seed, n=200, frac=0.2):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(2, n))
    m = int(frac * n)
    X[:, :m] += rng.normal(loc=6.0, scale=1.0, size=(2, m))
    return X


class TestGrid:
    def test_range(self):
        assert parse_grid("0.05:0.05:0.2") == [0.05, 0.1, 0.15, 0.2]
        assert len(DEFAULT_GRID) == 20 and DEFAULT_GRID[-1] == 1.0

    def test_list(self):
        assert parse_grid("0.3, 0.1,1") == [0.3, 0.1, 1.0]

    @pytest.mark.parametrize("text", ["0:0:1", "1:0.1:0.5", "0.1:0.2"])
    def test_invalid(self, text):
        with pytest.raises(ValueError):
            parse_grid(text)

    def test_config_sorts_and_validates(self):
        assert CvConfig(grid=(0.5, 0.1)).grid == (0.1, 0.5)
        for bad in [dict(grid=()), dict(grid=(0.0,)), dict(grid=(0.1, 0.1)), dict(k_folds=1), dict(gamma0=0)]:
            with pytest.raises(ValueError):
                CvConfig(**bad)


class TestFolds:
    def test_partition(self):
        folds = fold_indices(103, 5, seed=4)
        joined = np.sort(np.concatenate(folds))
        np.testing.assert_array_equal(joined, np.arange(103))
        assert {len(f) for f in folds} <= {20, 21}

    def test_deterministic(self):
        a = fold_indices(50, 5, seed=1)
        b = fold_indices(50, 5, seed=1)
        c = fold_indices(50, 5, seed=2)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert not all(np.array_equal(x, y) for x, y in zip(a, c))

    def test_too_few(self):
        with pytest.raises(ValueError):
            fold_indices(3, 5)


class TestScores:
    def test_gaussian_fit_beats_shifted_sample(self, rng):
        sample = rng.normal(size=(1, 500))
        mu, sigma = np.zeros(1), np.eye(1)
        assert gamma_cross_entropy_gauss(sample, mu, sigma) < gamma_cross_entropy_gauss(sample + 5, mu, sigma)

    def test_gaussian_score_closed_form(self):
        # single point at the mode of N(0, 1) with gamma0 = 1: -xi(0) / ||xi||_2
        score = gamma_cross_entropy_gauss(np.zeros((1, 1)), np.zeros(1), np.eye(1), 1.0)
        xi0 = 1 / math.sqrt(2 * math.pi)
        norm = math.sqrt(1 / (2 * math.sqrt(math.pi)))
        assert score == pytest.approx(-xi0 / norm, rel=1e-12)

    def test_ica_score_improves_towards_separation(self, rng):
        Z, _, _ = uniform_mixture(rng, n=2000)
        pm = make_model(SUB_GAUSSIAN, 2)
        W_sep = fit_ica(Z, pm, OptimizerConfig(gamma=0.3)).w
        scores = []
        for t in np.linspace(0, 1, 5):
            # geodesic from the perturbed rotation back to the separating one
            theta = 0.6 * (1 - t)
            W = W_sep @ np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
            scores.append(gamma_cross_entropy_ica(Z, W, pm))
        assert np.all(np.diff(scores) < 0)

    def test_dropping_data_term_keeps_argmin(self, rng):
        # the full divergence adds a candidate-independent term to a monotone transform of the score
        X = contaminated_2d(3)
        test, train = X[:, :40], X[:, 40:]
        grid = [0.1, 0.3, 0.5, 0.8]
        reduced = []
        full = []
        gamma0 = 1.0
        # plug-in ||g||_2^2 from a kernel density of the held-out fold
        data_term = math.log(np.mean(gaussian_kde(test)(test))) / (gamma0 * (gamma0 + 1))
        for g in grid:
            m = prewhiten_fixed_point(train, g)
            s = gamma_cross_entropy_gauss(test, m.mu, m.sigma, gamma0)
            reduced.append(s)
            full.append(-math.log(-s) / gamma0 + data_term)
        assert int(np.argmin(reduced)) == int(np.argmin(full))


class TestSummarise:
    def test_ties_choose_smaller_gamma(self):
        cfg = CvConfig(k_folds=2, grid=(0.1, 0.2, 0.3))
        scores = np.array([[-1.0, -2.0, -2.0], [-1.0, -2.0, -2.0]])
        assert _summarise(cfg, scores, CvResult()).chosen_gamma == 0.2

    def test_disqualifies_mostly_failed(self):
        cfg = CvConfig(k_folds=3, grid=(0.1, 0.2))
        scores = np.array([[np.nan, -1.0], [np.nan, -1.0], [-5.0, -1.0]])
        result = _summarise(cfg, scores, CvResult())
        assert result.chosen_gamma == 0.2
        assert math.isnan(result.scores[0][1])
        assert result.n_failed == [2, 0]

    def test_all_failed(self):
        cfg = CvConfig(k_folds=2, grid=(0.1,))
        with pytest.raises(DegenerateScatter):
            _summarise(cfg, np.full((2, 1), np.nan), CvResult())


class TestPrewhitenCv:
    def test_contaminated_prefers_positive_gamma(self):
        chosen = [select_gamma_prewhiten(contaminated_2d(seed), CvConfig(seed=seed)).chosen_gamma for seed in range(100)]
        assert sum(g > 0.05 for g in chosen) >= 90

    def test_returns_grid_member_on_clean_data(self, rng):
        cfg = CvConfig(grid=(0.05, 0.2, 0.5))
        result = select_gamma_prewhiten(rng.normal(size=(2, 150)), cfg)
        assert result.chosen_gamma in cfg.grid
        assert len(result.scores) == 3 and result.fold_scores.shape == (5, 3)

    def test_deterministic(self):
        X = contaminated_2d(7)
        a = select_gamma_prewhiten(X, CvConfig(seed=3))
        b = select_gamma_prewhiten(X, CvConfig(seed=3))
        assert a.scores == b.scores

    def test_too_few_samples(self, rng):
        with pytest.raises(ValueError):
            select_gamma_prewhiten(rng.normal(size=(2, 10)))


class TestIcaCv:
    def test_contaminated_minimum_away_from_smallest(self):
        rng = np.random.default_rng(5)
        S = rng.uniform(-3, 3, size=(2, 180))
        X = np.array([[1.0, 2.0], [1.0, 0.5]]) @ S
        X[:, 150:] += rng.normal(5.0, 5.0, size=(2, 30))
        Z = whiten(X, prewhiten_fixed_point(X, 0.5))
        cfg = CvConfig(grid=(0.05, 0.2, 0.4, 0.6, 0.8, 1.0), seed=1)
        result = select_gamma_ica(Z, make_model(SUB_GAUSSIAN, 2), cfg=cfg)
        assert result.chosen_gamma > 0.05
        assert len(result.n_unconverged) == 6

    def test_screen(self, rng):
        Z, _, _ = uniform_mixture(rng, n=400)
        pm = make_model(SUB_GAUSSIAN, 2)
        lams = screen_grid(Z, pm, OptimizerConfig(), [0.2, 0.6])
        assert [g for g, _ in lams] == [0.2, 0.6]
        result = select_gamma_ica(Z, pm, cfg=CvConfig(grid=(0.2, 0.6)), screen=True)
        admissible = [g for g, lam in lams if lam < 0]
        assert result.chosen_gamma in admissible
