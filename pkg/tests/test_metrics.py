import itertools
import math

import numpy as np
import pytest

from nica.metrics import (LinearClassifier, classification_error, classify,
                          fit_linear_classifier, hungarian, mi_hist, mi_knn,
                          mi_report)

GAUSS_MI_RHO_09 = 0.8303656034108255  # -0.5 ln(1 - 0.81)


def _correlated_gaussians(n, rho, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(n)
    b = rho * a + math.sqrt(1 - rho * rho) * rng.standard_normal(n)
    return a, b


def _brute_force_assignment(cost):
    n = cost.shape[0]
    best_perm, best_val = None, np.inf
    for perm in itertools.permutations(range(n)):
        val = sum(cost[i, perm[i]] for i in range(n))
        if val < best_val:
            best_val, best_perm = val, perm
    return np.asarray(best_perm), best_val


class TestMiKnn:
    def test_independent_samples_near_zero(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal(10_000)
        b = rng.standard_normal(10_000)
        assert mi_knn(a, b, k=5) <= 0.05

    def test_correlated_gaussians_match_closed_form(self):
        a, b = _correlated_gaussians(10_000, 0.9, seed=1)
        assert abs(mi_knn(a, b, k=5) - GAUSS_MI_RHO_09) <= 0.05

    def test_invariance_under_monotone_transform(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal(10_000)
        noisy = a + 0.1 * rng.standard_normal(10_000)
        direct = mi_knn(a, noisy, k=5)
        transformed = mi_knn(a, np.exp(noisy), k=5)
        assert abs(direct - transformed) <= 0.05

    def test_symmetry(self):
        a, b = _correlated_gaussians(10_000, 0.6, seed=3)
        assert abs(mi_knn(a, b, k=5) - mi_knn(b, a, k=5)) <= 0.02

    @pytest.mark.parametrize("c", [0.1, 10.0])
    def test_scale_invariance(self, c):
        a, b = _correlated_gaussians(10_000, 0.6, seed=4)
        assert abs(mi_knn(c * a, b, k=5) - mi_knn(a, b, k=5)) <= 0.02

    def test_duplicate_values_tolerated(self):
        rng = np.random.default_rng(5)
        a = np.round(rng.standard_normal(2_000), 1)  # heavy ties
        b = np.round(a + rng.standard_normal(2_000), 1)
        out = mi_knn(a, b, k=5)
        assert np.isfinite(out) and out >= 0.0

    def test_estimate_clipped_at_zero(self):
        rng = np.random.default_rng(6)
        assert mi_knn(rng.standard_normal(200), rng.standard_normal(200),
                      k=3) >= 0.0

    def test_rejects_bad_sizes(self):
        with pytest.raises(ValueError):
            mi_knn(np.zeros(5), np.zeros(5), k=5)
        with pytest.raises(ValueError):
            mi_knn(np.zeros(5), np.zeros(4), k=2)
        with pytest.raises(ValueError):
            mi_knn(np.array([1.0, np.nan, 0.0]), np.zeros(3), k=1)

    def test_histogram_cross_check(self):
        a, b = _correlated_gaussians(10_000, 0.9, seed=7)
        knn = mi_knn(a, b, k=5)
        hist = mi_hist(a, b)
        assert abs(knn - hist) < 0.25  # coarse estimator, same ballpark


class TestHungarian:
    def test_two_by_two_identity(self):
        perm = hungarian(np.array([[1.0, 2.0], [2.0, 1.0]]))
        assert np.array_equal(perm, [0, 1])

    def test_recovers_planted_assignment(self):
        rng = np.random.default_rng(8)
        n = 6
        planted = rng.permutation(n)
        cost = np.full((n, n), 100.0)
        cost[np.arange(n), planted] = 0.0
        assert np.array_equal(hungarian(cost), planted)

    def test_matches_brute_force_on_random_matrices(self):
        for seed in range(40):
            cost = np.random.default_rng(seed).standard_normal((5, 5))
            perm = hungarian(cost)
            _, best_val = _brute_force_assignment(cost)
            got = cost[np.arange(5), perm].sum()
            assert math.isclose(got, best_val, rel_tol=0, abs_tol=1e-12)

    def test_output_is_permutation(self):
        cost = np.random.default_rng(9).uniform(size=(7, 7))
        perm = hungarian(cost)
        assert sorted(perm.tolist()) == list(range(7))

    def test_rejects_nonsquare_and_nonfinite(self):
        with pytest.raises(ValueError):
            hungarian(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            hungarian(np.array([[np.inf, 1.0], [1.0, 0.0]]))


class TestMiReport:
    def test_near_identity_recovery(self):
        rng = np.random.default_rng(10)
        s = rng.standard_normal((4_000, 2))
        y = s + 1e-6 * rng.standard_normal((4_000, 2))
        rep = mi_report(y, s, k=4)
        assert np.array_equal(rep.assignment, [0, 1])
        diag = rep.per_component_mi
        off = rep.mi_matrix[0, 1], rep.mi_matrix[1, 0]
        assert min(diag) > 5 * max(off)
        assert math.isclose(rep.mean_mi, float(np.mean(diag)), rel_tol=1e-12)

    def test_reversed_columns_matched_by_reversal(self):
        rng = np.random.default_rng(11)
        s = rng.standard_normal((3_000, 2))
        rep = mi_report(s[:, ::-1], s, k=4)
        assert np.array_equal(rep.assignment, [1, 0])

    def test_mixed_features_score_below_unmixed(self):
        rng = np.random.default_rng(12)
        s = rng.standard_normal((4_000, 2))
        mixing = np.array([[1.0, 0.9], [0.9, 1.0]])
        mixed = s @ mixing.T
        assert mi_report(mixed, s, k=4).mean_mi < mi_report(s, s, k=4).mean_mi

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mi_report(np.zeros((10, 2)), np.zeros((10, 3)))


class TestLinearClassifier:
    def _blobs(self, n, seed, gap=4.0):
        rng = np.random.default_rng(seed)
        half = n // 2
        x = np.concatenate([rng.standard_normal((half, 2)) - gap / 2,
                            rng.standard_normal((half, 2)) + gap / 2])
        y = np.concatenate([np.zeros(half, dtype=int), np.ones(half, dtype=int)])
        order = rng.permutation(n)
        return x[order], y[order]

    def test_separable_blobs(self):
        x, y = self._blobs(600, seed=13)
        clf = fit_linear_classifier(x[:400], y[:400])
        assert classification_error(clf, x[400:], y[400:]) <= 0.02

    def test_shuffled_labels_near_chance(self):
        rng = np.random.default_rng(14)
        x, y = self._blobs(2_000, seed=14)
        shuffled = rng.permutation(y)
        clf = fit_linear_classifier(x[:1_000], shuffled[:1_000])
        err = classification_error(clf, x[1_000:], shuffled[1_000:])
        assert abs(err - 0.5) <= 0.05

    def test_constant_features_predict_majority(self):
        x = np.ones((300, 3))
        y = np.array([1] * 200 + [0] * 100)
        clf = fit_linear_classifier(x, y)
        err = classification_error(clf, np.ones((90, 3)),
                                   np.array([1] * 60 + [0] * 30))
        assert math.isclose(err, 1.0 / 3.0, rel_tol=1e-9)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            fit_linear_classifier(np.ones((10, 2)), np.ones(10, dtype=int))

    def test_classify_returns_signs(self):
        x, y = self._blobs(100, seed=15)
        clf = fit_linear_classifier(x, y)
        out = classify(clf, x)
        assert set(np.unique(out)).issubset({-1, 1})
