import numpy as np
import pytest

from shardscreen import (
    auc,
    auc_double_sum,
    fdr_realized,
    minimum_model_size,
    psr,
    ssr_indicator,
)
from shardscreen.metrics import DegenerateTruth


class TestSsr:
    def test_all_selected(self):
        assert ssr_indicator({0, 2}, range(10)) == 1

    def test_empty_selection(self):
        assert ssr_indicator({0, 2}, set()) == 0

    def test_subset_check(self):
        assert ssr_indicator({0, 2}, {0, 1, 2}) == 1
        assert ssr_indicator({0, 2}, {0, 1}) == 0


class TestPsr:
    def test_half(self):
        assert psr({0, 1, 2, 3}, {0, 1}) == 0.5

    def test_superset(self):
        assert psr({1, 2}, {0, 1, 2, 3}) == 1.0

    def test_disjoint(self):
        assert psr({1, 2}, {5, 6}) == 0.0


class TestFdr:
    def test_exact_selection(self):
        assert fdr_realized({1, 2}, {1, 2}) == 0.0

    def test_nine_of_ten_false(self):
        truth = {0}
        selected = set(range(10))
        assert fdr_realized(truth, selected) == pytest.approx(0.9)

    def test_empty_selection_convention(self):
        assert fdr_realized({1, 2}, set()) == 0.0


class TestAuc:
    def test_perfect_separation(self):
        u = np.array([0.9, 0.8, 0.1, 0.2])
        assert auc({0, 1}, u) == 1.0

    def test_all_ties(self):
        u = np.full(6, 0.3)
        assert auc({0, 1}, u) == 0.5

    def test_hand_example(self):
        u = np.array([0.9, 0.2, 0.5])
        assert auc({0, 2}, u) == 1.0
        # Two (important, unimportant) pairs, one inverted: 1 - 1/2.
        assert auc({0, 1}, u) == pytest.approx(0.5)
        assert auc({0, 1}, u) == pytest.approx(auc_double_sum({0, 1}, u))

    def test_degenerate_truth(self):
        with pytest.raises(DegenerateTruth):
            auc(set(), np.array([0.1, 0.2]))
        with pytest.raises(DegenerateTruth):
            auc({0, 1}, np.array([0.1, 0.2]))

    def test_matches_double_sum_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(40):
            p = int(rng.integers(3, 60))
            u = np.round(rng.uniform(size=p), 1)  # plenty of ties
            k = int(rng.integers(1, p))
            truth = set(rng.choice(p, size=k, replace=False).tolist())
            assert auc(truth, u) == pytest.approx(auc_double_sum(truth, u),
                                                  abs=1e-12)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        u = rng.uniform(size=30)
        truth = {1, 4, 9}
        base = auc(truth, u)
        assert auc(truth, np.exp(5 * u)) == pytest.approx(base, abs=1e-12)
        assert auc(truth, u**3) == pytest.approx(base, abs=1e-12)


class TestMinimumModelSize:
    def test_truth_top_ranked(self):
        assert minimum_model_size({0, 1}, np.array([0.9, 0.8, 0.1, 0.0])) == 2

    def test_worst_case(self):
        u = np.array([0.0, 0.5, 0.6, 0.7])
        assert minimum_model_size({0}, u) == 4

    def test_hand_example(self):
        u = np.array([0.9, 0.1, 0.5, 0.7])
        assert minimum_model_size({0, 2}, u) == 3

    def test_lower_bound(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            p = int(rng.integers(3, 40))
            u = rng.uniform(size=p)
            k = int(rng.integers(1, p + 1))
            truth = set(rng.choice(p, size=k, replace=False).tolist())
            assert minimum_model_size(truth, u) >= k

    def test_tie_break_consistent_with_ranking(self):
        u = np.array([0.5, 0.5, 0.5])
        assert minimum_model_size({2}, u) == 3
        assert minimum_model_size({0}, u) == 1
