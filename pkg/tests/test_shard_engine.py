import numpy as np
import pytest

from shardscreen import (
    ShardSummary,
    ThresholdRule,
    TopDRule,
    accumulate_moments,
    aggregate_acps,
    aggregate_jdps,
    aggregate_saps,
    partial_correlation,
    screen_dataset,
    select,
    shard_dataset,
    summarize_shard,
)
from shardscreen.errors import InsufficientSamples, InvalidRule, TooManyShards
from shardscreen.moments import TripleSample
from shardscreen.shard_engine import default_top_d, rank_features, summarize_arrays


def make_data(rng, N, p, c=0.5, cond=0):
    from shardscreen import generate_response, sample_ar1_features

    X = sample_ar1_features(N, p, rng)
    y = generate_response(X, "a", c, rng=rng)
    return np.column_stack([y, X[:, cond], X])


def loo_partial(y, x, z, drop):
    """Literal leave-one-out recomputation from scratch."""
    keep = np.arange(len(y)) != drop
    return partial_correlation(
        accumulate_moments(TripleSample(y=y[keep], x=x[keep], z=z[keep])))


def literal_jackknife(y, x, z):
    """The debiasing correction computed by deleting each row and
    re-estimating from scratch: (n-1)/n * sum_i rho_loo(i) - (n-1) * rho."""
    n = len(y)
    rho = partial_correlation(accumulate_moments(TripleSample(y=y, x=x, z=z)))
    loo_sum = sum(loo_partial(y, x, z, i) for i in range(n))
    return (n - 1) / n * loo_sum - (n - 1) * rho


class TestShardDataset:
    def test_remainder_sizes(self):
        data = np.arange(10 * 5, dtype=float).reshape(10, 5)
        sharded = shard_dataset(data, 3)
        assert sharded.shard_sizes == [4, 3, 3]
        np.testing.assert_array_equal(np.vstack(sharded.shards), data)

    def test_single_shard_identity(self):
        data = np.random.default_rng(0).normal(size=(9, 4))
        sharded = shard_dataset(data, 1)
        assert sharded.K == 1
        np.testing.assert_array_equal(sharded.shards[0], data)

    def test_shuffle_deterministic(self):
        data = np.random.default_rng(1).normal(size=(20, 4))
        a = shard_dataset(data, 4, seed=7, shuffle=True)
        b = shard_dataset(data, 4, seed=7, shuffle=True)
        for sa, sb in zip(a.shards, b.shards):
            np.testing.assert_array_equal(sa, sb)
        c = shard_dataset(data, 4, seed=8, shuffle=True)
        assert any(not np.array_equal(sa, sc) for sa, sc in zip(a.shards, c.shards))

    def test_too_many_shards(self):
        data = np.zeros((10, 4))
        with pytest.raises(TooManyShards):
            shard_dataset(data, 4)


class TestSummaries:
    def test_acps_moments_match_saps_correlations(self):
        rng = np.random.default_rng(2)
        shard = make_data(rng, 40, 12)
        acps = summarize_shard(shard, "acps")
        saps = summarize_shard(shard, "saps")
        from shardscreen.moments import partial_from_block

        rho, ok = partial_from_block(acps.moments)
        np.testing.assert_allclose(rho[ok], saps.rho[ok], atol=1e-12)

    def test_jdps_matches_literal_loo_oracle(self):
        rng = np.random.default_rng(3)
        y, z = rng.normal(size=(2, 10))
        X = rng.normal(size=(10, 3))
        summary = summarize_arrays(y, z, X, "jdps")
        for j in range(3):
            expected = literal_jackknife(y, X[:, j], z)
            assert summary.delta[j] == pytest.approx(expected, abs=1e-10)

    def test_jdps_needs_four_rows(self):
        rng = np.random.default_rng(4)
        with pytest.raises(InsufficientSamples):
            summarize_arrays(rng.normal(size=3), rng.normal(size=3),
                             rng.normal(size=(3, 2)), "jdps")

    def test_degenerate_feature_isolated(self):
        rng = np.random.default_rng(5)
        shard = make_data(rng, 30, 10)
        shard[:, 4] = shard[:, 1]  # feature X3 duplicates the conditional column
        for method in ("saps", "jdps"):
            s = summarize_shard(shard, method)
            # X1 duplicates the conditional by construction and X3 by edit;
            # every other feature stays usable.
            assert np.isnan(s.rho[0]) and np.isnan(s.rho[2])
            assert np.isfinite(np.delete(s.rho, [0, 2])).all()

    def test_wire_format_round_trip(self):
        rng = np.random.default_rng(6)
        shard = make_data(rng, 25, 10)
        for method in ("saps", "acps", "jdps"):
            s = summarize_shard(shard, method)
            buf = s.to_bytes()
            assert buf[:4] == b"SSCR"
            assert int.from_bytes(buf[4:6], "little") == 1
            back = ShardSummary.from_bytes(buf)
            assert back.method == s.method and back.n == s.n
            np.testing.assert_array_equal(
                np.nan_to_num(back.payload, nan=-999),
                np.nan_to_num(s.payload, nan=-999))


class TestAggregation:
    def _saps_summary(self, rho, n=20):
        return ShardSummary(method="saps", n=n, payload=np.asarray(rho, dtype=float))

    def test_saps_single_shard_identity(self):
        u, bad = aggregate_saps([self._saps_summary([0.3, -0.7])])
        np.testing.assert_allclose(u, [0.3, 0.7])
        assert not bad.any()

    def test_saps_cancellation(self):
        u, _ = aggregate_saps([self._saps_summary([0.4]), self._saps_summary([-0.4])])
        assert u[0] == 0.0

    def test_saps_mean(self):
        u, _ = aggregate_saps([self._saps_summary([r]) for r in (0.1, 0.2, 0.6)])
        assert u[0] == pytest.approx(0.3, rel=1e-15)

    def test_saps_flagged_shards_excluded(self):
        u, bad = aggregate_saps([
            self._saps_summary([0.4, np.nan]),
            self._saps_summary([0.2, np.nan]),
        ])
        assert u[0] == pytest.approx(0.3) and u[1] == 0.0
        assert list(bad) == [False, True]

    def test_acps_equals_centralized(self):
        rng = np.random.default_rng(7)
        data = make_data(rng, 60, 9)
        for K in (1, 2, 5):
            sharded = shard_dataset(data, K)
            u_k, _ = aggregate_acps([summarize_shard(s, "acps") for s in sharded.shards])
            u_1, _ = aggregate_acps([summarize_shard(data, "acps")])
            np.testing.assert_allclose(u_k, u_1, rtol=1e-12, atol=1e-13)

    def test_acps_unequal_shards(self):
        rng = np.random.default_rng(8)
        data = make_data(rng, 21, 9)
        parts = [summarize_shard(data[:7], "acps"), summarize_shard(data[7:], "acps")]
        u, _ = aggregate_acps(parts)
        u_full, _ = aggregate_acps([summarize_shard(data, "acps")])
        np.testing.assert_allclose(u, u_full, rtol=1e-12, atol=1e-13)

    def test_saps_equals_acps_single_shard(self):
        rng = np.random.default_rng(9)
        data = make_data(rng, 50, 10)
        u_s, _ = aggregate_saps([summarize_shard(data, "saps")])
        u_a, _ = aggregate_acps([summarize_shard(data, "acps")])
        np.testing.assert_allclose(u_s, u_a, atol=1e-12)

    def test_jdps_zero_correction_reduces_to_saps(self):
        rho = np.array([0.5, -0.2, 0.1])
        jd = ShardSummary(method="jdps", n=10,
                          payload=np.column_stack([rho, np.zeros(3)]))
        sp = ShardSummary(method="saps", n=10, payload=rho)
        u_j, _ = aggregate_jdps([jd])
        u_s, _ = aggregate_saps([sp])
        np.testing.assert_array_equal(u_j, u_s)

    def test_jdps_single_shard_oracle(self):
        rng = np.random.default_rng(10)
        y, z = rng.normal(size=(2, 12))
        X = rng.normal(size=(12, 2))
        u, _ = aggregate_jdps([summarize_arrays(y, z, X, "jdps")])
        for j in range(2):
            rho = partial_correlation(
                accumulate_moments(TripleSample(y=y, x=X[:, j], z=z)))
            delta = literal_jackknife(y, X[:, j], z)
            assert u[j] == pytest.approx(abs(rho - delta), abs=1e-10)

    def test_jdps_sign_symmetry(self):
        rng = np.random.default_rng(11)
        y, z = rng.normal(size=(2, 15))
        X = rng.normal(size=(15, 3))
        u_pos, _ = aggregate_jdps([summarize_arrays(y, z, X, "jdps")])
        X_neg = X.copy()
        X_neg[:, 1] *= -1
        u_neg, _ = aggregate_jdps([summarize_arrays(y, z, X_neg, "jdps")])
        np.testing.assert_allclose(u_neg, u_pos, atol=1e-14)

    def test_shard_order_invariance(self):
        rng = np.random.default_rng(12)
        data = make_data(rng, 60, 10)
        sharded = shard_dataset(data, 4)
        for method, agg in (("saps", aggregate_saps), ("acps", aggregate_acps),
                            ("jdps", aggregate_jdps)):
            summaries = [summarize_shard(s, method) for s in sharded.shards]
            u_fwd, _ = agg(summaries)
            u_rev, _ = agg(summaries[::-1])
            np.testing.assert_allclose(u_rev, u_fwd, atol=1e-13)


class TestSelect:
    def test_topd_ordering(self):
        res = select(np.array([0.9, 0.1, 0.5]), TopDRule(2))
        assert list(res.selected) == [0, 2]

    def test_threshold(self):
        res = select(np.array([0.9, 0.1, 0.5]), ThresholdRule(0.5))
        assert list(res.selected) == [0, 2]

    def test_tie_break_by_index(self):
        res = select(np.array([0.5, 0.5, 0.2]), TopDRule(1))
        assert list(res.selected) == [0]
        assert list(res.ranking) == [0, 1, 2]

    def test_topd_skips_zero_utilities(self):
        res = select(np.array([0.0, 0.4, 0.0]), TopDRule(3))
        assert list(res.selected) == [1]

    def test_invalid_rules(self):
        with pytest.raises(InvalidRule):
            select(np.array([0.1]), TopDRule(0))
        with pytest.raises(InvalidRule):
            select(np.array([0.1]), ThresholdRule(-0.5))

    def test_ranking_is_permutation(self):
        rng = np.random.default_rng(13)
        u = rng.uniform(size=37)
        ranking = rank_features(u)
        assert sorted(ranking) == list(range(37))
        assert (np.diff(u[ranking]) <= 0).all()

    def test_default_top_d(self):
        assert default_top_d(10000) == 1085


class TestScreenDataset:
    def test_end_to_end_recovers_signal(self):
        rng = np.random.default_rng(14)
        data = make_data(rng, 800, 40, c=0.725)
        truth = {2, 3, 4, 5, 6, 7, 8}  # X1 is the conditional; X3..X9 detectable
        for method in ("saps", "acps", "jdps"):
            res = screen_dataset(shard_dataset(data, 4), method, TopDRule(12))
            assert truth <= set(int(j) for j in res.selected)

    def test_thread_env_does_not_change_result(self, monkeypatch):
        rng = np.random.default_rng(15)
        data = make_data(rng, 200, 15)
        sharded = shard_dataset(data, 5)
        base = screen_dataset(sharded, "acps", TopDRule(5))
        monkeypatch.setenv("SHARDSCREEN_THREADS", "1")
        serial = screen_dataset(sharded, "acps", TopDRule(5))
        np.testing.assert_array_equal(serial.utilities, base.utilities)
        monkeypatch.setenv("SHARDSCREEN_THREADS", "4")
        threaded = screen_dataset(sharded, "acps", TopDRule(5))
        np.testing.assert_array_equal(threaded.utilities, base.utilities)
