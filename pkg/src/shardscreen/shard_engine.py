"""Sharding, per-shard summaries, and the three distributed utility estimators.

A dataset is split row-wise into K disjoint shards.  Each shard is reduced to
a compact summary, and summaries combine into per-feature screening utilities
three ways:

* ``saps`` -- absolute value of the plain average of per-shard partial
  correlations;
* ``acps`` -- partial correlation evaluated on the count-weighted average of
  per-shard moment blocks (identical to the centralized estimate);
* ``jdps`` -- like saps but each shard's correlation is debiased by a
  jackknife correction before averaging.

The jackknife correction for a shard of size n is

    delta = (n - 1) * (mean_i rho_loo(i) - rho)

where rho_loo(i) is the partial correlation with row i removed.  Each
rho_loo(i) is computed by O(1) downdating of the shard's moment sums, so the
whole correction costs O(n) per feature; the literal recompute-from-scratch
version survives only as a test oracle.

Data-block column convention: column 0 is the response, column 1 the
conditioning variable, columns 2.. the p screened features.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import moments
from ._threads import pmap
from .errors import InsufficientSamples, InvalidRule, TooManyShards

RESPONSE_COL = 0
CONDITIONAL_COL = 1
FEATURE_START = 2

METHODS = ("saps", "acps", "jdps")
_METHOD_CODES = {"saps": 1, "acps": 2, "jdps": 3}
_CODE_METHODS = {v: k for k, v in _METHOD_CODES.items()}

_MAGIC = b"SSCR"
_WIRE_VERSION = 1
_HEADER = struct.Struct("<4sHBQQ")

_JACKKNIFE_CHUNK = 512


def check_method(method: str) -> str:
    m = str(method).lower()
    if m not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    return m


def unpack_block(block: np.ndarray):
    """Split an n x (p+2) data block into (y, z, X)."""
    block = np.asarray(block, dtype=np.float64)
    y = np.ascontiguousarray(block[:, RESPONSE_COL])
    z = np.ascontiguousarray(block[:, CONDITIONAL_COL])
    X = block[:, FEATURE_START:]
    return y, z, X


@dataclass
class ShardedDataset:
    """K row-disjoint data blocks sharing one column layout."""

    shards: list
    feature_names: list

    def __post_init__(self):
        if not self.shards:
            raise InsufficientSamples("need at least one shard")
        widths = {s.shape[1] for s in self.shards}
        if len(widths) != 1:
            raise ValueError("all shards must have the same column layout")
        if self.p != len(self.feature_names):
            raise ValueError("feature_names length does not match feature count")
        for s in self.shards:
            if s.shape[0] < 3:
                raise InsufficientSamples("every shard needs at least 3 rows")

    @property
    def K(self) -> int:
        return len(self.shards)

    @property
    def p(self) -> int:
        return self.shards[0].shape[1] - FEATURE_START

    @property
    def total_rows(self) -> int:
        return sum(s.shape[0] for s in self.shards)

    @property
    def shard_sizes(self) -> list:
        return [s.shape[0] for s in self.shards]


def default_feature_names(p: int) -> list:
    return [f"X{j + 1}" for j in range(p)]


def shard_dataset(data: np.ndarray, K: int, seed: int = 0, shuffle: bool = False,
                  feature_names=None) -> ShardedDataset:
    """Partition an N x (p+2) matrix into K shards.

    Rows are optionally permuted by ``seed`` first; the N mod K remainder rows
    go one per shard to the first shards, so sizes differ by at most one.
    """
    data = np.asarray(data, dtype=np.float64)
    N = data.shape[0]
    K = int(K)
    if K < 1:
        raise TooManyShards("K must be at least 1")
    if N < 3 * K:
        raise TooManyShards(f"K={K} leaves shards below 3 rows for N={N}")
    if shuffle:
        perm = np.random.default_rng(seed).permutation(N)
        data = data[perm]
    q, r = divmod(N, K)
    sizes = [q + 1] * r + [q] * (K - r)
    offsets = np.cumsum(sizes)[:-1]
    shards = np.split(data, offsets)
    if feature_names is None:
        feature_names = default_feature_names(data.shape[1] - FEATURE_START)
    return ShardedDataset(shards=shards, feature_names=list(feature_names))


# ---------------------------------------------------------------------------
# Shard summaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShardSummary:
    """Per-shard screening payload.

    payload shape by method: acps (p, 9) moment block; saps (p,) local
    partial correlations; jdps (p, 2) columns (rho, delta).  NaN entries mark
    features flagged degenerate on this shard.
    """

    method: str
    n: int
    payload: np.ndarray

    @property
    def p(self) -> int:
        return self.payload.shape[0]

    @property
    def rho(self) -> np.ndarray:
        if self.method == "saps":
            return self.payload
        if self.method == "jdps":
            return self.payload[:, 0]
        raise ValueError("rho is only defined for saps/jdps summaries")

    @property
    def delta(self) -> np.ndarray:
        if self.method != "jdps":
            raise ValueError("delta is only defined for jdps summaries")
        return self.payload[:, 1]

    @property
    def moments(self) -> np.ndarray:
        if self.method != "acps":
            raise ValueError("moments are only defined for acps summaries")
        return self.payload

    def to_bytes(self) -> bytes:
        """Versioned little-endian record: header SSCR/version/method/p/n,
        then the float64 payload block."""
        payload = np.ascontiguousarray(self.payload, dtype="<f8")
        header = _HEADER.pack(_MAGIC, _WIRE_VERSION, _METHOD_CODES[self.method],
                              self.p, self.n)
        return header + payload.tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "ShardSummary":
        magic, version, code, p, n = _HEADER.unpack_from(buf, 0)
        if magic != _MAGIC:
            raise ValueError("bad magic, not a shard summary record")
        if version != _WIRE_VERSION:
            raise ValueError(f"unsupported record version {version}")
        method = _CODE_METHODS.get(code)
        if method is None:
            raise ValueError(f"unknown method code {code}")
        width = {"acps": 9, "saps": 1, "jdps": 2}[method]
        flat = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size,
                             count=p * width).astype(np.float64)
        payload = flat if width == 1 else flat.reshape(p, width)
        return cls(method=method, n=int(n), payload=payload)


def _jackknife_shard(y: np.ndarray, z: np.ndarray, X: np.ndarray):
    """(rho, delta, ok) per feature via moment-sum downdating."""
    n = y.shape[0]
    block = moments.moment_block(y, X, z)
    rho_full, ok = moments.partial_from_block(block)

    nm1 = n - 1
    # Sums of the scalar (y/z-only) moments and their leave-one-out means.
    s_yz = float(y @ z)
    s_y = float(y.sum())
    s_z = float(z.sum())
    s_yy = float(y @ y)
    s_zz = float(z @ z)
    l_yz = (s_yz - y * z) / nm1
    l_y = (s_y - y) / nm1
    l_z = (s_z - z) / nm1
    l_yy = (s_yy - y * y) / nm1
    l_zz = (s_zz - z * z) / nm1

    var_y = l_yy - l_y**2
    var_z = l_zz - l_z**2
    ok_sc = (var_y > moments.VARIANCE_REL_FLOOR * l_yy) & (
        var_z > moments.VARIANCE_REL_FLOOR * l_zz
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        r_yz = (l_yz - l_y * l_z) / np.sqrt(var_y * var_z)
    ok_sc &= np.abs(r_yz) < 1.0 - moments.CLAMP_EPS
    yz_denom_part = 1.0 - r_yz**2

    p = X.shape[1]
    delta = np.empty(p)
    col = lambda v: v[:, None]  # noqa: E731 - broadcast scalar-LOO vectors over features
    for start in range(0, p, _JACKKNIFE_CHUNK):
        stop = min(start + _JACKKNIFE_CHUNK, p)
        Xb = X[:, start:stop]
        s_xy = Xb.T @ y
        s_xz = Xb.T @ z
        s_x = Xb.sum(axis=0)
        s_xx = np.einsum("ij,ij->j", Xb, Xb)

        l_xy = (s_xy[None, :] - Xb * y[:, None]) / nm1
        l_xz = (s_xz[None, :] - Xb * z[:, None]) / nm1
        l_x = (s_x[None, :] - Xb) / nm1
        l_xx = (s_xx[None, :] - Xb * Xb) / nm1

        var_x = l_xx - l_x**2
        ok_b = ok_sc[:, None] & (var_x > moments.VARIANCE_REL_FLOOR * l_xx)
        with np.errstate(divide="ignore", invalid="ignore"):
            r_xy = (l_xy - l_x * col(l_y)) / np.sqrt(var_x * col(var_y))
            r_xz = (l_xz - l_x * col(l_z)) / np.sqrt(var_x * col(var_z))
            ok_b &= np.abs(r_xz) < 1.0 - moments.CLAMP_EPS
            denom = np.sqrt(
                np.clip((1.0 - r_xz**2) * col(yz_denom_part), 0.0, None)
            )
            ok_b &= denom >= moments.DENOM_FLOOR
            rho_loo = (r_xy - r_xz * col(r_yz)) / denom
        rho_loo = np.clip(rho_loo, -1.0 + moments.CLAMP_EPS, 1.0 - moments.CLAMP_EPS)
        ok[start:stop] &= ok_b.all(axis=0)
        delta[start:stop] = nm1 * (rho_loo.mean(axis=0) - rho_full[start:stop])

    rho = np.where(ok, rho_full, np.nan)
    delta = np.where(ok, delta, np.nan)
    return rho, delta, ok


def summarize_arrays(y: np.ndarray, z: np.ndarray, X: np.ndarray,
                     method: str) -> ShardSummary:
    """Screening summary of one shard given as split-out arrays."""
    method = check_method(method)
    y = np.ascontiguousarray(y, dtype=np.float64)
    z = np.ascontiguousarray(z, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    n = y.shape[0]
    if n < 3:
        raise InsufficientSamples("shard needs at least 3 rows")
    if method == "acps":
        return ShardSummary(method=method, n=n, payload=moments.moment_block(y, X, z))
    if method == "saps":
        rho, _ = moments.partial_from_block(moments.moment_block(y, X, z))
        return ShardSummary(method=method, n=n, payload=rho)
    if n < 4:
        raise InsufficientSamples("jdps needs at least 4 rows per shard")
    rho, delta, _ = _jackknife_shard(y, z, X)
    return ShardSummary(method=method, n=n, payload=np.column_stack([rho, delta]))


def summarize_shard(shard: np.ndarray, method: str) -> ShardSummary:
    """Reduce one data block to its screening summary for the given method."""
    y, z, X = unpack_block(shard)
    return summarize_arrays(y, z, X, method)


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def _check_summaries(summaries, method):
    if not summaries:
        raise ValueError("no summaries to aggregate")
    ps = {s.p for s in summaries}
    if len(ps) != 1:
        raise ValueError("summaries disagree on feature count")
    for s in summaries:
        if s.method != method:
            raise ValueError(f"expected {method} summaries, got {s.method}")


def _abs_mean_over_ok(values: np.ndarray):
    """Average a (K, p) array over non-flagged shards per feature, then abs."""
    ok = np.isfinite(values)
    cnt = ok.sum(axis=0)
    total = np.where(ok, values, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore"):
        mean = total / np.maximum(cnt, 1)
    utilities = np.where(cnt > 0, np.abs(mean), 0.0)
    return utilities, cnt == 0


def aggregate_saps(summaries) -> tuple[np.ndarray, np.ndarray]:
    """utilities = |mean over shards of rho|; flagged shards are excluded per
    feature and fully-flagged features get utility 0 and an unreliable mark."""
    _check_summaries(summaries, "saps")
    return _abs_mean_over_ok(np.stack([s.rho for s in summaries]))


def aggregate_jdps(summaries) -> tuple[np.ndarray, np.ndarray]:
    """utilities = |mean over shards of (rho - delta)|."""
    _check_summaries(summaries, "jdps")
    return _abs_mean_over_ok(np.stack([s.rho - s.delta for s in summaries]))


def aggregate_acps(summaries) -> tuple[np.ndarray, np.ndarray]:
    """Count-weighted moment merge, then partial correlation, then abs."""
    _check_summaries(summaries, "acps")
    merged, _ = moments.merge_blocks([s.moments for s in summaries],
                                     [s.n for s in summaries])
    rho, ok = moments.partial_from_block(merged)
    utilities = np.where(ok, np.abs(rho), 0.0)
    return utilities, ~ok


_AGGREGATORS = {"saps": aggregate_saps, "acps": aggregate_acps, "jdps": aggregate_jdps}


def aggregate_utilities(summaries, method: str) -> tuple[np.ndarray, np.ndarray]:
    return _AGGREGATORS[check_method(method)](summaries)


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdRule:
    gamma: float


@dataclass(frozen=True)
class TopDRule:
    d: int


def default_top_d(n_rows: int) -> int:
    """Hard-threshold size floor(n / log n) for a sample of n rows."""
    return int(np.floor(n_rows / np.log(n_rows)))


def rank_features(utilities: np.ndarray) -> np.ndarray:
    """Indices by descending utility, ties broken by ascending index."""
    p = len(utilities)
    return np.lexsort((np.arange(p), -np.asarray(utilities)))


@dataclass(frozen=True)
class ScreeningResult:
    utilities: np.ndarray
    ranking: np.ndarray
    selected: np.ndarray
    rule: object
    unreliable: np.ndarray = None


def select(utilities: np.ndarray, rule, unreliable=None) -> ScreeningResult:
    """Apply a threshold or top-d rule to nonnegative utilities.

    Top-d keeps the d highest-utility features but never a zero-utility one,
    so |selected| = min(d, #positive).
    """
    utilities = np.asarray(utilities, dtype=np.float64)
    if not np.all(np.isfinite(utilities)) or np.any(utilities < 0):
        raise ValueError("utilities must be finite and nonnegative")
    ranking = rank_features(utilities)
    if isinstance(rule, ThresholdRule):
        if rule.gamma < 0:
            raise InvalidRule("threshold gamma must be nonnegative")
        selected = np.flatnonzero(utilities >= rule.gamma)
    elif isinstance(rule, TopDRule):
        if rule.d <= 0:
            raise InvalidRule("top-d size must be positive")
        k = min(rule.d, int(np.count_nonzero(utilities > 0)))
        selected = np.sort(ranking[:k])
    else:
        raise InvalidRule(f"unknown rule {rule!r}")
    if unreliable is None:
        unreliable = np.zeros(len(utilities), dtype=bool)
    return ScreeningResult(utilities=utilities, ranking=ranking,
                           selected=selected, rule=rule,
                           unreliable=np.asarray(unreliable, dtype=bool))


def screen_dataset(sharded: ShardedDataset, method: str, rule) -> ScreeningResult:
    """Summarize every shard (in parallel), aggregate, and select."""
    method = check_method(method)
    summaries = pmap(lambda s: summarize_shard(s, method), sharded.shards)
    utilities, unreliable = aggregate_utilities(summaries, method)
    return select(utilities, rule, unreliable)
