"""Raw moments, Pearson correlation, and partial correlation for (Y, X, Z) triples.

A feature's association with the response, adjusted for one conditioning
variable, is a function of nine raw moments:

    E[XY], E[XZ], E[YZ], E[X], E[Y], E[Z], E[X^2], E[Y^2], E[Z^2]

Everything downstream (shard summaries, distributed aggregation, knockoff
statistics) reduces to computing, merging, and evaluating these moments.
Moments are plain sample means, so merging two disjoint blocks is the
count-weighted average of their moment vectors; that identity is what makes
the aggregated estimator equal the centralized one.

Two APIs live here:

* a scalar API (:class:`MomentVector`, :func:`accumulate_moments`, ...) that
  validates inputs and raises on degeneracy, used for single triples and as
  the reference path in tests;
* a vectorized block API (:func:`moment_block`, :func:`partial_from_block`)
  operating on ``(p, 9)`` arrays for whole feature panels, which flags
  degenerate features instead of raising.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    CollinearWithCondition,
    CountOverflow,
    DegenerateVariance,
    InsufficientSamples,
    NonFiniteInput,
)

# Relative floor below which a variance is treated as zero, as a fraction of
# the variable's second moment.  Below this level the central-moment
# subtraction has lost most of its significant digits anyway.
VARIANCE_REL_FLOOR = 1e-12

# Floor for the partial-correlation denominator sqrt((1-r_xz^2)(1-r_yz^2)).
DENOM_FLOOR = 1e-8

# Correlations are clamped into [-1 + CLAMP_EPS, 1 - CLAMP_EPS].
CLAMP_EPS = 1e-12

_MAX_COUNT = 2**63 - 1

# Column order of the nine moments in block form.
_XY, _XZ, _YZ, _X, _Y, _Z, _XX, _YY, _ZZ = range(9)


@dataclass(frozen=True)
class TripleSample:
    """One (response, feature, conditional) sample of equal-length vectors."""

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        x = np.asarray(self.x, dtype=np.float64)
        z = np.asarray(self.z, dtype=np.float64)
        if not (y.ndim == x.ndim == z.ndim == 1) or not (len(y) == len(x) == len(z)):
            raise InsufficientSamples("y, x, z must be 1-d vectors of equal length")
        if len(y) < 3:
            raise InsufficientSamples(f"need at least 3 observations, got {len(y)}")
        for name, v in (("y", y), ("x", x), ("z", z)):
            if not np.all(np.isfinite(v)):
                raise NonFiniteInput(f"non-finite entry in {name}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)

    def __len__(self):
        return len(self.y)


@dataclass(frozen=True)
class MomentVector:
    """The nine raw moments of a (Y, X, Z) triple plus the sample count.

    Fields t1..t9 are E[XY], E[XZ], E[YZ], E[X], E[Y], E[Z], E[X^2], E[Y^2],
    E[Z^2].  All are means (1/n convention), so two vectors merge by
    count-weighted averaging.
    """

    t1: float
    t2: float
    t3: float
    t4: float
    t5: float
    t6: float
    t7: float
    t8: float
    t9: float
    count: int

    def __post_init__(self):
        if self.count <= 0:
            raise InsufficientSamples("count must be positive")
        for second, mean, name in (
            (self.t7, self.t4, "x"),
            (self.t8, self.t5, "y"),
            (self.t9, self.t6, "z"),
        ):
            if second - mean * mean < -VARIANCE_REL_FLOOR * max(abs(second), 1.0):
                raise ValueError(f"inconsistent moments: negative variance for {name}")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.t1, self.t2, self.t3, self.t4, self.t5,
             self.t6, self.t7, self.t8, self.t9]
        )

    @classmethod
    def from_array(cls, t: np.ndarray, count: int) -> "MomentVector":
        return cls(*(float(v) for v in t), count=int(count))


def accumulate_moments(sample: TripleSample) -> MomentVector:
    """Compute the nine moment means of a triple with compensated summation."""
    if not isinstance(sample, TripleSample):
        sample = TripleSample(*sample)
    y, x, z = sample.y, sample.x, sample.z
    n = len(sample)
    return MomentVector(
        t1=math.fsum(x * y) / n,
        t2=math.fsum(x * z) / n,
        t3=math.fsum(y * z) / n,
        t4=math.fsum(x) / n,
        t5=math.fsum(y) / n,
        t6=math.fsum(z) / n,
        t7=math.fsum(x * x) / n,
        t8=math.fsum(y * y) / n,
        t9=math.fsum(z * z) / n,
        count=n,
    )


def merge_moments(a: MomentVector, b: MomentVector) -> MomentVector:
    """Count-weighted average of two moment vectors.

    Equals ``accumulate_moments`` over the concatenated samples (exactly, in
    exact arithmetic), so shard moments can be tree-reduced in any order.
    """
    if a.count <= 0 or b.count <= 0:
        raise InsufficientSamples("both counts must be positive")
    total = a.count + b.count
    if total > _MAX_COUNT:
        raise CountOverflow(f"merged count {total} exceeds 64-bit range")
    wa = a.count / total
    wb = b.count / total
    merged = wa * a.as_array() + wb * b.as_array()
    return MomentVector.from_array(merged, total)


def _variance_floor(second_moment: float) -> float:
    return VARIANCE_REL_FLOOR * second_moment


_PAIR_SLOTS = {
    "xy": (_XY, _X, _Y, _XX, _YY, ("x", "y")),
    "xz": (_XZ, _X, _Z, _XX, _ZZ, ("x", "z")),
    "yz": (_YZ, _Y, _Z, _YY, _ZZ, ("y", "z")),
}


def _pearson_raw(t: np.ndarray, pair: str) -> float:
    """Unclamped sample correlation for one pair; raises on degeneracy."""
    cross, ma, mb, sa, sb, names = _PAIR_SLOTS[pair]
    var_a = t[sa] - t[ma] ** 2
    var_b = t[sb] - t[mb] ** 2
    if var_a <= _variance_floor(t[sa]):
        raise DegenerateVariance(f"variance of {names[0]} below floor")
    if var_b <= _variance_floor(t[sb]):
        raise DegenerateVariance(f"variance of {names[1]} below floor")
    return (t[cross] - t[ma] * t[mb]) / math.sqrt(var_a * var_b)


def _clamp(r: float) -> float:
    return min(max(r, -1.0 + CLAMP_EPS), 1.0 - CLAMP_EPS)


def pearson_from_moments(m: MomentVector, pair: str) -> float:
    """Sample Pearson correlation of one pair ('xy', 'xz' or 'yz'),
    clamped into [-1 + CLAMP_EPS, 1 - CLAMP_EPS]."""
    pair = pair.lower()
    if pair not in _PAIR_SLOTS:
        raise ValueError(f"pair must be one of 'xy', 'xz', 'yz', got {pair!r}")
    return _clamp(_pearson_raw(m.as_array(), pair))


def partial_correlation(m: MomentVector) -> float:
    """Sample partial correlation of Y and X adjusting for Z.

    Evaluates (r_xy - r_xz * r_yz) / sqrt((1 - r_xz^2)(1 - r_yz^2)) on the
    unclamped pairwise correlations, which equals the correlation of the
    least-squares partial residuals of Y and X on Z.  Raises
    :class:`CollinearWithCondition` when the denominator underflows.
    """
    t = m.as_array()
    r_xy = _pearson_raw(t, "xy")
    r_xz = _pearson_raw(t, "xz")
    r_yz = _pearson_raw(t, "yz")
    # |r| at the clamp bound means machine-precision collinearity; checking
    # the correlations (not just the denominator product) keeps the flag
    # deterministic across sharded and centralized moment paths.
    if abs(r_xz) >= 1.0 - CLAMP_EPS or abs(r_yz) >= 1.0 - CLAMP_EPS:
        raise CollinearWithCondition(
            "x or y is numerically collinear with the conditioning variable"
        )
    denom_sq = (1.0 - r_xz * r_xz) * (1.0 - r_yz * r_yz)
    denom = math.sqrt(max(denom_sq, 0.0))
    if denom < DENOM_FLOOR:
        raise CollinearWithCondition(
            "x or y is numerically collinear with the conditioning variable"
        )
    return _clamp((r_xy - r_xz * r_yz) / denom)


# ---------------------------------------------------------------------------
# Vectorized block API
# ---------------------------------------------------------------------------

def moment_block(y: np.ndarray, X: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Per-feature moment means for a panel: returns a (p, 9) block.

    Column order matches MomentVector.t1..t9.  The y/z-only moments are
    replicated across features so each row is a self-contained moment vector.
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    z = np.ascontiguousarray(z, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    n = y.shape[0]
    p = X.shape[1]
    out = np.empty((p, 9))
    out[:, _XY] = X.T @ y / n
    out[:, _XZ] = X.T @ z / n
    out[:, _YZ] = float(y @ z) / n
    out[:, _X] = X.mean(axis=0)
    out[:, _Y] = y.mean()
    out[:, _Z] = z.mean()
    out[:, _XX] = np.einsum("ij,ij->j", X, X) / n
    out[:, _YY] = float(y @ y) / n
    out[:, _ZZ] = float(z @ z) / n
    return out


def partial_from_block(block: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized partial correlation over a (..., 9) moment block.

    Returns ``(rho, ok)`` where degenerate entries (variance below floor or
    collinear with the conditioning variable) have ``ok`` False and ``rho``
    NaN instead of raising, so one bad feature cannot abort a whole panel.
    """
    t = np.asarray(block, dtype=np.float64)
    var_x = t[..., _XX] - t[..., _X] ** 2
    var_y = t[..., _YY] - t[..., _Y] ** 2
    var_z = t[..., _ZZ] - t[..., _Z] ** 2
    ok = (
        (var_x > VARIANCE_REL_FLOOR * t[..., _XX])
        & (var_y > VARIANCE_REL_FLOOR * t[..., _YY])
        & (var_z > VARIANCE_REL_FLOOR * t[..., _ZZ])
    )
    cov_xy = t[..., _XY] - t[..., _X] * t[..., _Y]
    cov_xz = t[..., _XZ] - t[..., _X] * t[..., _Z]
    cov_yz = t[..., _YZ] - t[..., _Y] * t[..., _Z]
    with np.errstate(divide="ignore", invalid="ignore"):
        r_xy = cov_xy / np.sqrt(var_x * var_y)
        r_xz = cov_xz / np.sqrt(var_x * var_z)
        r_yz = cov_yz / np.sqrt(var_y * var_z)
        ok &= (np.abs(r_xz) < 1.0 - CLAMP_EPS) & (np.abs(r_yz) < 1.0 - CLAMP_EPS)
        denom = np.sqrt(np.clip((1.0 - r_xz**2) * (1.0 - r_yz**2), 0.0, None))
        ok &= denom >= DENOM_FLOOR
        rho = (r_xy - r_xz * r_yz) / denom
    rho = np.clip(rho, -1.0 + CLAMP_EPS, 1.0 - CLAMP_EPS)
    rho = np.where(ok, rho, np.nan)
    return rho, ok


def merge_blocks(blocks: list[np.ndarray], counts: list[int]) -> tuple[np.ndarray, int]:
    """Count-weighted merge of per-shard (p, 9) moment blocks."""
    total = int(sum(counts))
    if total > _MAX_COUNT:
        raise CountOverflow(f"merged count {total} exceeds 64-bit range")
    merged = np.zeros_like(np.asarray(blocks[0], dtype=np.float64))
    for blk, n in zip(blocks, counts):
        merged += (n / total) * blk
    return merged, total
