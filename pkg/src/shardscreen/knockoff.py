"""Fixed-design knockoff copies and FDR-controlled selection on top of the
distributed screening utilities.

Knockoff columns are built per shard from a centered, unit-norm design block
X with Gram matrix Sigma (unit diagonal):

    X~ = X (I - Sigma^{-1} diag{s}) + U~ C,

where U~ is an orthonormal basis orthogonal to col(X) and C'C = 2 diag{s} -
diag{s} Sigma^{-1} diag{s}.  This reproduces the classic construction of
Barber & Candes (2015): X~'X~ = Sigma and X'X~ = Sigma - diag{s}, so each
knockoff column mimics its original's correlation structure while being
decorrelated from it by s_j.

The selection statistic for feature j is the screening utility gap

    psi_j = omega(Y, X_j, Z) - omega(Y, X~_j, Z),

computed with the same distributed estimator on both blocks.  Null features
have sign-symmetric psi, which yields the conservative false-discovery-
proportion estimate and the data-driven threshold

    T_alpha = min{ t in W : (1 + #{psi_j <= -t}) / #{psi_j >= t} <= alpha },

with W the set of nonzero |psi_j|.  The end-to-end two-stage procedure
(screen on a first row split, knockoff-filter the survivors on the second)
is `run_algorithm1`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import shard_engine
from ._threads import pmap
from .errors import (
    ConstantColumn,
    InsufficientRows,
    NearSingularGram,
    ShardScreenError,
    SplitTooSmall,
)

# Smallest admissible eigenvalue of a scaled Gram before ridging kicks in.
EIG_FLOOR = 1e-8
# Ridge added to a near-singular Gram (renormalized back to unit diagonal).
RIDGE_DELTA = 1e-6
# Tolerance on positive-semidefiniteness checks.
PSD_TOL = 1e-8
# Slack kept when maximizing s coordinates so 2*Sigma - diag{s} stays PSD.
_SDP_SLACK = 1e-9
_SDP_MAX_SWEEPS = 100


def scale_block(block: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Center columns and scale them to unit Euclidean norm.

    Returns (scaled, gram) with gram = scaled' scaled carrying a unit
    diagonal.  Requires at least twice as many rows as columns.
    """
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 2:
        raise ValueError("block must be 2-d")
    n, d = block.shape
    if n < 2 * d:
        raise InsufficientRows(f"need n >= 2d rows, got n={n}, d={d}")
    centered = block - block.mean(axis=0)
    norms = np.sqrt(np.einsum("ij,ij->j", centered, centered))
    bad = np.flatnonzero(norms <= 0)
    if bad.size:
        raise ConstantColumn(f"column {bad[0]} is constant")
    scaled = centered / norms
    gram = scaled.T @ scaled
    return scaled, gram


def _check_gram(gram: np.ndarray) -> np.ndarray:
    gram = np.asarray(gram, dtype=np.float64)
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        raise ValueError("gram must be square")
    return gram


def knockoff_s_equi(gram: np.ndarray) -> np.ndarray:
    """Equicorrelated decorrelation vector: s_j = min(2 lambda_min, 1)."""
    gram = _check_gram(gram)
    lam_min = float(np.linalg.eigvalsh(gram)[0])
    if lam_min <= EIG_FLOOR:
        raise NearSingularGram(
            f"smallest Gram eigenvalue {lam_min:.3e} below floor {EIG_FLOOR:.0e}"
        )
    return np.full(gram.shape[0], min(2.0 * lam_min, 1.0))


def _sdp_coordinate_ascent(gram: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Greedy per-coordinate maximization of sum(s) subject to
    2*gram - diag(s) >= 0 and 0 <= s <= 1, starting from a feasible s."""
    d = gram.shape[0]
    two_sigma = 2.0 * gram
    s = s.copy()
    for _ in range(_SDP_MAX_SWEEPS):
        biggest_move = 0.0
        for j in range(d):
            M = two_sigma - np.diag(s)
            idx = np.delete(np.arange(d), j)
            A = M[np.ix_(idx, idx)]
            b = two_sigma[idx, j]
            try:
                # Schur complement: 2 - s_j - b' A^{-1} b >= 0 at the boundary.
                cap = 2.0 - float(b @ np.linalg.solve(A, b))
            except np.linalg.LinAlgError:
                continue
            new = min(1.0, max(0.0, cap - _SDP_SLACK))
            if new > s[j]:
                biggest_move = max(biggest_move, new - s[j])
                s[j] = new
        if biggest_move < 1e-10:
            break
    return s


def knockoff_s_sdp(gram: np.ndarray) -> np.ndarray:
    """Approximate solution of min sum|1 - s_j| s.t. s >= 0, 2*gram >= diag(s).

    Coordinate ascent from the equicorrelated point, so the objective is
    never worse than equicorrelated; falls back to it (with a warning) if the
    result drifts infeasible.
    """
    gram = _check_gram(gram)
    s_equi = knockoff_s_equi(gram)
    s = _sdp_coordinate_ascent(gram, s_equi)
    lam = float(np.linalg.eigvalsh(2.0 * gram - np.diag(s))[0])
    if lam < -PSD_TOL or np.any(s < 0) or np.any(s > 1):
        warnings.warn("coordinate ascent left the feasible set; "
                      "falling back to equicorrelated s")
        return s_equi
    return s


@dataclass(frozen=True)
class KnockoffModel:
    """Per-block knockoff construction: X~'X~ = gram, X'X~ = gram - diag(s),
    and ortho_basis' X = 0."""

    gram: np.ndarray
    s: np.ndarray
    knockoff_block: np.ndarray
    ortho_basis: np.ndarray
    c_matrix: np.ndarray


def _ortho_complement_basis(scaled: np.ndarray, seed: int) -> np.ndarray:
    """Orthonormal n x d basis orthogonal to col(scaled), deterministic in
    seed; redrawn from seed+1, seed+2, ... if a draw is rank-deficient."""
    n, d = scaled.shape
    for attempt in range(8):
        g = np.random.default_rng(seed + attempt).standard_normal((n, d))
        q, r = np.linalg.qr(np.hstack([scaled, g]))
        diag = np.abs(np.diag(r))
        if diag[d:].min() > 1e-10 * max(diag.max(), 1.0):
            return q[:, d:2 * d]
    raise NearSingularGram("could not build an orthogonal complement basis")


def generate_knockoffs(scaled: np.ndarray, s: np.ndarray, seed: int,
                       gram: np.ndarray = None) -> KnockoffModel:
    """Build the knockoff block for a centered, unit-norm design."""
    scaled = np.asarray(scaled, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    n, d = scaled.shape
    if n < 2 * d:
        raise InsufficientRows(f"need n >= 2d rows, got n={n}, d={d}")
    if gram is None:
        gram = scaled.T @ scaled
    gram = _check_gram(gram)

    try:
        sigma_inv_s = np.linalg.solve(gram, np.diag(s))
    except np.linalg.LinAlgError as exc:
        raise NearSingularGram("Gram inversion failed") from exc

    a = np.diag(2.0 * s) - s[:, None] * sigma_inv_s
    a = 0.5 * (a + a.T)
    eigval, eigvec = np.linalg.eigh(a)
    if eigval.size and eigval[0] < -1e-6 * max(1.0, float(eigval[-1])):
        raise ValueError("s vector is infeasible: 2diag(s) - diag(s)Sigma^-1diag(s) "
                         "is far from positive semidefinite")
    root = np.sqrt(np.clip(eigval, 0.0, None))[:, None] * eigvec.T
    _, r = np.linalg.qr(root)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    c = signs[:, None] * r

    u = _ortho_complement_basis(scaled, seed)
    knock = scaled - scaled @ sigma_inv_s + u @ c
    return KnockoffModel(gram=gram, s=s, knockoff_block=knock,
                         ortho_basis=u, c_matrix=c)


def knockoff_model_for_block(block: np.ndarray, seed: int, s_method: str = "equi"):
    """Scale a raw block, ridge the Gram if near-singular, pick s, and build
    knockoffs.  Returns (scaled, model, ridge_used, sdp_fallback)."""
    if s_method not in ("equi", "sdp"):
        raise ValueError(f"s_method must be 'equi' or 'sdp', got {s_method!r}")
    scaled, gram = scale_block(block)
    d = gram.shape[0]
    lam_min = float(np.linalg.eigvalsh(gram)[0])
    ridge_used = lam_min <= EIG_FLOOR
    work = (gram + RIDGE_DELTA * np.eye(d)) / (1.0 + RIDGE_DELTA) if ridge_used else gram
    sdp_fallback = False
    if s_method == "equi":
        s = knockoff_s_equi(work)
    else:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            s = knockoff_s_sdp(work)
        sdp_fallback = any("equicorrelated" in str(w.message) for w in caught)
    model = generate_knockoffs(scaled, s, seed, gram=work)
    return scaled, model, ridge_used, sdp_fallback


# ---------------------------------------------------------------------------
# Knockoff statistics and thresholding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KnockoffStats:
    psi: np.ndarray
    omega_real: np.ndarray
    omega_knock: np.ndarray


def _utilities_for_columns(y, z, cols, method, splits):
    summaries = [
        shard_engine.summarize_arrays(y[a:b], z[a:b], cols[a:b], method)
        for a, b in splits
    ]
    utilities, _ = shard_engine.aggregate_utilities(summaries, method)
    return utilities


def knockoff_stats(y: np.ndarray, z: np.ndarray, real: np.ndarray,
                   knock: np.ndarray, method: str, K: int = 1) -> KnockoffStats:
    """psi_j = omega(Y, X_j, Z) - omega(Y, X~_j, Z), both sides evaluated with
    the same distributed estimator over the same K row chunks."""
    method = shard_engine.check_method(method)
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    real = np.asarray(real, dtype=np.float64)
    knock = np.asarray(knock, dtype=np.float64)
    if real.shape != knock.shape:
        raise ValueError("real and knockoff blocks must have the same shape")
    if not (len(y) == len(z) == real.shape[0]):
        raise ValueError("row counts of y, z and the blocks must match")
    n = len(y)
    q, r = divmod(n, K)
    sizes = [q + 1] * r + [q] * (K - r)
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    splits = list(zip(bounds[:-1], bounds[1:]))
    omega_real = _utilities_for_columns(y, z, real, method, splits)
    omega_knock = _utilities_for_columns(y, z, knock, method, splits)
    return KnockoffStats(psi=omega_real - omega_knock,
                         omega_real=omega_real, omega_knock=omega_knock)


def fdp_hat(psi: np.ndarray, t: float) -> float:
    """Conservative FDP estimate #{psi <= -t} / #{psi >= t} (inf when the
    denominator is empty)."""
    if t <= 0:
        raise ValueError("t must be positive")
    psi = np.asarray(psi, dtype=np.float64)
    den = int(np.count_nonzero(psi >= t))
    if den == 0:
        return math.inf
    return int(np.count_nonzero(psi <= -t)) / den


@dataclass(frozen=True)
class FdrSelection:
    alpha: float
    threshold: float
    selected: np.ndarray
    fdp_hat_at_t: float


def select_threshold(psi: np.ndarray, alpha: float) -> FdrSelection:
    """Smallest candidate t with (1 + #{psi <= -t}) / #{psi >= t} <= alpha.

    Candidates are the nonzero |psi_j|, scanned in ascending order.  If none
    qualifies the threshold is +inf and the selection empty; zero-psi
    features can never be selected.
    """
    psi = np.asarray(psi, dtype=np.float64)
    if not np.all(np.isfinite(psi)):
        raise ValueError("psi must be finite")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    sorted_psi = np.sort(psi)
    p = len(psi)
    for t in np.unique(np.abs(psi[psi != 0.0])):
        num = 1 + int(np.searchsorted(sorted_psi, -t, side="right"))
        den = p - int(np.searchsorted(sorted_psi, t, side="left"))
        if den > 0 and num / den <= alpha:
            return FdrSelection(alpha=alpha, threshold=float(t),
                                selected=np.flatnonzero(psi >= t),
                                fdp_hat_at_t=fdp_hat(psi, float(t)))
    return FdrSelection(alpha=alpha, threshold=math.inf,
                        selected=np.empty(0, dtype=np.intp), fdp_hat_at_t=0.0)


# ---------------------------------------------------------------------------
# Two-stage procedure
# ---------------------------------------------------------------------------

@dataclass
class AuditRecord:
    """Key-value trace of one two-stage run (all indices 0-based)."""

    method: str
    K: int
    n1: int
    n2: int
    d: int
    alpha: float
    stage1_selected: np.ndarray
    s_min: list
    s_mean: list
    s_max: list
    ridge_shards: list
    sdp_fallback_shards: list
    psi: np.ndarray
    threshold: float
    selected: np.ndarray
    fdp_hat_at_t: float

    def to_text(self) -> str:
        def ints(a):
            return " ".join(str(int(v)) for v in a)

        def floats(a):
            return " ".join(repr(float(v)) for v in a)

        lines = [
            "shardscreen-knockoff-audit v1",
            f"method: {self.method}",
            f"shards: {self.K}",
            f"n1: {self.n1}",
            f"n2: {self.n2}",
            f"d: {self.d}",
            f"alpha: {self.alpha!r}",
            f"stage1_selected: {ints(self.stage1_selected)}",
            f"s_min: {floats(self.s_min)}",
            f"s_mean: {floats(self.s_mean)}",
            f"s_max: {floats(self.s_max)}",
            f"ridge_shards: {ints(self.ridge_shards)}",
            f"sdp_fallback_shards: {ints(self.sdp_fallback_shards)}",
            f"psi: {floats(self.psi)}",
            f"threshold: {self.threshold!r}",
            f"selected: {ints(self.selected)}",
            f"fdp_hat_at_t: {self.fdp_hat_at_t!r}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "AuditRecord":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("shardscreen-knockoff-audit"):
            raise ValueError("not an audit record")
        kv = {}
        for ln in lines[1:]:
            key, _, val = ln.partition(":")
            kv[key.strip()] = val.strip()

        def ints(key):
            v = kv[key]
            return np.array([int(x) for x in v.split()], dtype=np.intp) if v else np.empty(0, dtype=np.intp)

        def floats(key):
            v = kv[key]
            return [float(x) for x in v.split()] if v else []

        return cls(
            method=kv["method"], K=int(kv["shards"]), n1=int(kv["n1"]),
            n2=int(kv["n2"]), d=int(kv["d"]), alpha=float(kv["alpha"]),
            stage1_selected=ints("stage1_selected"),
            s_min=floats("s_min"), s_mean=floats("s_mean"), s_max=floats("s_max"),
            ridge_shards=list(ints("ridge_shards")),
            sdp_fallback_shards=list(ints("sdp_fallback_shards")),
            psi=np.array(floats("psi")), threshold=float(kv["threshold"]),
            selected=ints("selected"), fdp_hat_at_t=float(kv["fdp_hat_at_t"]),
        )


@dataclass
class Algorithm1Result:
    selection: FdrSelection
    audit: AuditRecord
    stage1: shard_engine.ScreeningResult
    stats: KnockoffStats = None


def default_split(n: int, d: int) -> tuple[int, int]:
    """Default (n1, n2) for shard size n: n2 as large as practical while
    keeping a usable first block."""
    n2 = min(n - 3, max(2 * d + 10, (2 * n) // 3))
    return n - n2, n2


def _shard_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence(entropy=(abs(int(seed)), k)).generate_state(1)[0])


def run_algorithm1(sharded: shard_engine.ShardedDataset, alpha: float, d: int,
                   method: str, seed: int, n1: int = None, n2: int = None,
                   s_method: str = "equi") -> Algorithm1Result:
    """Two-stage distributed screening with FDR control.

    Each shard's rows are split into a screening block (n1 rows) and a
    knockoff block (n2 rows, n2 > 2d).  Stage one ranks all features on the
    screening blocks and keeps the top d; stage two builds per-shard
    knockoffs for those columns, computes psi with the same distributed
    estimator on both blocks, and selects {j : psi_j >= T_alpha}.
    """
    method = shard_engine.check_method(method)
    if d < 1:
        raise ValueError("d must be at least 1")
    n_min = min(sharded.shard_sizes)
    if n1 is None and n2 is None:
        n1, n2 = default_split(n_min, d)
    elif n2 is None:
        n2 = n_min - n1
    elif n1 is None:
        n1 = n_min - n2
    if n2 <= 2 * d:
        raise SplitTooSmall(f"need n2 > 2d, got n2={n2}, d={d}")
    if n1 < 3:
        raise SplitTooSmall(f"first block needs at least 3 rows, got n1={n1}")
    if n1 + n2 > n_min:
        raise SplitTooSmall(f"n1+n2={n1 + n2} exceeds smallest shard size {n_min}")

    first_blocks = [s[:n1] for s in sharded.shards]
    summaries = pmap(lambda b: shard_engine.summarize_shard(b, method), first_blocks)
    utilities1, unreliable = shard_engine.aggregate_utilities(summaries, method)
    stage1 = shard_engine.select(utilities1, shard_engine.TopDRule(d), unreliable)
    m1 = stage1.selected

    if m1.size == 0:
        empty = FdrSelection(alpha=alpha, threshold=math.inf,
                             selected=np.empty(0, dtype=np.intp), fdp_hat_at_t=0.0)
        audit = AuditRecord(method=method, K=sharded.K, n1=n1, n2=n2, d=d,
                            alpha=alpha, stage1_selected=m1, s_min=[], s_mean=[],
                            s_max=[], ridge_shards=[], sdp_fallback_shards=[],
                            psi=np.empty(0), threshold=math.inf,
                            selected=empty.selected, fdp_hat_at_t=0.0)
        return Algorithm1Result(selection=empty, audit=audit, stage1=stage1)

    def build(k):
        block2 = sharded.shards[k][n1:n1 + n2]
        y2, z2, X2 = shard_engine.unpack_block(block2)
        try:
            return (y2, z2) + knockoff_model_for_block(
                X2[:, m1], seed=_shard_seed(seed, k), s_method=s_method)
        except ShardScreenError as exc:
            raise type(exc)(f"shard {k}: {exc}") from exc

    built = pmap(build, range(sharded.K))
    ys = np.concatenate([b[0] for b in built])
    zs = np.concatenate([b[1] for b in built])
    reals = np.vstack([b[2] for b in built])
    knocks = np.vstack([b[3].knockoff_block for b in built])
    stats = knockoff_stats(ys, zs, reals, knocks, method, K=sharded.K)

    inner = select_threshold(stats.psi, alpha)
    selected = m1[inner.selected]
    selection = FdrSelection(alpha=alpha, threshold=inner.threshold,
                             selected=selected, fdp_hat_at_t=inner.fdp_hat_at_t)
    audit = AuditRecord(
        method=method, K=sharded.K, n1=n1, n2=n2, d=d, alpha=alpha,
        stage1_selected=m1,
        s_min=[float(b[3].s.min()) for b in built],
        s_mean=[float(b[3].s.mean()) for b in built],
        s_max=[float(b[3].s.max()) for b in built],
        ridge_shards=[k for k, b in enumerate(built) if b[4]],
        sdp_fallback_shards=[k for k, b in enumerate(built) if b[5]],
        psi=stats.psi, threshold=selection.threshold, selected=selected,
        fdp_hat_at_t=selection.fdp_hat_at_t,
    )
    return Algorithm1Result(selection=selection, audit=audit,
                            stage1=stage1, stats=stats)
