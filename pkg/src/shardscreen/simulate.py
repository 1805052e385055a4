"""Synthetic benchmarks: AR(1)-correlated Gaussian features, two response
models, and a replicated experiment driver.

Features are N(0, Sigma) with sigma_ij = 0.5^|i-j|, sampled by the Markov
recursion X_1 ~ N(0,1), X_{j+1} = 0.5 X_j + sqrt(0.75) eps (exact in
distribution, O(Np) instead of a p x p Cholesky).  Responses:

    model 'a': Y = c (X1 + X3 + X4 + ... + X9) + eps
    model 'b': Y = c (2 X1 + 3 X2 + 1.5 X3 + 2 X4 + 2 sin(2 pi X5)) + eps

with eps ~ N(0,1).  The conditioning variable is a designated feature column;
when it is itself important, the default truth convention for scoring
excludes it (it cannot be ranked: conditioning on itself is degenerate).

Replications are seeded independently per index via SeedSequence(root, rep),
so they can run in any order or concurrently and still reproduce bit-for-bit.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from . import knockoff as knockoff_mod
from . import metrics
from .errors import ModelRequiresMoreFeatures
from .shard_engine import ShardedDataset, TopDRule, default_top_d, shard_dataset, screen_dataset

MODEL_SUPPORT = {
    "a": frozenset({0, 2, 3, 4, 5, 6, 7, 8}),
    "b": frozenset({0, 1, 2, 3, 4}),
}
_MIN_FEATURES = {"a": 9, "b": 5}


@dataclass(frozen=True)
class TruthSet:
    important: frozenset
    conditional: int

    def scored(self, exclude_conditional: bool = True) -> frozenset:
        """Truth set used for scoring; optionally drops the conditional
        feature when it is itself important."""
        if exclude_conditional:
            return self.important - {self.conditional}
        return self.important


def sample_ar1_features(N: int, p: int, rng) -> np.ndarray:
    """N i.i.d. rows from N(0, Sigma), sigma_ij = 0.5^|i-j|."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    eps = rng.standard_normal((N, p))
    if p > 1:
        eps[:, 1:] *= np.sqrt(0.75)
    return lfilter([1.0], [1.0, -0.5], eps, axis=1)


def generate_response(features: np.ndarray, model: str, c: float,
                      rng=None, noise: np.ndarray = None) -> np.ndarray:
    """Response vector for model 'a' or 'b' with fresh N(0,1) noise (or a
    caller-supplied noise vector)."""
    model = str(model).lower()
    if model not in MODEL_SUPPORT:
        raise ValueError(f"model must be 'a' or 'b', got {model!r}")
    X = np.asarray(features, dtype=np.float64)
    if X.shape[1] < _MIN_FEATURES[model]:
        raise ModelRequiresMoreFeatures(
            f"model {model!r} needs p >= {_MIN_FEATURES[model]}, got {X.shape[1]}"
        )
    if noise is None:
        if isinstance(rng, (int, np.integer)) or rng is None:
            rng = np.random.default_rng(rng)
        noise = rng.standard_normal(X.shape[0])
    if model == "a":
        signal = X[:, 0] + X[:, 2:9].sum(axis=1)
    else:
        signal = (2.0 * X[:, 0] + 3.0 * X[:, 1] + 1.5 * X[:, 2]
                  + 2.0 * X[:, 3] + 2.0 * np.sin(2.0 * np.pi * X[:, 4]))
    return c * signal + noise


def model_truth(model: str, conditional_index: int) -> TruthSet:
    return TruthSet(important=MODEL_SUPPORT[str(model).lower()],
                    conditional=int(conditional_index))


@dataclass
class SimConfig:
    N: int
    p: int
    c: float
    model: str = "a"
    conditional_index: int = 0
    K: int = 1
    reps: int = 1
    seed: int = 0
    shuffle: bool = False
    exclude_conditional_from_truth: bool = True

    def __post_init__(self):
        if self.N < 3 * self.K:
            raise ValueError("N must be at least 3K")
        if self.p < 10:
            raise ValueError("p must be at least 10")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not 0 <= self.conditional_index < self.p:
            raise ValueError("conditional index out of range")


def build_dataset(config: SimConfig, rng) -> ShardedDataset:
    """One replication's sharded data: [y | z | X] with z a copy of the
    conditional feature column."""
    data = np.empty((config.N, config.p + 2))
    X = sample_ar1_features(config.N, config.p, rng)
    data[:, 2:] = X
    data[:, 0] = generate_response(X, config.model, config.c, rng=rng)
    data[:, 1] = X[:, config.conditional_index]
    del X
    return shard_dataset(data, config.K, seed=config.seed, shuffle=config.shuffle)


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------

@dataclass
class PipelineResult:
    utilities: np.ndarray
    selected: np.ndarray
    info: dict = field(default_factory=dict)


def screening_pipeline(method: str, rule=None):
    """Plain distributed screening; rule defaults to top floor(N / log N)."""

    def run(sharded: ShardedDataset, seed: int) -> PipelineResult:
        use_rule = rule or TopDRule(default_top_d(sharded.total_rows))
        res = screen_dataset(sharded, method, use_rule)
        return PipelineResult(utilities=res.utilities, selected=res.selected,
                              info={"rule": use_rule})

    return run


def knockoff_pipeline(method: str, alpha: float, d: int,
                      n1: int = None, n2: int = None, s_method: str = "equi"):
    """Two-stage knockoff-filtered screening at FDR level alpha."""

    def run(sharded: ShardedDataset, seed: int) -> PipelineResult:
        out = knockoff_mod.run_algorithm1(
            sharded, alpha=alpha, d=d, method=method, seed=seed,
            n1=n1, n2=n2, s_method=s_method)
        return PipelineResult(
            utilities=out.stage1.utilities, selected=out.selection.selected,
            info={"threshold": out.selection.threshold,
                  "fdp_hat": out.selection.fdp_hat_at_t,
                  "audit": out.audit})

    return run


# ---------------------------------------------------------------------------
# Replication driver
# ---------------------------------------------------------------------------

REPLICATION_FIELDS = ("rep", "ssr", "psr", "fdr", "auc", "ms", "wall_millis")


@dataclass
class ExperimentReport:
    rows: list
    truth_convention: str
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        i = REPLICATION_FIELDS.index(name)
        return np.array([r[i] for r in self.rows], dtype=np.float64)

    def summary(self) -> dict:
        ms = self.column("ms")
        return {
            "q05": float(np.quantile(ms, 0.05)),
            "q50": float(np.quantile(ms, 0.50)),
            "q95": float(np.quantile(ms, 0.95)),
            "auc": float(self.column("auc").mean()),
            "ssr": float(self.column("ssr").mean()),
            "psr": float(self.column("psr").mean()),
            "fdr": float(self.column("fdr").mean()),
            "time": float(self.column("wall_millis").mean()) / 1000.0,
        }

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPLICATION_FIELDS)
            for row in self.rows:
                writer.writerow([repr(float(v)) if isinstance(v, float) else int(v)
                                 for v in row])

    def write_summary_csv(self, path):
        summary = self.summary()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(summary.keys())
            writer.writerow([repr(float(v)) for v in summary.values()])


def replication_seed(root_seed: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=(abs(int(root_seed)), int(rep)))


def run_replications(config: SimConfig, pipeline) -> ExperimentReport:
    """Run `pipeline` on `config.reps` fresh datasets and score each one.

    Per-replication seeds are derived from (root seed, rep index), never
    sequentially, so results do not depend on execution order.
    """
    rows = []
    for rep in range(config.reps):
        ss = replication_seed(config.seed, rep)
        data_ss, pipe_ss = ss.spawn(2)
        sharded = build_dataset(config, np.random.default_rng(data_ss))
        truth = model_truth(config.model, config.conditional_index)
        scored = truth.scored(config.exclude_conditional_from_truth)
        t0 = time.perf_counter()
        result = pipeline(sharded, int(pipe_ss.generate_state(1)[0]))
        wall = (time.perf_counter() - t0) * 1000.0
        rows.append((
            rep,
            metrics.ssr_indicator(scored, result.selected),
            metrics.psr(scored, result.selected),
            metrics.fdr_realized(scored, result.selected),
            metrics.auc(scored, result.utilities),
            metrics.minimum_model_size(scored, result.utilities),
            wall,
        ))
    convention = ("exclude_conditional" if config.exclude_conditional_from_truth
                  else "include_conditional")
    return ExperimentReport(rows=rows, truth_convention=convention,
                            meta={"config": config})
