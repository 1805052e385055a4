"""shardscreen: distributed conditional feature screening with FDR control.

Screens ultrahigh-dimensional features by their partial correlation with a
response, adjusted for one conditioning variable, across K data shards, and
optionally applies a two-stage knockoff filter to pick a selection threshold
that controls the false discovery rate.
"""
from . import errors
from .knockoff import (
    Algorithm1Result,
    AuditRecord,
    FdrSelection,
    KnockoffModel,
    KnockoffStats,
    fdp_hat,
    generate_knockoffs,
    knockoff_model_for_block,
    knockoff_s_equi,
    knockoff_s_sdp,
    knockoff_stats,
    run_algorithm1,
    scale_block,
    select_threshold,
)
from .metrics import (
    auc,
    auc_double_sum,
    fdr_realized,
    minimum_model_size,
    psr,
    ssr_indicator,
)
from .moments import (
    MomentVector,
    TripleSample,
    accumulate_moments,
    merge_moments,
    partial_correlation,
    pearson_from_moments,
)
from .shard_engine import (
    ScreeningResult,
    ShardedDataset,
    ShardSummary,
    ThresholdRule,
    TopDRule,
    aggregate_acps,
    aggregate_jdps,
    aggregate_saps,
    aggregate_utilities,
    default_top_d,
    rank_features,
    screen_dataset,
    select,
    shard_dataset,
    summarize_shard,
)
from .simulate import (
    ExperimentReport,
    SimConfig,
    TruthSet,
    generate_response,
    knockoff_pipeline,
    model_truth,
    run_replications,
    sample_ar1_features,
    screening_pipeline,
)

__version__ = "0.1.0"

__all__ = [
    "errors",
    "MomentVector", "TripleSample", "accumulate_moments", "merge_moments",
    "pearson_from_moments", "partial_correlation",
    "ShardedDataset", "ShardSummary", "ScreeningResult", "ThresholdRule",
    "TopDRule", "shard_dataset", "summarize_shard", "aggregate_saps",
    "aggregate_acps", "aggregate_jdps", "aggregate_utilities", "select",
    "screen_dataset", "rank_features", "default_top_d",
    "KnockoffModel", "KnockoffStats", "FdrSelection", "AuditRecord",
    "Algorithm1Result", "scale_block", "knockoff_s_equi", "knockoff_s_sdp",
    "generate_knockoffs", "knockoff_model_for_block", "knockoff_stats",
    "fdp_hat", "select_threshold", "run_algorithm1",
    "ssr_indicator", "psr", "fdr_realized", "auc", "auc_double_sum",
    "minimum_model_size",
    "SimConfig", "TruthSet", "ExperimentReport", "sample_ar1_features",
    "generate_response", "model_truth", "run_replications",
    "screening_pipeline", "knockoff_pipeline",
]
