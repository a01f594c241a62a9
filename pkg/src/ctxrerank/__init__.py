"""Neighbor-context re-ranking for feature-based retrieval.

Refines a probe's initial content-based ranking list using first- and
second-order neighbor contexts, reciprocal-rank similarities, and
ranking-list reliability weighting, with a strict offline(gallery) /
online(probe) split: all gallery-side work is precomputed into an index,
and each query costs O(k0*k*L + L*log L) after its initial ranking.
"""

__version__ = "0.1.0"

from .baseline import (
    Metric,
    PositionTable,
    RankingList,
    compute_gallery_rankings,
    compute_probe_ranking,
    ingest_gallery_scores,
    ingest_probe_scores,
    load_score_matrix,
    save_score_matrix,
)
from .context import (
    ContextSet,
    ReliabilityTable,
    first_order_context,
    reliability_kappa,
    second_order_context,
    weight_first_order_offline,
    weight_first_order_online,
    weight_second_order,
    weight_uniform,
)
from .dataset import (
    FeatureSet,
    SynthConfig,
    generate_synthetic,
    load_features,
    save_features,
)
from .evaluation import (
    EvalReport,
    GroundTruth,
    cmc_curve,
    cross_camera_ground_truth,
    evaluate,
    mean_average_precision,
    timing_report,
)
from .index import (
    CorruptIndexError,
    FingerprintMismatchError,
    GalleryIndex,
    IndexVersionError,
    RerankParams,
    build_index,
    build_index_from_scores,
    load_index,
    save_index,
)
from .ranksim import (
    SELF_SIMILARITY,
    rank_combined,
    rank_nonreciprocal,
    rank_reciprocal_max,
    rank_reciprocal_sum,
    rank_similarity,
)
from .rerank import (
    QueryResult,
    Reranker,
    ScoredCandidate,
    bilateral_score,
    point_to_set_score,
    progressive_rerank,
    stage_rerank,
)

__all__ = [
    "Metric",
    "PositionTable",
    "RankingList",
    "compute_gallery_rankings",
    "compute_probe_ranking",
    "ingest_gallery_scores",
    "ingest_probe_scores",
    "load_score_matrix",
    "save_score_matrix",
    "ContextSet",
    "ReliabilityTable",
    "first_order_context",
    "second_order_context",
    "reliability_kappa",
    "weight_first_order_offline",
    "weight_first_order_online",
    "weight_second_order",
    "weight_uniform",
    "FeatureSet",
    "SynthConfig",
    "generate_synthetic",
    "load_features",
    "save_features",
    "EvalReport",
    "GroundTruth",
    "cmc_curve",
    "cross_camera_ground_truth",
    "evaluate",
    "mean_average_precision",
    "timing_report",
    "GalleryIndex",
    "RerankParams",
    "build_index",
    "build_index_from_scores",
    "save_index",
    "load_index",
    "CorruptIndexError",
    "FingerprintMismatchError",
    "IndexVersionError",
    "SELF_SIMILARITY",
    "rank_nonreciprocal",
    "rank_reciprocal_max",
    "rank_reciprocal_sum",
    "rank_combined",
    "rank_similarity",
    "QueryResult",
    "Reranker",
    "ScoredCandidate",
    "bilateral_score",
    "point_to_set_score",
    "progressive_rerank",
    "stage_rerank",
    "__version__",
]
