"""Single-layer graph-convolutional recommendation pipeline."""

from .errors import ConfigError, DataError, NumericError, SlgcnError
from .graph import (
    DatasetSplit,
    Edge,
    InteractionGraph,
    LabeledInteraction,
    NodeRef,
    Schema,
    TranslatedGraph,
    binarize_ratings,
    label_all_positive,
    load_interactions,
    positive_view,
    split_dataset,
    translate_graph,
)
from .similarity import (
    InteractionProfile,
    ProfileStore,
    RelationWeights,
    SimilarityScore,
    aggregation_bound_check,
    da_scores,
    da_similarity_hetero,
    da_similarity_kl,
    da_similarity_norm,
    first_order_scores,
    interaction_profile,
    random_walk_scores,
    second_order_scores,
)
from .sampling import (
    NeighborhoodQuality,
    SampledSubgraph,
    ans,
    build_subgraph,
    mans,
    sample_importance,
    select_topk,
    subgraph_quality,
)
from .features import FeatureMatrix, load_features, save_features, seeded_features
from .model import (
    AggregatedFeatures,
    ModelConfig,
    OptimizerState,
    PredictionModel,
    TrainConfig,
    adam_step,
    aggregate_neighborhood,
    build_aggregated,
    concat_features,
    frozen_inputs,
    loss,
    train,
    trainable_inputs,
)
from .evaluation import (
    MetricsReport,
    ProtocolConfig,
    RankingTask,
    auc,
    evaluate_model,
    ndcg_at_k,
    ndcg_from_scores,
)
from .config import ExperimentConfig, default_config, parse, parse_file, serialize
from .pipeline import Pipeline, compare_sampling, run_pipeline

__version__ = "0.1.0"
