"""Random-shopper ranking: Markov feature topologies with learned weights.

Items in a context form the states of one Markov chain per feature; ranking
scores are the stationary distribution of the weighted mixture plus a
uniform restart. Because chains are rebuilt per context, the same item can
rank differently in different contexts, which is what the flip-prediction
pipeline exploits.
"""

from .baselines import (
    ConstantScores,
    FeatureRow,
    LinearModel,
    constant_scorer,
    fit_least_squares,
    predict,
)
from .data import (
    BASE_COLUMNS,
    DatasetSchema,
    FlipPair,
    LoadResult,
    LogRow,
    SyntheticDataset,
    SyntheticSpec,
    derive_seed,
    feature_rows_from_logs,
    generate_flip_dataset,
    generate_synthetic,
    load_csv,
    load_instances,
    mine_flip_pairs,
    paired_split,
    save_csv,
    save_instances,
    synthetic_schema,
    topologies_from_row,
    training_instances_from_rows,
)
from .errors import (
    ContextTooSmall,
    DanglingItem,
    DegenerateVariance,
    GridBudgetExceeded,
    NoUniqueStationary,
    ParseError,
    RsmError,
    SchemaError,
    ShapeError,
    SingularFundamental,
    SplitTooSmall,
)
from .evaluation import (
    ExperimentReport,
    Model,
    constant_model,
    ctr_mae,
    fixed_weights_model,
    flip_accuracy,
    least_squares_model,
    paired_t_test,
    rsm_model,
    run_experiment,
    run_lambda_sweep,
    true_ctr_model,
)
from .learner import (
    FitResult,
    LearnerConfig,
    TrainingInstance,
    fit,
    grid_search,
    linearized_row,
    sample_bound,
    sample_error,
    solve_step,
)
from .markov import (
    Distribution,
    FundamentalMatrix,
    StochasticMatrix,
    fundamental_matrix,
    limiting_matrix,
    stationary,
    stationary_shift,
)
from .topology import (
    Direction,
    FeatureKind,
    FeatureSpec,
    Normalization,
    Topology,
    WeightVector,
    combine,
    encode_rank_topology,
    rank_items,
    restrict,
)

__version__ = "0.1.0"

__all__ = [
    "BASE_COLUMNS",
    "ConstantScores",
    "ContextTooSmall",
    "DanglingItem",
    "DatasetSchema",
    "DegenerateVariance",
    "Direction",
    "Distribution",
    "ExperimentReport",
    "FeatureKind",
    "FeatureRow",
    "FeatureSpec",
    "FitResult",
    "FlipPair",
    "FundamentalMatrix",
    "GridBudgetExceeded",
    "LearnerConfig",
    "LinearModel",
    "LoadResult",
    "LogRow",
    "Model",
    "NoUniqueStationary",
    "Normalization",
    "ParseError",
    "RsmError",
    "SchemaError",
    "ShapeError",
    "SingularFundamental",
    "SplitTooSmall",
    "StochasticMatrix",
    "SyntheticDataset",
    "SyntheticSpec",
    "Topology",
    "TrainingInstance",
    "WeightVector",
    "combine",
    "constant_model",
    "constant_scorer",
    "ctr_mae",
    "derive_seed",
    "encode_rank_topology",
    "feature_rows_from_logs",
    "fit",
    "fit_least_squares",
    "fixed_weights_model",
    "flip_accuracy",
    "fundamental_matrix",
    "generate_flip_dataset",
    "generate_synthetic",
    "grid_search",
    "least_squares_model",
    "limiting_matrix",
    "linearized_row",
    "load_csv",
    "load_instances",
    "mine_flip_pairs",
    "paired_split",
    "paired_t_test",
    "predict",
    "rank_items",
    "restrict",
    "rsm_model",
    "run_experiment",
    "run_lambda_sweep",
    "sample_bound",
    "sample_error",
    "save_csv",
    "save_instances",
    "solve_step",
    "stationary",
    "stationary_shift",
    "synthetic_schema",
    "topologies_from_row",
    "true_ctr_model",
    "training_instances_from_rows",
]
