"""Multiclass gradient boosting with rank-one gradient-matrix factorization.

Each boosting step factorizes the multinomial-logistic gradient matrix into
a row factor r and a unit class-weight vector b, fits one regression tree
to r, and scores every class through that shared tree. Includes per-class
vector boosting and one-vs-rest baselines on the same tree engine.
"""

from .boost import (
    ALGORITHMS,
    BaselineModel,
    BoostConfig,
    FmcbModel,
    TrainingError,
    TrainRecord,
    accuracy,
    predict_class,
    predict_class_indices,
    predict_scores,
    predict_scores_batch,
    train_fmcb,
    train_mlr_boost,
    train_model,
    train_ovr,
)
from .data import (
    DataFormatError,
    Dataset,
    ParseReport,
    SplitSpec,
    imbalance_subsample,
    monte_carlo_split,
    parse_csv_dataset,
    parse_libsvm_dataset,
    write_csv_dataset,
)
from .factorize import (
    FactorizationError,
    OracleResult,
    QualityRecord,
    RankOneFactors,
    SalsConfig,
    exact_rank_one_oracle,
    factorization_quality,
    sals_rank_one,
)
from .mlr import (
    Cursor,
    GradientMatrix,
    class_probabilities,
    gradient_matrix,
    log_likelihood,
)
from .model_io import (
    ModelFormatError,
    deserialize_model,
    load_model,
    save_model,
    serialize_model,
)
from .tree import (
    BinMap,
    RegressionTree,
    TreeConfig,
    build_bins,
    fit_regression_tree,
    predict_tree,
    predict_tree_batch,
)

__version__ = "0.1.0"
