"""Boosted multiclass training: the factorized single-tree-per-step scheme
plus the two same-engine baselines (per-class vector boosting, one-vs-rest).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .data import Dataset
from .factorize import FactorizationError, SalsConfig, factorization_quality, sals_rank_one
from .mlr import Cursor, likelihood_and_gradient, log_likelihood
from .tree import BinMap, RegressionTree, TreeConfig, build_bins, fit_regression_tree, predict_tree_batch

__all__ = [
    "ALGORITHMS",
    "BoostConfig",
    "FmcbModel",
    "BaselineModel",
    "TrainRecord",
    "TrainingError",
    "train_fmcb",
    "train_mlr_boost",
    "train_ovr",
    "train_model",
    "predict_scores",
    "predict_scores_batch",
    "predict_class",
    "predict_class_indices",
    "accuracy",
    "write_training_log",
]

ALGORITHMS = ("fmcb", "mlr", "ovr")


class TrainingError(RuntimeError):
    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


@dataclass(frozen=True)
class BoostConfig:
    step: float = 0.1               # alpha applied at every cursor update
    iterations: int = 100
    tree: TreeConfig = field(default_factory=TreeConfig)
    sals: SalsConfig = field(default_factory=SalsConfig)
    algorithm: str = "fmcb"
    seed: int = 0
    diagnostics_path: str | None = None
    warm_start_sals: bool = True
    stop_at_valid_accuracy: float | None = None
    patience: int | None = None

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class TrainRecord:
    iteration: int
    train_ll: float
    valid_acc: float | None
    elapsed_ms: float


@dataclass
class FmcbModel:
    """Ordered (tree, b-vector) components scored as H(x) = sum alpha*b_t*h_t(x)."""

    trees: list[RegressionTree]
    b_vectors: np.ndarray           # T x (K-1), unit-norm rows
    alpha: float
    num_classes: int
    label_names: tuple[str, ...]
    num_features: int
    feature_names: tuple[str, ...] | None = None
    _packed: tuple | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.b_vectors = np.asarray(self.b_vectors, dtype=np.float64).reshape(
            len(self.trees), self.num_classes - 1
        )
        if len(self.trees):
            norms = np.linalg.norm(self.b_vectors, axis=1)
            if np.abs(norms - 1.0).max() > 1e-6:
                raise ValueError("every b-vector must be unit-norm")

    @property
    def algorithm(self) -> str:
        return "fmcb"

    @property
    def num_weak_models(self) -> int:
        return len(self.trees)


@dataclass
class BaselineModel:
    """Per-iteration groups of K-1 (mlr) or K (ovr) independent trees."""

    algorithm: str
    tree_groups: list[list[RegressionTree]]
    alpha: float
    num_classes: int
    label_names: tuple[str, ...]
    num_features: int
    feature_names: tuple[str, ...] | None = None
    _packed: tuple | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.algorithm not in ("mlr", "ovr"):
            raise ValueError(f"baseline algorithm must be mlr or ovr, got {self.algorithm}")
        per_group = self.num_classes - 1 if self.algorithm == "mlr" else self.num_classes
        for g, group in enumerate(self.tree_groups):
            if len(group) != per_group:
                raise ValueError(f"iteration {g} holds {len(group)} trees, expected {per_group}")

    @property
    def num_weak_models(self) -> int:
        return sum(len(g) for g in self.tree_groups)


Model = FmcbModel | BaselineModel


def _score_columns(model: Model) -> int:
    return model.num_classes if getattr(model, "algorithm", "") == "ovr" else model.num_classes - 1


def _pack_model(model: Model):
    """Concatenate all trees into flat arrays for the batch scorer."""
    if model._packed is not None:
        return model._packed
    if isinstance(model, FmcbModel):
        trees = model.trees
        weights = model.b_vectors
    else:
        trees = [t for group in model.tree_groups for t in group]
        n_cols = _score_columns(model)
        weights = np.zeros((len(trees), n_cols))
        for i in range(len(trees)):
            weights[i, i % n_cols] = 1.0
    if trees:
        offsets = np.concatenate([[0], np.cumsum([t.num_nodes for t in trees])]).astype(np.int64)
        packed = (
            np.concatenate([t.feature for t in trees]),
            np.concatenate([t.threshold for t in trees]),
            np.concatenate([t.left for t in trees]),
            np.concatenate([t.right for t in trees]),
            np.concatenate([t.value for t in trees]),
            offsets,
            np.ascontiguousarray(weights, dtype=np.float64),
        )
    else:
        packed = (
            np.empty(0, dtype=np.int32), np.empty(0, dtype=np.float64),
            np.empty(0, dtype=np.int32), np.empty(0, dtype=np.int32),
            np.empty(0, dtype=np.float64), np.zeros(1, dtype=np.int64),
            np.zeros((0, _score_columns(model))),
        )
    model._packed = packed
    return packed


def predict_scores_batch(model: Model, features: np.ndarray) -> np.ndarray:
    """Raw class scores for every row: N x (K-1) for fmcb/mlr, N x K for ovr."""
    features = np.ascontiguousarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.num_features:
        raise ValueError(
            f"model expects {model.num_features} features, got shape {features.shape}"
        )
    f, t, l, r, v, offsets, weights = _pack_model(model)
    out = np.zeros((features.shape[0], weights.shape[1]))
    if weights.shape[0]:
        _kernels.score_ensemble(features, f, t, l, r, v, offsets, weights, model.alpha, out)
    return out


def predict_scores(model: Model, row: np.ndarray) -> np.ndarray:
    """Raw class scores for a single feature vector."""
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1:
        raise ValueError(f"expected a 1-D feature vector, got shape {row.shape}")
    return predict_scores_batch(model, row[None, :])[0]


def _class_indices_from_scores(scores: np.ndarray, num_classes: int) -> np.ndarray:
    if scores.shape[1] == num_classes - 1:
        full = np.zeros((scores.shape[0], num_classes))
        full[:, :-1] = scores
        scores = full
    # np.argmax takes the first maximum, i.e. the lowest class index on ties.
    return np.argmax(scores, axis=1)


def predict_class_indices(model: Model, features: np.ndarray) -> np.ndarray:
    return _class_indices_from_scores(predict_scores_batch(model, features), model.num_classes)


def predict_class(model: Model, row: np.ndarray) -> str:
    """Predicted original label for one feature vector (ties to lowest index)."""
    scores = predict_scores(model, row)
    idx = _class_indices_from_scores(scores[None, :], model.num_classes)[0]
    return model.label_names[idx]


def accuracy(model: Model, ds: Dataset) -> float:
    """Fraction of rows whose predicted class index equals the true label."""
    if ds.num_rows == 0:
        raise ValueError("empty dataset")
    return float(np.mean(predict_class_indices(model, ds.features) == ds.labels))


def write_training_log(path: str, records: list[TrainRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "train_ll", "valid_acc", "elapsed_ms"])
        for rec in records:
            writer.writerow([
                rec.iteration,
                format(rec.train_ll, ".17g"),
                "" if rec.valid_acc is None else format(rec.valid_acc, ".17g"),
                format(rec.elapsed_ms, ".3f"),
            ])


def _write_diagnostics(path: str, rows: list[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "residual_ratio", "energy_fraction", "sigma_ratio", "grad_fro_norm"])
        for row in rows:
            writer.writerow([row[0]] + [format(x, ".17g") for x in row[1:]])


class _Trainer:
    """Shared bookkeeping for the three training loops."""

    def __init__(self, train: Dataset, config: BoostConfig, validation: Dataset | None):
        if config.stop_at_valid_accuracy is not None and validation is None:
            raise ValueError("stop_at_valid_accuracy requires a validation set")
        if config.patience is not None and validation is None:
            raise ValueError("patience requires a validation set")
        self.train = train
        self.config = config
        self.validation = validation
        self.binmap: BinMap = build_bins(train.features, config.tree.max_bins)
        self.records: list[TrainRecord] = []
        self.best_valid = -1.0
        self.since_best = 0

    def finish_record(self, ll: float) -> None:
        # ll was evaluated at the cursor produced by the previous iteration.
        if self.records:
            self.records[-1].train_ll = ll

    def append_record(self, iteration: int, valid_acc: float | None, started: float) -> None:
        self.records.append(TrainRecord(
            iteration=iteration,
            train_ll=float("nan"),
            valid_acc=valid_acc,
            elapsed_ms=(time.perf_counter() - started) * 1e3,
        ))

    def should_stop(self, valid_acc: float | None) -> bool:
        cfg = self.config
        if valid_acc is None:
            return False
        if cfg.stop_at_valid_accuracy is not None and valid_acc >= cfg.stop_at_valid_accuracy:
            return True
        if cfg.patience is not None:
            if valid_acc > self.best_valid:
                self.best_valid = valid_acc
                self.since_best = 0
            else:
                self.since_best += 1
                if self.since_best >= cfg.patience:
                    return True
        return False


def _cursor_or_abort(values: np.ndarray, num_classes: int, iteration: int) -> Cursor:
    try:
        return Cursor(values, num_classes)
    except ValueError as exc:
        raise TrainingError(f"iteration {iteration}: {exc}", iteration) from exc


def train_fmcb(
    train: Dataset,
    config: BoostConfig,
    validation: Dataset | None = None,
) -> tuple[FmcbModel, list[TrainRecord]]:
    """Boost one shared tree per step, weighted per class by a rank-one factor.

    Per iteration: factorize the gradient matrix at the current cursor into
    (r, b), fit one regression tree to r, and advance the cursor by
    alpha * h(X) outer b. Stops early if the gradient vanishes (training
    converged) or an optional validation rule fires.
    """
    if config.algorithm != "fmcb":
        raise ValueError(f"config.algorithm is {config.algorithm!r}, expected 'fmcb'")
    tr = _Trainer(train, config, validation)
    k = train.num_classes
    labels = train.labels
    cursor = np.zeros((train.num_rows, k - 1))
    valid_scores = np.zeros((validation.num_rows, k - 1)) if validation is not None else None

    sals_seeds = np.random.SeedSequence(config.seed).generate_state(config.iterations)
    trees: list[RegressionTree] = []
    b_rows: list[np.ndarray] = []
    diag_rows: list[tuple] = []
    v_warm: np.ndarray | None = None

    for t in range(1, config.iterations + 1):
        started = time.perf_counter()
        ll, grad = likelihood_and_gradient(labels, _cursor_or_abort(cursor, k, t))
        tr.finish_record(ll)
        if grad.frobenius_norm == 0.0:
            break
        sals_cfg = replace(config.sals, seed=int(sals_seeds[t - 1]))
        try:
            factors = sals_rank_one(grad.values, sals_cfg,
                                    v0=v_warm if config.warm_start_sals else None)
        except FactorizationError:
            # Gradient numerically vanished: nothing left to fit.
            break
        tree = fit_regression_tree(tr.binmap, factors.r, config.tree)
        h = predict_tree_batch(tree, train.features)
        cursor += config.step * (h[:, None] * factors.b[None, :])
        trees.append(tree)
        b_rows.append(factors.b)
        v_warm = factors.b

        valid_acc = None
        if validation is not None:
            hv = predict_tree_batch(tree, validation.features)
            valid_scores += config.step * (hv[:, None] * factors.b[None, :])
            valid_acc = float(np.mean(
                _class_indices_from_scores(valid_scores, k) == validation.labels
            ))
        if config.diagnostics_path is not None:
            q = factorization_quality(grad.values, factors)
            diag_rows.append((t, q.residual_ratio, q.energy_fraction, q.sigma_ratio,
                              grad.frobenius_norm))
        tr.append_record(t, valid_acc, started)
        if tr.should_stop(valid_acc):
            break

    tr.finish_record(log_likelihood(labels, Cursor(cursor, k)))
    if config.diagnostics_path is not None:
        _write_diagnostics(config.diagnostics_path, diag_rows)
    model = FmcbModel(
        trees=trees,
        b_vectors=np.array(b_rows).reshape(len(trees), k - 1),
        alpha=config.step,
        num_classes=k,
        label_names=train.label_names,
        num_features=train.num_features,
        feature_names=train.feature_names,
    )
    return model, tr.records


def train_mlr_boost(
    train: Dataset,
    config: BoostConfig,
    validation: Dataset | None = None,
) -> tuple[BaselineModel, list[TrainRecord]]:
    """Vector boosting baseline: one tree per gradient column per iteration."""
    if config.algorithm != "mlr":
        config = replace(config, algorithm="mlr")
    tr = _Trainer(train, config, validation)
    k = train.num_classes
    labels = train.labels
    cursor = np.zeros((train.num_rows, k - 1))
    valid_scores = np.zeros((validation.num_rows, k - 1)) if validation is not None else None
    groups: list[list[RegressionTree]] = []

    for t in range(1, config.iterations + 1):
        started = time.perf_counter()
        ll, grad = likelihood_and_gradient(labels, _cursor_or_abort(cursor, k, t))
        tr.finish_record(ll)
        if grad.frobenius_norm == 0.0:
            break
        group = []
        for c in range(k - 1):
            tree = fit_regression_tree(tr.binmap, grad.values[:, c], config.tree)
            h = predict_tree_batch(tree, train.features)
            cursor[:, c] += config.step * h
            group.append(tree)
            if validation is not None:
                hv = predict_tree_batch(tree, validation.features)
                valid_scores[:, c] += config.step * hv
        groups.append(group)

        valid_acc = None
        if validation is not None:
            valid_acc = float(np.mean(
                _class_indices_from_scores(valid_scores, k) == validation.labels
            ))
        tr.append_record(t, valid_acc, started)
        if tr.should_stop(valid_acc):
            break

    tr.finish_record(log_likelihood(labels, Cursor(cursor, k)))
    model = BaselineModel(
        algorithm="mlr",
        tree_groups=groups,
        alpha=config.step,
        num_classes=k,
        label_names=train.label_names,
        num_features=train.num_features,
        feature_names=train.feature_names,
    )
    return model, tr.records


def train_ovr(
    train: Dataset,
    config: BoostConfig,
    validation: Dataset | None = None,
) -> tuple[BaselineModel, list[TrainRecord]]:
    """One-vs-rest baseline: K independent binary logistic boosting chains.

    Chain c is a two-class problem (class c vs everything else) run through
    the same gradient/tree engine; the decision is the argmax of the K raw
    chain scores. The logged likelihood is the sum over chains.
    """
    if config.algorithm != "ovr":
        config = replace(config, algorithm="ovr")
    tr = _Trainer(train, config, validation)
    k = train.num_classes
    counts = train.class_counts()
    if (counts == 0).any():
        missing = int(np.flatnonzero(counts == 0)[0])
        raise TrainingError(f"class {missing} ({train.label_names[missing]}) absent from training data")

    # Chain label 0 means "is class c", so the chain score is the positive logit.
    chain_labels = [np.where(train.labels == c, 0, 1).astype(np.int64) for c in range(k)]
    scores = np.zeros((train.num_rows, k))
    valid_scores = np.zeros((validation.num_rows, k)) if validation is not None else None
    groups: list[list[RegressionTree]] = []

    for t in range(1, config.iterations + 1):
        started = time.perf_counter()
        ll_total = 0.0
        grads = []
        for c in range(k):
            ll_c, grad_c = likelihood_and_gradient(
                chain_labels[c], _cursor_or_abort(scores[:, c:c + 1], 2, t)
            )
            ll_total += ll_c
            grads.append(grad_c)
        tr.finish_record(ll_total)
        if all(g.frobenius_norm == 0.0 for g in grads):
            break
        group = []
        for c in range(k):
            tree = fit_regression_tree(tr.binmap, grads[c].values[:, 0], config.tree)
            h = predict_tree_batch(tree, train.features)
            scores[:, c] += config.step * h
            group.append(tree)
            if validation is not None:
                hv = predict_tree_batch(tree, validation.features)
                valid_scores[:, c] += config.step * hv
        groups.append(group)

        valid_acc = None
        if validation is not None:
            valid_acc = float(np.mean(np.argmax(valid_scores, axis=1) == validation.labels))
        tr.append_record(t, valid_acc, started)
        if tr.should_stop(valid_acc):
            break

    final_ll = sum(
        log_likelihood(chain_labels[c], Cursor(scores[:, c:c + 1], 2)) for c in range(k)
    )
    tr.finish_record(final_ll)
    model = BaselineModel(
        algorithm="ovr",
        tree_groups=groups,
        alpha=config.step,
        num_classes=k,
        label_names=train.label_names,
        num_features=train.num_features,
        feature_names=train.feature_names,
    )
    return model, tr.records


def train_model(
    train: Dataset,
    config: BoostConfig,
    validation: Dataset | None = None,
) -> tuple[Model, list[TrainRecord]]:
    """Dispatch on config.algorithm."""
    if config.algorithm == "fmcb":
        return train_fmcb(train, config, validation)
    if config.algorithm == "mlr":
        return train_mlr_boost(train, config, validation)
    if config.algorithm == "ovr":
        return train_ovr(train, config, validation)
    raise ValueError(f"unknown algorithm {config.algorithm!r}")
