"""CART regression trees (MSE criterion) over histogram-binned features."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

__all__ = [
    "TreeConfig",
    "BinMap",
    "RegressionTree",
    "build_bins",
    "fit_regression_tree",
    "predict_tree",
    "predict_tree_batch",
]


@dataclass(frozen=True)
class TreeConfig:
    max_depth: int = 6
    min_leaf_samples: int = 1
    max_bins: int = 255
    min_gain: float = 0.0

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_leaf_samples < 1:
            raise ValueError("min_leaf_samples must be >= 1")
        if not 2 <= self.max_bins <= 256:
            raise ValueError("max_bins must be in [2, 256]")
        if self.min_gain < 0:
            raise ValueError("min_gain must be >= 0")


@dataclass(frozen=True)
class BinMap:
    """Per-feature split thresholds plus cached per-row bin indices.

    A value v falls in bin #{thresholds < v}, so the tree predicate
    "v <= thresholds[j]" is exactly "bin <= j".
    """

    thresholds: tuple[np.ndarray, ...]
    codes: np.ndarray               # N x D uint8
    max_bins: int

    @property
    def num_rows(self) -> int:
        return self.codes.shape[0]

    @property
    def num_features(self) -> int:
        return self.codes.shape[1]

    def threshold_counts(self) -> np.ndarray:
        return np.array([len(t) for t in self.thresholds], dtype=np.int64)

    def view(self, row_indices: np.ndarray) -> "BinMap":
        """Restrict the cached codes to a subset of rows (same thresholds)."""
        return BinMap(self.thresholds, self.codes[np.asarray(row_indices)], self.max_bins)


def build_bins(features: np.ndarray, max_bins: int = 255) -> BinMap:
    """Quantile-based feature binning.

    Features with at most max_bins distinct values get exact midpoint
    thresholds; denser features get thresholds at evenly spaced quantiles
    of their distinct values. Constant features end up with no thresholds
    and are never split on.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {features.shape}")
    if not 2 <= max_bins <= 256:
        raise ValueError("max_bins must be in [2, 256]")

    thresholds = []
    codes = np.empty(features.shape, dtype=np.uint8, order="C")
    for f in range(features.shape[1]):
        col = features[:, f]
        distinct = np.unique(col)
        if len(distinct) <= 1:
            th = np.empty(0, dtype=np.float64)
        elif len(distinct) <= max_bins:
            th = (distinct[:-1] + distinct[1:]) / 2.0
        else:
            cuts = [math.ceil(b * len(distinct) / max_bins) for b in range(1, max_bins)]
            th = np.array([(distinct[c - 1] + distinct[c]) / 2.0 for c in cuts])
        thresholds.append(th)
        codes[:, f] = np.searchsorted(th, col, side="left")
    return BinMap(tuple(thresholds), codes, max_bins)


@dataclass
class RegressionTree:
    """Array-encoded binary tree; feature[i] < 0 marks node i as a leaf."""

    feature: np.ndarray             # int32, -1 for leaves
    threshold: np.ndarray           # float64, NaN for leaves
    left: np.ndarray                # int32, -1 for leaves
    right: np.ndarray               # int32, -1 for leaves
    value: np.ndarray               # float64 node target mean
    count: np.ndarray               # int64 training rows per node
    max_depth_used: int = 0
    num_features: int = field(default=0)

    @property
    def num_nodes(self) -> int:
        return len(self.feature)

    @property
    def num_leaves(self) -> int:
        return int((self.feature < 0).sum())


def fit_regression_tree(binned: BinMap, targets: np.ndarray, config: TreeConfig = TreeConfig()) -> RegressionTree:
    """Greedy top-down CART fit minimizing leaf SSE, from binned features.

    Split gains come from per-bin (count, sum, sum-of-squares) histograms;
    ties go to the lowest feature index, then the lowest threshold. Growth
    stops on depth, min_leaf_samples, or gain <= min_gain; degenerate input
    yields a single-leaf tree.
    """
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    if targets.shape != (binned.num_rows,):
        raise ValueError(
            f"targets shape {targets.shape} does not match {binned.num_rows} binned rows"
        )
    if not np.isfinite(targets).all():
        raise ValueError("targets contain non-finite values")

    max_nodes = 2 ** (config.max_depth + 1) - 1
    feature = np.empty(max_nodes, dtype=np.int32)
    cut = np.empty(max_nodes, dtype=np.int32)
    left = np.empty(max_nodes, dtype=np.int32)
    right = np.empty(max_nodes, dtype=np.int32)
    value = np.empty(max_nodes, dtype=np.float64)
    count = np.empty(max_nodes, dtype=np.int64)

    n_nodes, depth_used = _kernels.grow_tree(
        binned.codes, targets, binned.threshold_counts(),
        config.max_depth, config.min_leaf_samples, config.min_gain,
        feature, cut, left, right, value, count,
    )

    feature = feature[:n_nodes].copy()
    cut = cut[:n_nodes]
    threshold = np.full(n_nodes, np.nan)
    for nd in np.flatnonzero(feature >= 0):
        threshold[nd] = binned.thresholds[feature[nd]][cut[nd]]
    return RegressionTree(
        feature=feature,
        threshold=threshold,
        left=left[:n_nodes].copy(),
        right=right[:n_nodes].copy(),
        value=value[:n_nodes].copy(),
        count=count[:n_nodes].copy(),
        max_depth_used=int(depth_used),
        num_features=binned.num_features,
    )


def predict_tree(tree: RegressionTree, row: np.ndarray) -> float:
    """Route one feature vector to its leaf value."""
    row = np.asarray(row, dtype=np.float64)
    if tree.num_features and row.shape != (tree.num_features,):
        raise ValueError(f"expected {tree.num_features} features, got shape {row.shape}")
    nd = 0
    while tree.feature[nd] >= 0:
        if row[tree.feature[nd]] <= tree.threshold[nd]:
            nd = tree.left[nd]
        else:
            nd = tree.right[nd]
    return float(tree.value[nd])


def predict_tree_batch(tree: RegressionTree, features: np.ndarray) -> np.ndarray:
    """Vectorized predict_tree; elementwise identical to the row-wise path."""
    features = np.ascontiguousarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {features.shape}")
    if features.shape[0] == 0:
        return np.empty(0, dtype=np.float64)
    if tree.num_features and features.shape[1] != tree.num_features:
        raise ValueError(
            f"expected {tree.num_features} features, got {features.shape[1]}"
        )
    out = np.empty(features.shape[0], dtype=np.float64)
    _kernels.predict_rows(features, tree.feature, tree.threshold,
                          tree.left, tree.right, tree.value, out)
    return out
