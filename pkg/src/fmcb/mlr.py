"""Multinomial-logistic-regression probability, likelihood, and gradient.

Class K-1 (the last index) is the reference class with an implicit score
of zero, so an N x (K-1) score matrix fully determines all K class
probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SCORE_CLIP",
    "Cursor",
    "GradientMatrix",
    "class_probabilities",
    "probability_matrix",
    "log_likelihood",
    "gradient_matrix",
    "likelihood_and_gradient",
]

# Scores are clipped at this magnitude after max-subtraction; exp(-30) is
# ~9e-14, far below any probability the model can act on, while long
# boosting runs can drift scores past the exp overflow range.
SCORE_CLIP = 30.0


@dataclass(frozen=True)
class Cursor:
    """Current ensemble scores on a fixed set of rows: N x (K-1)."""

    values: np.ndarray
    num_classes: int

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 2:
            raise ValueError(f"cursor must be 2-D, got shape {vals.shape}")
        if self.num_classes < 2 or vals.shape[1] != self.num_classes - 1:
            raise ValueError(
                f"cursor has {vals.shape[1]} columns but K={self.num_classes} needs K-1"
            )
        if not np.isfinite(vals).all():
            raise ValueError("cursor contains non-finite scores")

    @classmethod
    def zeros(cls, num_rows: int, num_classes: int) -> "Cursor":
        return cls(np.zeros((num_rows, num_classes - 1)), num_classes)


@dataclass(frozen=True)
class GradientMatrix:
    """Partial derivatives of the log-likelihood wrt each score entry."""

    values: np.ndarray              # N x (K-1)
    frobenius_norm: float

    def __post_init__(self):
        if not np.isfinite(self.values).all():
            raise ValueError("gradient contains non-finite entries")


def _scores_with_reference(cursor_values: np.ndarray) -> np.ndarray:
    n = cursor_values.shape[0]
    z = np.empty((n, cursor_values.shape[1] + 1), dtype=np.float64)
    z[:, :-1] = cursor_values
    z[:, -1] = 0.0
    return z


def _row_softmax(z: np.ndarray) -> np.ndarray:
    """Stable softmax over rows, in place; callers pass a fresh matrix that
    already carries the reference zero-score column."""
    z -= z.max(axis=1, keepdims=True)
    np.clip(z, -SCORE_CLIP, SCORE_CLIP, out=z)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def class_probabilities(cursor_row: np.ndarray) -> np.ndarray:
    """Probabilities of all K classes given one row's K-1 scores."""
    row = np.asarray(cursor_row, dtype=np.float64)
    if row.ndim != 1:
        raise ValueError(f"expected a 1-D score vector, got shape {row.shape}")
    if np.isnan(row).any():
        raise ValueError("NaN score")
    return _row_softmax(_scores_with_reference(row[None, :]))[0]


def probability_matrix(cursor: Cursor) -> np.ndarray:
    """N x K matrix of class probabilities at the cursor."""
    return _row_softmax(_scores_with_reference(cursor.values))


def _check_labels(labels: np.ndarray, cursor: Cursor) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (cursor.values.shape[0],):
        raise ValueError(
            f"labels shape {labels.shape} does not match cursor rows {cursor.values.shape[0]}"
        )
    if labels.min() < 0 or labels.max() >= cursor.num_classes:
        raise ValueError("label outside [0, K)")
    return labels


def log_likelihood(labels: np.ndarray, cursor: Cursor) -> float:
    """Sum over rows of log P(y_i); always <= 0."""
    labels = _check_labels(labels, cursor)
    probs = probability_matrix(cursor)
    return float(np.log(probs[np.arange(len(labels)), labels]).sum())


def gradient_matrix(labels: np.ndarray, cursor: Cursor) -> GradientMatrix:
    """Entry (i, c) is 1{y_i = c} - P(c | x_i): indicator minus probability."""
    return likelihood_and_gradient(labels, cursor)[1]


def likelihood_and_gradient(labels: np.ndarray, cursor: Cursor) -> tuple[float, GradientMatrix]:
    """Log-likelihood and gradient from a single probability evaluation.

    The gradient pass is the per-iteration floor cost of boosting, so the
    training loop computes both in one sweep over the rows.
    """
    labels = _check_labels(labels, cursor)
    probs = probability_matrix(cursor)
    ll = float(np.log(probs[np.arange(len(labels)), labels]).sum())
    grad = -probs[:, :-1]
    hot = labels < cursor.num_classes - 1
    grad[np.flatnonzero(hot), labels[hot]] += 1.0
    return ll, GradientMatrix(grad, float(np.linalg.norm(grad)))
