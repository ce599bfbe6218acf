"""Rank-one factorization: stochastic ALS, an exact power-iteration oracle,
and the factorization-quality diagnostic emitted during boosting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels

__all__ = [
    "FactorizationError",
    "RankOneFactors",
    "SalsConfig",
    "SalsStats",
    "OracleResult",
    "QualityRecord",
    "sals_rank_one",
    "exact_rank_one_oracle",
    "factorization_quality",
]

# Epoch-to-epoch drop in the projection sum that counts as divergence.
_DIVERGENCE_SLACK = 0.01
_MAX_HALVINGS = 60
_MAX_RESTARTS = 3


class FactorizationError(RuntimeError):
    """Raised when a factorization cannot be produced."""


@dataclass(frozen=True)
class SalsConfig:
    """Stochastic ALS knobs; defaults follow the one-size training setup."""

    step_size: float = 0.01
    max_epochs: int = 50
    tolerance: float = 1e-6        # on ||v_next - v|| per epoch
    row_sample_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if not 0.0 < self.row_sample_fraction <= 1.0:
            raise ValueError("row_sample_fraction must be in (0, 1]")


@dataclass(frozen=True)
class SalsStats:
    """Run telemetry; touches count inner-loop matrix-entry reads only."""

    epochs: int
    redone_epochs: int
    rows_per_epoch: int
    touches_per_epoch: int
    entry_touches: int
    halvings: int
    restarts: int
    converged: bool
    final_step: float


@dataclass(frozen=True)
class RankOneFactors:
    """Pair (r, b) approximating A as r b^T; b is unit-norm.

    Sign convention: the largest-magnitude component of b is positive.
    """

    r: np.ndarray
    b: np.ndarray
    stats: SalsStats | None = None

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "b", b)
        nb = np.linalg.norm(b)
        if abs(nb - 1.0) > 1e-9:
            raise ValueError(f"column factor must be unit-norm, got ||b||={nb}")
        if b[np.argmax(np.abs(b))] < 0:
            raise ValueError("column factor violates the sign convention")


def _canonicalize(r: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if b[np.argmax(np.abs(b))] < 0:
        return -r, -b
    return r, b


def _random_unit(rng: np.random.Generator, n: int) -> np.ndarray:
    for _ in range(16):
        v = rng.standard_normal(n)
        norm = np.linalg.norm(v)
        if norm > 0:
            return v / norm
    raise FactorizationError("could not draw a nonzero start direction")


def sals_rank_one(
    a: np.ndarray,
    config: SalsConfig = SalsConfig(),
    v0: np.ndarray | None = None,
) -> RankOneFactors:
    """Best-effort rank-one factorization of an m x n matrix via row-sampled SGD.

    Each epoch shuffles the rows (without replacement; same expectation as
    i.i.d. uniform draws but lower variance and seed-deterministic), visits
    a ``row_sample_fraction`` share of them, and projects v back to the
    unit sphere after every update.

    Step control: a constant step cannot shrink the SGD jitter below the
    exit tolerance on its own, so the step is halved (a) with an epoch
    restart whenever the epoch's projection sum drops, i.e. the pass made
    alignment worse, and (b) in place whenever the projection sum stops
    growing, meaning either the direction has converged or the top
    directions are degenerate and further wandering cannot help. The SGD
    runs on A scaled by 1/max|A| so the step size is independent of the
    matrix magnitude; the row factor r = A v is computed on the original
    matrix in one final full pass.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise FactorizationError("matrix contains non-finite entries")
    scale = float(np.abs(a).max())
    if scale == 0.0:
        raise FactorizationError("zero matrix has no factorization direction")

    m, n = a.shape
    a_scaled = a / scale
    rows_per_epoch = max(1, round(config.row_sample_fraction * m))
    rng = np.random.default_rng(config.seed)

    v = None
    if v0 is not None:
        v0 = np.asarray(v0, dtype=np.float64)
        norm = np.linalg.norm(v0)
        if v0.shape == (n,) and norm > 0 and np.isfinite(norm):
            v = v0 / norm

    epochs = 0
    redone = 0
    halvings = 0
    converged = False
    step = config.step_size
    for restart in range(_MAX_RESTARTS + 1):
        if v is None:
            v = _random_unit(rng, n)
            step = config.step_size
        failed = False
        best_u2 = -math.inf
        plateau_streak = 0
        # Subsampled epochs see different rows, so the projection sum is
        # noisy; widen the divergence slack accordingly (but keep it below
        # one so the threshold sign never flips).
        slack = min(0.9, max(_DIVERGENCE_SLACK, 4.0 / math.sqrt(rows_per_epoch)))
        for _ in range(config.max_epochs):
            order = rng.permutation(m)[:rows_per_epoch].astype(np.int64)
            v_start = v.copy()
            status, u2 = _kernels.sals_epoch(a_scaled, order, v, step)
            if status != 0:
                failed = True
                break
            if (math.isfinite(best_u2) and u2 < best_u2 * (1.0 - slack)
                    and halvings < _MAX_HALVINGS):
                step *= 0.5
                halvings += 1
                redone += 1
                v[:] = v_start
                continue
            epochs += 1
            delta = float(np.linalg.norm(v - v_start))
            if delta <= config.tolerance:
                converged = True
                break
            if u2 <= best_u2 and halvings < _MAX_HALVINGS:
                # No new alignment record: either converged at this step
                # size or wandering a degenerate subspace. Jitter scales
                # with the step, so after a confirmed plateau one
                # proportional cut lands the next drift near tolerance.
                plateau_streak += 1
                if plateau_streak >= 2:
                    step *= max(0.5 * config.tolerance / delta, 0.5 ** 12)
                else:
                    step *= 0.5
                halvings += 1
            else:
                plateau_streak = 0
            best_u2 = max(best_u2, u2)
        if not failed:
            break
        v = None
    else:
        raise FactorizationError(
            f"projection collapsed to zero norm after {_MAX_RESTARTS} restarts"
        )

    r = a @ v
    r, v = _canonicalize(r, v)
    touches = rows_per_epoch * n
    stats = SalsStats(
        epochs=epochs,
        redone_epochs=redone,
        rows_per_epoch=rows_per_epoch,
        touches_per_epoch=touches,
        entry_touches=(epochs + redone) * touches,
        halvings=halvings,
        restarts=restart,
        converged=converged,
        final_step=step,
    )
    return RankOneFactors(r=r, b=v, stats=stats)


@dataclass(frozen=True)
class OracleResult:
    r: np.ndarray
    b: np.ndarray
    sigma1: float
    sigma2: float


def _power_top_direction(a: np.ndarray, tolerance: float, max_iters: int) -> tuple[float, np.ndarray]:
    """Top singular value/right-vector by power iteration on the Gram matrix.

    Convergence is measured on the eigen-residual ||G x - lambda x|| rather
    than the movement of x, so clustered eigenvalues (where the direction
    inside the top eigenspace never settles) still converge to an optimal
    vector of that eigenspace.
    """
    gram = a.T @ a
    if not np.any(gram):
        return 0.0, np.eye(a.shape[1])[0]
    starts = np.random.default_rng(0x5EED)
    x = np.sqrt(np.diag(gram))
    norm = np.linalg.norm(x)
    x = x / norm if norm > 0 else _random_unit(starts, a.shape[1])
    residual = math.inf
    for attempt in range(3):
        if attempt:
            # Deterministic restart: the previous start vector was orthogonal
            # to the top eigenspace (or sat in the null space).
            x = _random_unit(starts, a.shape[1])
        for _ in range(max_iters):
            y = gram @ x
            ny = np.linalg.norm(y)
            if ny == 0.0:
                break
            # y != 0 implies lam = ||A x||^2 > 0.
            lam = float(x @ y)
            residual = float(np.linalg.norm(y - lam * x))
            if residual <= tolerance * lam:
                return float(np.linalg.norm(a @ x)), x
            x = y / ny
    raise FactorizationError(
        f"power iteration did not converge in {max_iters} iterations "
        f"(achieved eigen-residual {residual:.3e} above tolerance)"
    )


def exact_rank_one_oracle(
    a: np.ndarray,
    tolerance: float = 1e-12,
    max_iters: int = 5000,
) -> OracleResult:
    """Top singular pair by power iteration, plus sigma2 via one deflation step.

    Intended as the slow-but-sure reference for sals_rank_one and for the
    condition-number diagnostic.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise FactorizationError("matrix contains non-finite entries")

    if not np.any(a):
        b = np.eye(a.shape[1])[0]
        return OracleResult(np.zeros(a.shape[0]), b, 0.0, 0.0)

    sigma1, b = _power_top_direction(a, tolerance, max_iters)
    r = a @ b
    if sigma1 == 0.0 or a.shape[1] == 1:
        sigma2 = 0.0
    else:
        u1 = r / sigma1
        deflated = a - sigma1 * np.outer(u1, b)
        sigma2, _ = _power_top_direction(deflated, tolerance, max_iters)
    r, b = _canonicalize(r, b)
    return OracleResult(r=r, b=b, sigma1=float(sigma1), sigma2=float(sigma2))


@dataclass(frozen=True)
class QualityRecord:
    """How much of the matrix a rank-one pair explains.

    sigma_ratio is the condition number restricted to the top two singular
    values; it is reported as inf when sigma2 vanishes.
    """

    residual_ratio: float
    energy_fraction: float
    sigma_ratio: float


def factorization_quality(a: np.ndarray, factors: RankOneFactors) -> QualityRecord:
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (factors.r.shape[0], factors.b.shape[0]):
        raise ValueError(
            f"matrix shape {a.shape} does not match factors "
            f"({factors.r.shape[0]}, {factors.b.shape[0]})"
        )
    fro = np.linalg.norm(a)
    if fro == 0.0:
        raise ValueError("zero matrix has no factorization quality")
    residual_ratio = float(np.linalg.norm(a - np.outer(factors.r, factors.b)) / fro)
    energy_fraction = 1.0 - residual_ratio ** 2
    try:
        oracle = exact_rank_one_oracle(a, tolerance=1e-9, max_iters=2000)
    except FactorizationError:
        sigma_ratio = math.nan
    else:
        if oracle.sigma2 <= 1e-12 * oracle.sigma1:
            sigma_ratio = math.inf
        else:
            sigma_ratio = oracle.sigma1 / oracle.sigma2
    return QualityRecord(residual_ratio, energy_fraction, float(sigma_ratio))
