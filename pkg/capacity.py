"""
Capacity estimation: how well the best linear readout of the outputs X
reconstructs a target y, summed over the target basis.

All moments are time averages <.>_T = (1/T) sum_t. With M = <X X^T>_T and
a_y = <X y>_T, the capacity is C_T[y] = a_y^T M^+ a_y / <y^2>_T.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic_settings import BaseSettings, SettingsConfigDict

from basis import BasisIndex, BasisSet, evaluate_targets, iter_target_blocks, representative_indices
from exceptions import ConfigError, DegenerateTargetError, DimensionError
from linalg import pinv
from streams import BOOTSTRAP_STREAM, SHUFFLE_STREAM, make_rng

logger = logging.getLogger(__name__)


class CapacitySettings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_prefix="IPC_LAB_", extra="ignore")

    REL_TOL: float = 1e-12
    NULL_SIGMAS: float = 4.0  # threshold = mean + NULL_SIGMAS * std of null capacities
    MIN_SHUFFLES: int = 20
    REPRESENTATIVES: int = 8
    TIME_BLOCKS: int = 50
    BOOTSTRAP_RESAMPLES: int = 200
    CLAMP_SLACK: float = 1e-9


def _as_outputs(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise DimensionError(f"X must be n x T, got shape {X.shape}")
    return X


def _as_targets(Y: np.ndarray) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    return Y[None, :] if Y.ndim == 1 else Y


def _check_aligned(X: np.ndarray, Y: np.ndarray) -> None:
    if X.shape[1] != Y.shape[1]:
        raise DimensionError(f"X has {X.shape[1]} samples but targets have {Y.shape[1]}")


def gram_pinv(X: np.ndarray, rel_tol: Optional[float] = None) -> np.ndarray:
    """(<X X^T>_T)^+, factored once and shared by every target"""
    X = _as_outputs(X)
    rel_tol = CapacitySettings().REL_TOL if rel_tol is None else rel_tol
    if X.shape[1] < X.shape[0]:
        logger.warning(f"Fewer samples than outputs (T={X.shape[1]} < n={X.shape[0]}); capacities are unreliable")
    return pinv(X @ X.T / X.shape[1], rel_tol)


def capacities(X: np.ndarray, Y: np.ndarray, M_pinv: Optional[np.ndarray] = None) -> np.ndarray:
    """Raw capacities of every row of Y"""
    X = _as_outputs(X)
    Y = _as_targets(Y)
    _check_aligned(X, Y)
    power = np.mean(Y ** 2, axis=1)
    if np.any(power == 0):
        raise DegenerateTargetError(f"degenerate target: <y^2>_T = 0 for row(s) {np.flatnonzero(power == 0).tolist()}")
    M_pinv = gram_pinv(X) if M_pinv is None else M_pinv
    A = X @ Y.T / X.shape[1]
    return np.sum(A * (M_pinv @ A), axis=0) / power


def capacity(X: np.ndarray, y: np.ndarray) -> float:
    """C_T[y] = 1 - min_w <(w^T X - y)^2>_T / <y^2>_T"""
    return float(capacities(X, _as_targets(y))[0])


def optimal_weights(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """W* = <X X^T>^+ <X Y^T>, n x D"""
    X = _as_outputs(X)
    Y = _as_targets(Y)
    _check_aligned(X, Y)
    return gram_pinv(X) @ (X @ Y.T / X.shape[1])


def reconstruction_error(X: np.ndarray, Y: np.ndarray, W: np.ndarray) -> float:
    """J = (1/T) sum_t ||Y(:, t) - W^T X(:, t)||^2"""
    X = _as_outputs(X)
    Y = _as_targets(Y)
    _check_aligned(X, Y)
    n, D = X.shape[0], Y.shape[0]
    W = np.asarray(W, dtype=float)
    if W.ndim < 2 and W.size == n * D and min(n, D) == 1:
        W = W.reshape(n, D)
    if W.shape != (n, D):
        raise DimensionError(f"W must be n x D = {n} x {D}, got shape {W.shape}")
    residual = Y - W.T @ X
    return float(np.sum(residual ** 2) / X.shape[1])


def significance_threshold(
    X: np.ndarray,
    targets: np.ndarray,
    n_shuffles: int,
    seed: int = 0,
    settings: Optional[CapacitySettings] = None,
) -> float:
    """
    Chance level of capacity at this T.

    Each representative target is permuted in time n_shuffles times, which
    destroys its alignment with the inputs; the threshold is
    mean + NULL_SIGMAS * std of the resulting null capacities.
    """
    settings = settings or CapacitySettings()
    if n_shuffles < settings.MIN_SHUFFLES:
        raise ConfigError(f"n_shuffles must be >= {settings.MIN_SHUFFLES}, got {n_shuffles}")
    X = _as_outputs(X)
    targets = _as_targets(targets)
    _check_aligned(X, targets)

    rng = make_rng(seed, SHUFFLE_STREAM)
    M_pinv = gram_pinv(X)
    null = []
    for y in targets:
        shuffled = np.stack([y[rng.permutation(len(y))] for _ in range(n_shuffles)])
        null.append(capacities(X, shuffled, M_pinv))
    null = np.concatenate(null)
    threshold = float(null.mean() + settings.NULL_SIGMAS * null.std(ddof=1))
    logger.info(f"Significance threshold {threshold:.3e} from {len(null)} null capacities")
    return threshold


def null_threshold(
    X: np.ndarray,
    basis: BasisSet,
    inputs: np.ndarray,
    n_shuffles: int,
    seed: int = 0,
    count: Optional[int] = None,
) -> float:
    """significance_threshold on evenly spaced representatives of the basis"""
    settings = CapacitySettings()
    X = _as_outputs(X)
    count = settings.REPRESENTATIVES if count is None else count
    sample = basis.subset(representative_indices(basis, count))
    targets = evaluate_targets(sample, inputs)
    return significance_threshold(X[:, basis.max_delay:], targets, n_shuffles, seed, settings)


def threshold_capacities(raw: np.ndarray, threshold: float) -> np.ndarray:
    clipped = np.clip(raw, 0.0, 1.0)
    return np.where(clipped < threshold, 0.0, clipped)


@dataclass
class RegressionMoments:
    """
    Per-time-block sufficient statistics of the readout regression.

    Summing blocks with unit weights gives the pooled moments; multinomial
    block weights give one moving-block bootstrap resample.
    """
    gram: np.ndarray  # K x n x n, sums of X X^T
    cross: np.ndarray  # K x n x D, sums of X Y^T
    power: np.ndarray  # K x D, sums of y^2
    counts: np.ndarray  # K samples per block

    @property
    def blocks(self) -> int:
        return len(self.counts)

    @property
    def samples(self) -> int:
        return int(self.counts.sum())

    def pooled(self, weights: Optional[np.ndarray] = None):
        """(M, A, p) time averages under block weights"""
        weights = np.ones(self.blocks) if weights is None else np.asarray(weights, dtype=float)
        total = float(weights @ self.counts)
        M = np.einsum("k,kij->ij", weights, self.gram) / total
        A = np.einsum("k,kij->ij", weights, self.cross) / total
        p = weights @ self.power / total
        return 0.5 * (M + M.T), A, p

    @classmethod
    def concatenate(cls, parts: List["RegressionMoments"]) -> "RegressionMoments":
        """Blocks from several input sequences pooled into one set"""
        return cls(
            gram=np.concatenate([p.gram for p in parts]),
            cross=np.concatenate([p.cross for p in parts]),
            power=np.concatenate([p.power for p in parts]),
            counts=np.concatenate([p.counts for p in parts]),
        )

    def capacities(self, weights: Optional[np.ndarray] = None, rel_tol: Optional[float] = None) -> np.ndarray:
        rel_tol = CapacitySettings().REL_TOL if rel_tol is None else rel_tol
        M, A, p = self.pooled(weights)
        if np.any(p == 0):
            raise DegenerateTargetError("degenerate target: <y^2>_T = 0")
        return np.sum(A * (pinv(M, rel_tol) @ A), axis=0) / p


def regression_moments(
    X: np.ndarray,
    basis: BasisSet,
    inputs: np.ndarray,
    time_blocks: Optional[int] = None,
    block_size: Optional[int] = None,
) -> RegressionMoments:
    """One pass over the targets; X and inputs share the time axis"""
    X = _as_outputs(X)
    inputs = np.atleast_2d(inputs)
    if X.shape[1] != inputs.shape[1]:
        raise DimensionError(f"X has {X.shape[1]} samples but inputs have {inputs.shape[1]}")
    window = X[:, basis.max_delay:]
    n, T = window.shape
    K = max(1, min(CapacitySettings().TIME_BLOCKS if time_blocks is None else time_blocks, T))
    edges = np.linspace(0, T, K + 1).round().astype(int)
    spans = [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]

    gram = np.stack([window[:, s] @ window[:, s].T for s in spans])
    cross = np.empty((K, n, basis.D))
    power = np.empty((K, basis.D))
    for rows, Y in iter_target_blocks(basis, inputs, block_size):
        for k, s in enumerate(spans):
            cross[k, :, rows] = window[:, s] @ Y[:, s].T
            power[k, rows] = np.sum(Y[:, s] ** 2, axis=1)
    counts = np.array([s.stop - s.start for s in spans], dtype=float)
    return RegressionMoments(gram, cross, power, counts)


def optimal_error(moments: RegressionMoments) -> float:
    """J(W*) = sum_l <y_l^2>_T - sum_l a_l^T M^+ a_l"""
    M, A, p = moments.pooled()
    return float(p.sum() - np.sum(A * (pinv(M, CapacitySettings().REL_TOL) @ A)))


@dataclass
class TargetCapacity:
    index: BasisIndex
    raw: float
    thresholded: float

    def to_dict(self) -> Dict:
        return {
            "index": str(self.index),
            "total_degree": self.index.total_degree,
            "max_delay": self.index.max_delay,
            "raw": self.raw,
            "thresholded": self.thresholded,
        }


@dataclass
class CapacityReport:
    """Per-target capacities and the thresholded IPC total"""
    per_target: List[TargetCapacity]
    ipc_total: float
    threshold: float
    metadata: Dict = field(default_factory=dict)

    @property
    def raw(self) -> np.ndarray:
        return np.array([c.raw for c in self.per_target])

    @property
    def thresholded(self) -> np.ndarray:
        return np.array([c.thresholded for c in self.per_target])

    def to_frame(self) -> pd.DataFrame:
        columns = ["index", "total_degree", "max_delay", "raw", "thresholded"]
        return pd.DataFrame([c.to_dict() for c in self.per_target], columns=columns)

    def to_dict(self) -> Dict:
        return {
            "ipc_total": self.ipc_total,
            "threshold": self.threshold,
            "D": len(self.per_target),
            "memory_profile": {str(k): v for k, v in memory_profile(self).items()},
            "metadata": self.metadata,
        }


def build_report(
    basis: BasisSet,
    raw: np.ndarray,
    threshold: float,
    metadata: Optional[Dict] = None,
) -> CapacityReport:
    slack = CapacitySettings().CLAMP_SLACK
    out_of_range = (raw < -slack) | (raw > 1 + slack)
    if np.any(out_of_range):
        logger.warning(f"{int(out_of_range.sum())} raw capacities outside [0, 1] beyond numerical slack")
    kept = threshold_capacities(raw, threshold)
    per_target = [TargetCapacity(index, float(r), float(c)) for index, r, c in zip(basis, raw, kept)]
    return CapacityReport(per_target, float(kept.sum()), float(threshold), dict(metadata or {}))


def ipc_estimate(
    X: np.ndarray,
    basis: BasisSet,
    inputs: np.ndarray,
    threshold: float,
    moments: Optional[RegressionMoments] = None,
    metadata: Optional[Dict] = None,
) -> CapacityReport:
    """Truncated IPC: sum of capacities above the significance threshold"""
    moments = regression_moments(X, basis, inputs) if moments is None else moments
    raw = moments.capacities()
    report = build_report(basis, raw, threshold, metadata)
    report.metadata.setdefault("T", moments.samples)
    report.metadata.setdefault("D", basis.D)
    report.metadata.setdefault("n", int(np.atleast_2d(X).shape[0]))
    logger.info(f"IPC estimate {report.ipc_total:.4f} over D={basis.D} targets (threshold {threshold:.3e})")
    return report


def bootstrap_stderr(
    moments: RegressionMoments,
    threshold: float,
    resamples: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Moving-block bootstrap standard error of the thresholded IPC total"""
    resamples = CapacitySettings().BOOTSTRAP_RESAMPLES if resamples is None else resamples
    if moments.blocks < 2 or resamples < 2:
        return 0.0
    rng = make_rng(seed, BOOTSTRAP_STREAM)
    totals = np.empty(resamples)
    for b in range(resamples):
        weights = rng.multinomial(moments.blocks, np.full(moments.blocks, 1.0 / moments.blocks))
        totals[b] = threshold_capacities(moments.capacities(weights), threshold).sum()
    return float(totals.std(ddof=1))


def memory_profile(report: CapacityReport) -> Dict[int, float]:
    """Thresholded capacity grouped by total degree (1 = linear memory)"""
    profile: Dict[int, float] = {}
    for c in report.per_target:
        profile[c.index.total_degree] = profile.get(c.index.total_degree, 0.0) + c.thresholded
    return dict(sorted(profile.items()))
