"""
Signal/noise moment decomposition and the noisy-IPC bound.

For an ensemble of R noisy realizations X_r driven by one input sequence,
the output second moment splits into the signal part Q_eta (second moment
of the noise-averaged output <X>) and the noise part Q_xi (covariance of
the fluctuations X_r - <X>). In the basis that whitens Q_eta the noise
covariance becomes Q~_xi, and the IPC of any linear readout is bounded by
sum_k 1 / (1 + s_k) over its eigenvalues s_k.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from pydantic_settings import BaseSettings, SettingsConfigDict

from basis import BasisSet, iter_target_blocks
from capacity import (
    CapacityReport,
    RegressionMoments,
    bootstrap_stderr,
    ipc_estimate,
    null_threshold,
    optimal_error,
    regression_moments,
)
from exceptions import ConfigError, DimensionError
from linalg import DEFAULT_REL_TOL, SpectralDecomposition, pinv_sqrt, sym_eig
from reservoir import NoiseLocation, OutputEnsemble, ReservoirSpec, ensemble_run
from streams import INPUT_STREAM, derive_seed

logger = logging.getLogger(__name__)

ROW_COLUMNS = [
    "sweep_value", "n", "T", "R", "D",
    "ipc_measured", "ipc_bound", "bound_fullrank", "margin", "pass", "seed",
]


class NoiseAnalysisSettings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_prefix="IPC_LAB_", extra="ignore")

    TOL_FLOOR: float = 0.05
    TOL_STDERRS: float = 3.0
    MIN_REALIZATIONS_WARN: int = 30
    BOUND_PATH_TOL: float = 1e-10


def _square(name: str, matrix: np.ndarray) -> np.ndarray:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {matrix.shape}")
    return 0.5 * (matrix + matrix.T)


@dataclass
class MomentDecomposition:
    """Q_eta (signal), Q_xi (noise) and the spectral decomposition of Q_eta"""
    q_eta: np.ndarray
    q_xi: np.ndarray
    signal: SpectralDecomposition
    observed_second_moment: Optional[np.ndarray] = None
    realizations: int = 0
    samples: int = 0

    @property
    def state_dim(self) -> int:
        return self.q_eta.shape[0]

    @property
    def second_moment(self) -> np.ndarray:
        return self.q_eta + self.q_xi

    @property
    def signal_rank(self) -> int:
        return self.signal.rank

    def decomposition_residual(self) -> float:
        """||Q_eta + Q_xi - <X X^T>||_F, or 0 when no direct estimate was kept"""
        if self.observed_second_moment is None:
            return 0.0
        return float(np.linalg.norm(self.second_moment - self.observed_second_moment))

    @classmethod
    def from_matrices(
        cls,
        q_eta: np.ndarray,
        q_xi: np.ndarray,
        rel_tol: float = DEFAULT_REL_TOL,
        observed_second_moment: Optional[np.ndarray] = None,
        realizations: int = 0,
        samples: int = 0,
    ) -> "MomentDecomposition":
        q_eta = _square("q_eta", q_eta)
        q_xi = _square("q_xi", q_xi)
        if q_eta.shape != q_xi.shape:
            raise DimensionError(f"q_eta {q_eta.shape} and q_xi {q_xi.shape} differ in shape")
        sym_eig(q_xi, rel_tol)  # PSD check only
        return cls(q_eta, q_xi, sym_eig(q_eta, rel_tol), observed_second_moment, realizations, samples)

    def to_dict(self) -> Dict:
        return {
            "q_eta": self.q_eta.tolist(),
            "q_xi": self.q_xi.tolist(),
            "signal_rank": self.signal_rank,
            "signal_eigenvalues": self.signal.eigenvalues.tolist(),
            "decomposition_residual": self.decomposition_residual(),
            "realizations": self.realizations,
            "samples": self.samples,
        }


def estimate_moments(
    ensemble: OutputEnsemble,
    rel_tol: float = DEFAULT_REL_TOL,
    settings: Optional[NoiseAnalysisSettings] = None,
) -> MomentDecomposition:
    """Pooled time/noise averages of the ensemble, reduced one realization at a time"""
    settings = settings or NoiseAnalysisSettings()
    R, T = ensemble.R, ensemble.T
    if ensemble.noisy and R == 1:
        raise ConfigError("cannot separate signal from noise with a single realization (R = 1); use R >= 2")
    if ensemble.noisy and R < settings.MIN_REALIZATIONS_WARN:
        logger.warning(f"Only {R} realizations; Q_xi is a coarse estimate (recommend R >= {settings.MIN_REALIZATIONS_WARN})")

    n = ensemble.state_dim
    q_eta = ensemble.mean @ ensemble.mean.T / T
    q_xi = np.zeros((n, n))
    observed = np.zeros((n, n))
    for r in range(R):
        residual = ensemble.residual(r)
        q_xi += residual @ residual.T
        observed += ensemble.realizations[r] @ ensemble.realizations[r].T
    q_xi /= R * T
    observed /= R * T

    dec = MomentDecomposition.from_matrices(q_eta, q_xi, rel_tol, 0.5 * (observed + observed.T), R, T)
    logger.info(
        f"Moments: signal rank {dec.signal_rank}/{n}, Tr Q_eta={np.trace(dec.q_eta):.4f}, "
        f"Tr Q_xi={np.trace(dec.q_xi):.4f} (R={R}, T={T})"
    )
    return dec


def pool_moments(parts: List[MomentDecomposition], rel_tol: float = DEFAULT_REL_TOL) -> MomentDecomposition:
    """Sample-weighted average of decompositions from independent input sequences"""
    if not parts:
        raise ConfigError("nothing to pool")
    if len(parts) == 1:
        return parts[0]
    weights = np.array([max(p.samples, 1) for p in parts], dtype=float)
    weights /= weights.sum()
    q_eta = sum(w * p.q_eta for w, p in zip(weights, parts))
    q_xi = sum(w * p.q_xi for w, p in zip(weights, parts))
    observed = None
    if all(p.observed_second_moment is not None for p in parts):
        observed = sum(w * p.observed_second_moment for w, p in zip(weights, parts))
    return MomentDecomposition.from_matrices(
        q_eta, q_xi, rel_tol, observed, parts[0].realizations, sum(p.samples for p in parts)
    )


@dataclass
class NormalizedNoise:
    """Q~_xi in the eigenbasis of Q_eta, zero outside the signal range"""
    q_xi_tilde: np.ndarray  # n x n
    eigenvalues: np.ndarray  # signal-range spectrum, descending
    transform: np.ndarray  # (D^{1/2})^+ V^T
    signal_rank: int
    identity_pattern: np.ndarray

    @property
    def state_dim(self) -> int:
        return self.q_xi_tilde.shape[0]

    @property
    def range_block(self) -> np.ndarray:
        k = self.signal_rank
        return self.q_xi_tilde[:k, :k]

    def to_dict(self) -> Dict:
        return {
            "signal_rank": self.signal_rank,
            "state_dim": self.state_dim,
            "noise_eigenvalues": self.eigenvalues.tolist(),
            "q_xi_tilde": self.q_xi_tilde.tolist(),
        }


def normalize_noise(dec: MomentDecomposition, rel_tol: Optional[float] = None) -> NormalizedNoise:
    signal = dec.signal
    if rel_tol is not None and rel_tol != signal.rel_tol:
        signal = sym_eig(dec.q_eta, rel_tol)
    root = pinv_sqrt(signal)
    transform = root.inv_sqrt[:, None] * signal.eigenvectors.T
    q_tilde = transform @ dec.q_xi @ transform.T
    q_tilde = 0.5 * (q_tilde + q_tilde.T)

    k = signal.rank
    spectrum = sym_eig(q_tilde[:k, :k], signal.rel_tol).eigenvalues
    if k < dec.state_dim:
        logger.info(f"Signal rank {k} < {dec.state_dim}; noise outside the signal range is ignored")
    return NormalizedNoise(q_tilde, spectrum, transform, k, root.identity_pattern)


def ipc_bound(nn: NormalizedNoise, settings: Optional[NoiseAnalysisSettings] = None) -> float:
    """Tr over the signal range of (I + Q~_xi)^-1 = sum_k 1 / (1 + s_k)"""
    settings = settings or NoiseAnalysisSettings()
    k = nn.signal_rank
    if k == 0:
        return 0.0
    from_spectrum = float(np.sum(1.0 / (1.0 + nn.eigenvalues)))
    block = np.eye(k) + nn.range_block
    from_inverse = float(np.trace(np.linalg.inv(block)))
    # agreement band scales with cond(I + Q~_xi)
    allowed = settings.BOUND_PATH_TOL * max(1.0, from_spectrum) * max(1.0, float(np.linalg.cond(block)))
    if abs(from_spectrum - from_inverse) > allowed:
        logger.warning(
            f"Bound paths disagree: eigenvalue sum {from_spectrum:.12f} vs inverse trace {from_inverse:.12f}; "
            f"using the eigenvalue sum"
        )
    return from_spectrum


def ipc_bound_fullrank(nn: NormalizedNoise, settings: Optional[NoiseAnalysisSettings] = None) -> float:
    """Full n-dimensional trace: null directions count as noise-free ones"""
    return ipc_bound(nn, settings) + (nn.state_dim - nn.signal_rank)


def overlap_matrix(mean: np.ndarray, Y: np.ndarray, nn: NormalizedNoise) -> np.ndarray:
    """C = (D^{1/2})^+ V^T <X> Y^T / T for time-aligned <X> and Y"""
    mean = np.atleast_2d(np.asarray(mean, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if mean.shape[1] != Y.shape[1]:
        raise DimensionError(f"mean output has {mean.shape[1]} samples but targets have {Y.shape[1]}")
    if mean.shape[0] != nn.state_dim:
        raise DimensionError(f"mean output has {mean.shape[0]} rows, expected {nn.state_dim}")
    return nn.transform @ (mean @ Y.T / mean.shape[1])


def overlap_gram(
    mean: np.ndarray,
    basis: BasisSet,
    inputs: np.ndarray,
    nn: NormalizedNoise,
    block_size: Optional[int] = None,
) -> np.ndarray:
    """C C^T accumulated over target blocks; mean and inputs share the time axis"""
    mean = np.atleast_2d(np.asarray(mean, dtype=float))
    if mean.shape[1] != np.atleast_2d(inputs).shape[1]:
        raise DimensionError("mean output and inputs must share the time axis")
    window = mean[:, basis.max_delay:]
    gram = np.zeros((nn.state_dim, nn.state_dim))
    for _, Y in iter_target_blocks(basis, inputs, block_size):
        C = overlap_matrix(window, Y, nn)
        gram += C @ C.T
    return 0.5 * (gram + gram.T)


def two_path_error(nn: NormalizedNoise, gram: np.ndarray, D: int) -> float:
    """J(W*) seen from the noise side: D - Tr((I + Q~_xi)^-1 C C^T)"""
    n = nn.state_dim
    return float(D - np.trace(np.linalg.solve(np.eye(n) + nn.q_xi_tilde, gram)))


def matched_output_noise(
    spec: ReservoirSpec,
    input_seed: int,
    T: int,
    R: int,
    washout: Optional[int] = None,
    noise_seed: Optional[int] = None,
) -> ReservoirSpec:
    """
    Same reservoir with its internal noise replaced by output noise of equal
    output covariance.

    Q_xi of the state-noise reservoir is estimated by simulation and
    rescaled by R / (R - 1), so the output-noise reservoir reproduces the
    same Q_xi estimate at the same R.
    """
    if spec.noise_location is not NoiseLocation.STATE or not spec.noisy:
        raise ConfigError("matched_output_noise needs a reservoir with state noise")
    if R < 2:
        raise ConfigError(f"need R >= 2 to estimate the output covariance, got R={R}")
    dec = estimate_moments(ensemble_run(spec, input_seed, T, washout, R, noise_seed))
    covariance = dec.q_xi * R / (R - 1)
    logger.info(f"Matched output noise: Tr Sigma={np.trace(covariance):.4f}")
    return spec.with_noise(NoiseLocation.OUTPUT, covariance)


@dataclass
class BoundReport:
    """Measured IPC against the noise bound for one reservoir"""
    ipc_measured: float
    ipc_bound: float
    bound_fullrank: float
    tol_stat: float
    stderr: float
    threshold: float
    signal_rank: int
    n: int
    T: int
    R: int
    D: int
    seed: int
    noise_eigenvalues: List[float]
    j_optimal: float
    j_two_path: float
    regress_on: str = "realization"
    capacity: Optional[CapacityReport] = None
    moments: Optional[MomentDecomposition] = None
    metadata: Dict = field(default_factory=dict)

    @property
    def margin(self) -> float:
        return self.ipc_bound - self.ipc_measured

    @property
    def passed(self) -> bool:
        return bool(self.ipc_measured <= self.ipc_bound + self.tol_stat)

    @property
    def two_path_gap(self) -> float:
        """Relative disagreement of the two J(W*) evaluations"""
        scale = max(abs(self.j_optimal), 1e-12)
        return abs(self.j_optimal - self.j_two_path) / scale

    def to_row(self, sweep_value=None) -> Dict:
        return dict(zip(ROW_COLUMNS, [
            sweep_value, self.n, self.T, self.R, self.D,
            self.ipc_measured, self.ipc_bound, self.bound_fullrank, self.margin, self.passed, self.seed,
        ]))

    def to_dict(self) -> Dict:
        detail = {
            **self.to_row(),
            "tol_stat": self.tol_stat,
            "stderr": self.stderr,
            "threshold": self.threshold,
            "signal_rank": self.signal_rank,
            "noise_eigenvalues": self.noise_eigenvalues,
            "j_optimal": self.j_optimal,
            "j_two_path": self.j_two_path,
            "two_path_gap": self.two_path_gap,
            "regress_on": self.regress_on,
            "metadata": self.metadata,
        }
        detail.pop("sweep_value")
        if self.capacity is not None:
            detail["capacity"] = self.capacity.to_dict()
        if self.moments is not None:
            detail["moments"] = self.moments.to_dict()
        return detail


def verify_bound(
    spec: ReservoirSpec,
    basis: BasisSet,
    T: int,
    R: int,
    seed: int,
    washout: Optional[int] = None,
    noise_seed: Optional[int] = None,
    n_shuffles: int = 20,
    regress_on: str = "realization",
    sequences: int = 1,
    settings: Optional[NoiseAnalysisSettings] = None,
) -> BoundReport:
    """
    Simulate, measure the thresholded IPC of one noisy realization and check
    it against the bound estimated from the ensemble moments.

    With sequences > 1 every statistic is pooled over independent input
    sequences of length T instead of coming from one long sequence.
    """
    settings = settings or NoiseAnalysisSettings()
    if regress_on not in ("realization", "mean"):
        raise ConfigError(f"regress_on must be 'realization' or 'mean', got {regress_on!r}")
    if sequences < 1:
        raise ConfigError(f"sequences must be >= 1, got {sequences}")
    logger.info("=" * 80)
    logger.info(f"Verifying bound: n={spec.state_dim}, T={T}, R={R}, D={basis.D}, noise {spec.noise_location.value}")
    logger.info("=" * 80)

    decompositions, regressions, signal_parts, threshold, provenance = [], [], [], None, {}
    for k in range(sequences):
        input_seed = seed if k == 0 else derive_seed(seed, INPUT_STREAM, k)
        ensemble = ensemble_run(spec, input_seed, T, washout, R, noise_seed if k == 0 else input_seed)
        if basis.max_delay >= ensemble.T:
            raise ConfigError(f"T={T} must exceed the basis max_delay={basis.max_delay}")
        decompositions.append(estimate_moments(ensemble.window(basis.max_delay)))

        X = ensemble.realizations[0] if regress_on == "realization" else ensemble.mean
        if threshold is None:
            threshold = null_threshold(X, basis, ensemble.inputs, n_shuffles, seed)
            provenance = ensemble.provenance(spec)
        regressions.append(regression_moments(X, basis, ensemble.inputs))
        signal_parts.append(regression_moments(ensemble.mean, basis, ensemble.inputs, time_blocks=1))

    moments = pool_moments(decompositions)
    nn = normalize_noise(moments)
    bound = ipc_bound(nn, settings)
    fullrank = ipc_bound_fullrank(nn, settings)

    pooled = RegressionMoments.concatenate(regressions)
    metadata = {"regress_on": regress_on, "sequences": sequences, **provenance}
    capacity = ipc_estimate(X, basis, ensemble.inputs, threshold, moments=pooled, metadata=metadata)
    stderr = bootstrap_stderr(pooled, threshold, seed=seed)
    tol_stat = max(settings.TOL_FLOOR, settings.TOL_STDERRS * stderr)

    _, cross, _ = RegressionMoments.concatenate(signal_parts).pooled()
    C = nn.transform @ cross
    j_two_path = two_path_error(nn, C @ C.T, basis.D)

    report = BoundReport(
        ipc_measured=capacity.ipc_total,
        ipc_bound=bound,
        bound_fullrank=fullrank,
        tol_stat=tol_stat,
        stderr=stderr,
        threshold=threshold,
        signal_rank=nn.signal_rank,
        n=spec.state_dim,
        T=T,
        R=R,
        D=basis.D,
        seed=int(seed),
        noise_eigenvalues=nn.eigenvalues.tolist(),
        j_optimal=optimal_error(pooled),
        j_two_path=j_two_path,
        regress_on=regress_on,
        capacity=capacity,
        moments=moments,
        metadata={"reservoir": spec.to_dict(), "sequences": sequences, "n_shuffles": n_shuffles},
    )
    status = "PASS" if report.passed else "FAIL"
    logger.info(
        f"{status}: measured {report.ipc_measured:.4f} vs bound {report.ipc_bound:.4f} "
        f"(tol {tol_stat:.4f}, margin {report.margin:.4f})"
    )
    return report
