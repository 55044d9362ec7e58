"""
Driven stochastic discrete-time reservoirs.

Linear:     s(t) = A s(t-1) + B U(t) (+ state noise)
EchoState:  s(t) = tanh(A s(t-1) + B U(t) (+ state noise))

Outputs are the states themselves (identity readout) plus optional output
noise. Inputs are i.i.d. uniform on [-1, 1] per channel.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic_settings import BaseSettings, SettingsConfigDict

from exceptions import ConfigError, DimensionError, NumericalError
from streams import INPUT_STREAM, MATRIX_STREAM, NOISE_STREAM, make_rng, stream_manifest

logger = logging.getLogger(__name__)


class ReservoirSettings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_prefix="IPC_LAB_", extra="ignore")

    DIVERGENCE_LIMIT: float = 1e50  # any |state| above this counts as overflow
    CHUNK_STEPS: int = 4096  # noise is drawn in blocks of this many steps
    DEFAULT_WASHOUT: int = 1000


class ReservoirKind(str, Enum):
    LINEAR = "linear"
    ECHO_STATE = "echo_state"


class NoiseLocation(str, Enum):
    NONE = "none"
    STATE = "state"
    OUTPUT = "output"


class Topology(str, Enum):
    RANDOM = "random"
    DELAY_LINE = "delay_line"


def spectral_radius_of(matrix: np.ndarray) -> float:
    if matrix.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(matrix))))


@dataclass
class ReservoirSpec:
    """Full description of a stochastic reservoir"""
    kind: ReservoirKind
    recurrent_matrix: np.ndarray
    input_matrix: np.ndarray
    noise_location: NoiseLocation = NoiseLocation.NONE
    noise_covariance: Optional[np.ndarray] = None
    input_scale: float = 1.0
    topology: Topology = Topology.RANDOM

    def __post_init__(self):
        self.kind = ReservoirKind(self.kind)
        self.noise_location = NoiseLocation(self.noise_location)
        self.topology = Topology(self.topology)
        self.recurrent_matrix = np.atleast_2d(np.asarray(self.recurrent_matrix, dtype=float))
        self.input_matrix = np.asarray(self.input_matrix, dtype=float)
        if self.input_matrix.ndim == 1:
            self.input_matrix = self.input_matrix[:, None]

        n = self.recurrent_matrix.shape[0]
        if n < 1 or self.recurrent_matrix.shape != (n, n):
            raise DimensionError(f"recurrent_matrix must be square with n >= 1, got {self.recurrent_matrix.shape}")
        if self.input_matrix.ndim != 2 or self.input_matrix.shape[0] != n or self.input_matrix.shape[1] < 1:
            raise DimensionError(f"input_matrix must be {n}x d with d >= 1, got {self.input_matrix.shape}")

        self.noise_covariance = _psd_covariance(self.noise_covariance, n)
        if self.noise_location is NoiseLocation.NONE:
            self.noise_covariance = np.zeros((n, n))

    @property
    def state_dim(self) -> int:
        return self.recurrent_matrix.shape[0]

    @property
    def input_dim(self) -> int:
        return self.input_matrix.shape[1]

    @property
    def spectral_radius(self) -> float:
        return spectral_radius_of(self.recurrent_matrix)

    @property
    def noisy(self) -> bool:
        return self.noise_location is not NoiseLocation.NONE and bool(np.any(self.noise_covariance != 0))

    def noise_factor(self) -> np.ndarray:
        """L with L L^T = Sigma (eigen square root, valid for singular Sigma)"""
        eigenvalues, eigenvectors = np.linalg.eigh(self.noise_covariance)
        return eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))

    def with_noise(self, location: NoiseLocation, covariance: np.ndarray) -> "ReservoirSpec":
        return ReservoirSpec(
            kind=self.kind,
            recurrent_matrix=self.recurrent_matrix.copy(),
            input_matrix=self.input_matrix.copy(),
            noise_location=location,
            noise_covariance=covariance,
            input_scale=self.input_scale,
            topology=self.topology,
        )

    def to_dict(self) -> Dict:
        return {
            "kind": self.kind.value,
            "topology": self.topology.value,
            "state_dim": self.state_dim,
            "input_dim": self.input_dim,
            "spectral_radius": self.spectral_radius,
            "input_scale": self.input_scale,
            "noise_location": self.noise_location.value,
            "noise_covariance": self.noise_covariance.tolist(),
        }

    def digest(self) -> str:
        """sha256 over the kind, topology, noise location and the raw matrices"""
        h = hashlib.sha256()
        h.update(f"{self.kind.value}|{self.topology.value}|{self.noise_location.value}".encode("utf-8"))
        for matrix in (self.recurrent_matrix, self.input_matrix, self.noise_covariance):
            h.update(str(matrix.shape).encode("utf-8"))
            h.update(np.ascontiguousarray(matrix, dtype=np.float64).tobytes())
        return h.hexdigest()


def _psd_covariance(covariance, n: int) -> np.ndarray:
    """Accepts None, a variance vector or a full matrix; returns a PSD n x n matrix"""
    if covariance is None:
        return np.zeros((n, n))
    covariance = np.asarray(covariance, dtype=float)
    if covariance.ndim == 0:
        covariance = np.full(n, float(covariance))
    if covariance.ndim == 1:
        if covariance.shape != (n,):
            raise DimensionError(f"noise variances must have length {n}, got {covariance.shape[0]}")
        if np.any(covariance < 0):
            raise ConfigError("noise variances must be nonnegative")
        return np.diag(covariance)
    if covariance.shape != (n, n):
        raise DimensionError(f"noise_covariance must be {n}x{n}, got {covariance.shape}")

    covariance = 0.5 * (covariance + covariance.T)
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    floor = 1e-12 * max(float(eigenvalues.max()), 0.0)
    if np.any(eigenvalues < -floor):
        raise ConfigError(f"noise_covariance is not positive semi-definite (min eigenvalue {eigenvalues.min():.3e})")
    if np.any(eigenvalues < 0):
        covariance = (eigenvectors * np.clip(eigenvalues, 0.0, None)) @ eigenvectors.T
    return covariance


def generate_reservoir(
    kind: ReservoirKind,
    n: int,
    d: int = 1,
    spectral_radius: float = 0.9,
    input_scale: float = 1.0,
    noise_location: NoiseLocation = NoiseLocation.NONE,
    noise_covariance=None,
    seed: int = 0,
    topology: Topology = Topology.RANDOM,
) -> ReservoirSpec:
    """
    Build a reservoir from the matrix stream of `seed`.

    Random topology: A has i.i.d. standard Gaussian entries rescaled to the
    target spectral radius; B has i.i.d. uniform [-1, 1] entries times
    input_scale. Delay line: A is the shift matrix (spectral radius 0) and B
    feeds the first unit only, so unit k holds input_scale * U(t - k).
    """
    if n < 1 or d < 1:
        raise ConfigError(f"state_dim and input_dim must be >= 1 (got n={n}, d={d})")
    if spectral_radius < 0:
        raise ConfigError("spectral_radius must be nonnegative")

    topology = Topology(topology)
    if topology is Topology.DELAY_LINE:
        A = np.eye(n, k=-1)
        B = np.zeros((n, d))
        B[0, :] = input_scale
    else:
        rng = make_rng(seed, MATRIX_STREAM)
        A = rng.standard_normal((n, n))
        current = spectral_radius_of(A)
        A = A * (spectral_radius / current) if current > 0 else np.zeros((n, n))
        B = rng.uniform(-1.0, 1.0, size=(n, d)) * input_scale

    spec = ReservoirSpec(
        kind=kind,
        recurrent_matrix=A,
        input_matrix=B,
        noise_location=noise_location,
        noise_covariance=noise_covariance,
        input_scale=input_scale,
        topology=topology,
    )
    logger.info(
        f"Generated {spec.kind.value} reservoir ({topology.value}): n={n}, d={d}, "
        f"spectral radius {spec.spectral_radius:.6f}, noise {spec.noise_location.value}"
    )
    return spec


@dataclass
class OutputEnsemble:
    """R noise realizations of the reservoir outputs for one fixed input sequence"""
    inputs: np.ndarray  # d x T
    realizations: np.ndarray  # R x n x T
    washout: int
    seed_manifest: Dict = field(default_factory=dict)
    noisy: bool = False
    mean: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.realizations.ndim != 3 or self.realizations.shape[0] < 1 or self.realizations.shape[2] < 1:
            raise DimensionError(f"realizations must be R x n x T with R, T >= 1, got {self.realizations.shape}")
        if self.inputs.shape[1] != self.realizations.shape[2]:
            raise DimensionError("inputs and realizations must share the time axis")
        if self.R == 1 or np.array_equal(self.realizations, np.broadcast_to(self.realizations[0], self.realizations.shape)):
            # identical copies; averaging would only add rounding
            self.mean = self.realizations[0].copy()
        else:
            self.mean = self.realizations.mean(axis=0)

    def residual(self, r: int) -> np.ndarray:
        """Delta X_r = X_r - <X>, computed on demand"""
        return self.realizations[r] - self.mean

    @property
    def residuals(self) -> np.ndarray:
        return self.realizations - self.mean

    @property
    def R(self) -> int:
        return self.realizations.shape[0]

    @property
    def T(self) -> int:
        return self.realizations.shape[2]

    @property
    def state_dim(self) -> int:
        return self.realizations.shape[1]

    def window(self, start: int) -> "OutputEnsemble":
        """Same ensemble with the first `start` samples dropped"""
        if not 0 <= start < self.T:
            raise DimensionError(f"window start {start} outside [0, {self.T})")
        return OutputEnsemble(
            inputs=self.inputs[:, start:],
            realizations=self.realizations[:, :, start:],
            washout=self.washout + start,
            seed_manifest=self.seed_manifest,
            noisy=self.noisy,
        )

    def provenance(self, spec: ReservoirSpec) -> Dict:
        """R, stream seeds and reservoir digest for result metadata"""
        return {"R": self.R, "seeds": self.seed_manifest, "reservoir_digest": spec.digest()}

    def to_dict(self) -> Dict:
        return {
            "R": self.R,
            "T": self.T,
            "state_dim": self.state_dim,
            "washout": self.washout,
            "noisy": self.noisy,
            "seed_manifest": self.seed_manifest,
        }


@dataclass
class FadingMemoryProbe:
    """Divergence of two trajectories started from different states"""
    divergence: np.ndarray
    initial_divergence: float
    passed: bool

    def to_dict(self) -> Dict:
        return {
            "initial_divergence": self.initial_divergence,
            "final_divergence": float(self.divergence[-1]),
            "passed": self.passed,
            "divergence": self.divergence.tolist(),
        }


def draw_inputs(input_dim: int, length: int, seed: int) -> np.ndarray:
    """d x length i.i.d. uniform [-1, 1] inputs from the input stream"""
    rng = make_rng(seed, INPUT_STREAM)
    return rng.uniform(-1.0, 1.0, size=(length, input_dim)).T


def _check_vector(name: str, value: np.ndarray, size: int) -> np.ndarray:
    value = np.asarray(value, dtype=float)
    if value.shape != (size,):
        raise DimensionError(f"{name} must have shape ({size},), got {value.shape}")
    return value


def step(state: np.ndarray, input: np.ndarray, spec: ReservoirSpec, noise_draw: Optional[np.ndarray] = None) -> np.ndarray:
    """One application of the update rule; state noise enters before the nonlinearity"""
    state = _check_vector("state", state, spec.state_dim)
    input = _check_vector("input", input, spec.input_dim)
    pre = spec.recurrent_matrix @ state + spec.input_matrix @ input
    if noise_draw is not None:
        pre = pre + _check_vector("noise_draw", noise_draw, spec.state_dim)
    return np.tanh(pre) if spec.kind is ReservoirKind.ECHO_STATE else pre


def _integrate(
    spec: ReservoirSpec,
    inputs: np.ndarray,
    washout: int,
    noise_rngs: Sequence[np.random.Generator],
    initial_state: Optional[np.ndarray] = None,
    settings: Optional[ReservoirSettings] = None,
) -> np.ndarray:
    """
    Integrate a batch of trajectories sharing one input sequence.

    Returns R x n x T outputs (T = steps - washout). The batch has one column
    per noise stream when noise is internal, otherwise the deterministic
    trajectory is integrated once and output noise is added per stream.
    """
    settings = settings or ReservoirSettings()
    n = spec.state_dim
    steps = inputs.shape[1]
    T = steps - washout
    R = len(noise_rngs)

    internal = spec.noisy and spec.noise_location is NoiseLocation.STATE
    if initial_state is None:
        batch = R if internal else 1
        state = np.zeros((n, batch))
    else:
        state = np.array(initial_state, dtype=float).reshape(n, -1)
        batch = state.shape[1]
    echo = spec.kind is ReservoirKind.ECHO_STATE
    A = spec.recurrent_matrix
    drive = spec.input_matrix @ inputs
    factor = spec.noise_factor() if spec.noisy else None
    limit = settings.DIVERGENCE_LIMIT
    chunk = max(1, settings.CHUNK_STEPS)

    states = np.empty((T, n, batch))
    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, steps, chunk):
            stop = min(start + chunk, steps)
            eps = None
            if internal:
                draws = np.stack([rng.standard_normal((stop - start, n)) for rng in noise_rngs], axis=-1)
                eps = np.einsum("ij,tjr->tir", factor, draws)
            for t in range(start, stop):
                pre = A @ state + drive[:, t:t + 1]
                if eps is not None:
                    pre += eps[t - start]
                state = np.tanh(pre) if echo else pre
                magnitude = np.abs(state).max(axis=0)
                if not np.all(magnitude <= limit):
                    bad = int(np.argmax(~(magnitude <= limit)))
                    raise NumericalError(
                        "Reservoir state diverged (non-finite or above divergence limit)",
                        step=t,
                        realization=bad if internal else None,
                    )
                if t >= washout:
                    states[t - washout] = state

    outputs = np.transpose(states, (2, 1, 0))  # batch x n x T
    if not internal and initial_state is None:
        outputs = np.repeat(outputs, max(R, 1), axis=0)
    if spec.noisy and spec.noise_location is NoiseLocation.OUTPUT:
        for r, rng in enumerate(noise_rngs):
            outputs[r] += factor @ rng.standard_normal((T, n)).T
    return outputs


def run(
    spec: ReservoirSpec,
    input_seed: int,
    T: int,
    washout: Optional[int] = None,
    noise_seed: Optional[int] = None,
    realization: int = 0,
) -> np.ndarray:
    """Single noise realization of the n x T output matrix"""
    washout = ReservoirSettings().DEFAULT_WASHOUT if washout is None else washout
    if T < 1 or washout < 0:
        raise ConfigError(f"need T >= 1 and washout >= 0 (got T={T}, washout={washout})")
    noise_seed = input_seed if noise_seed is None else noise_seed
    inputs = draw_inputs(spec.input_dim, washout + T, input_seed)
    rng = make_rng(noise_seed, NOISE_STREAM, realization)
    return _integrate(spec, inputs, washout, [rng])[0]


def ensemble_run(
    spec: ReservoirSpec,
    input_seed: int,
    T: int,
    washout: Optional[int] = None,
    R: int = 1,
    noise_seed: Optional[int] = None,
) -> OutputEnsemble:
    """R noise realizations driven by one shared input sequence"""
    washout = ReservoirSettings().DEFAULT_WASHOUT if washout is None else washout
    if R < 1 or T < 1 or washout < 0:
        raise ConfigError(f"need R >= 1, T >= 1, washout >= 0 (got R={R}, T={T}, washout={washout})")
    noise_seed = input_seed if noise_seed is None else noise_seed
    inputs = draw_inputs(spec.input_dim, washout + T, input_seed)
    rngs: List[np.random.Generator] = [make_rng(noise_seed, NOISE_STREAM, r) for r in range(R)]

    logger.info(f"Simulating {R} realization(s): T={T}, washout={washout}, n={spec.state_dim}")
    realizations = _integrate(spec, inputs, washout, rngs)
    return OutputEnsemble(
        inputs=inputs[:, washout:],
        realizations=realizations,
        washout=washout,
        seed_manifest=stream_manifest(input_seed, noise_seed, R),
        noisy=spec.noisy,
    )


def fading_memory_probe(
    spec: ReservoirSpec,
    s0_a: np.ndarray,
    s0_b: np.ndarray,
    T: int,
    input_seed: int,
) -> FadingMemoryProbe:
    """Drive two noiseless copies from s0_a and s0_b with the same inputs"""
    if T < 1:
        raise ConfigError(f"need T >= 1 for the fading-memory probe, got T={T}")
    s0_a = _check_vector("s0_a", s0_a, spec.state_dim)
    s0_b = _check_vector("s0_b", s0_b, spec.state_dim)
    noiseless = spec.with_noise(NoiseLocation.NONE, None)
    inputs = draw_inputs(spec.input_dim, T, input_seed)
    pair = _integrate(noiseless, inputs, 0, [], initial_state=np.stack([s0_a, s0_b], axis=1))
    divergence = np.linalg.norm(pair[0] - pair[1], axis=0)
    initial = float(np.linalg.norm(s0_a - s0_b))
    passed = initial == 0.0 or bool(divergence[-1] < 1e-8 * initial)
    return FadingMemoryProbe(divergence=divergence, initial_divergence=initial, passed=passed)
