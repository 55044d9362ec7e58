"""
Embedded oracle checks: closed-form capacities and bounds, algebraic
identities of the estimators, and one small end-to-end simulation.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np

from basis import enumerate_basis, evaluate_targets
from capacity import capacities, capacity
from linalg import pinv
from noise_analysis import MomentDecomposition, estimate_moments, ipc_bound, normalize_noise, verify_bound
from reservoir import NoiseLocation, ReservoirKind, Topology, ensemble_run, generate_reservoir
from streams import make_rng

logger = logging.getLogger(__name__)

SELFTEST_SEED = 20240611


@dataclass
class CheckResult:
    name: str
    value: float
    expected: float
    tolerance: float
    mode: str = "close"  # "close": |value - expected| < tol, "at_most": value < expected + tol
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        if not np.isfinite(self.value):
            return False
        if self.mode == "at_most":
            return bool(self.value < self.expected + self.tolerance)
        return bool(abs(self.value - self.expected) < self.tolerance)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "expected": self.expected,
            "tolerance": self.tolerance,
            "mode": self.mode,
            "passed": self.passed,
            "seconds": self.seconds,
        }


def _random_psd(rng: np.random.Generator, n: int, rank: int) -> np.ndarray:
    factor = rng.standard_normal((n, rank))
    return factor @ factor.T / rank


def _conditioned(rng: np.random.Generator, n: int) -> np.ndarray:
    return np.eye(n) + 0.3 * rng.standard_normal((n, n)) / np.sqrt(n)


def scalar_channel(variance: float) -> Tuple[float, float]:
    """Capacity of x = y + eps against its closed form 1 / (1 + variance)"""
    rng = make_rng(SELFTEST_SEED, 0)
    T = 100_000
    y = np.sqrt(3.0) * rng.uniform(-1.0, 1.0, T)
    x = y + np.sqrt(variance) * rng.standard_normal(T)
    return capacity(x, y), 1.0 / (1.0 + variance)


def orthonormal_example() -> Tuple[float, float]:
    dec = MomentDecomposition.from_matrices(np.eye(4), np.diag([0.1, 0.5, 1.0, 2.0]))
    return ipc_bound(normalize_noise(dec)), 1 / 1.1 + 1 / 1.5 + 1 / 2 + 1 / 3


def whitened_simulation() -> Tuple[float, float]:
    """Measured IPC of a noisy delay line against its estimated bound"""
    spec = generate_reservoir(
        ReservoirKind.LINEAR, 4, input_scale=np.sqrt(3.0), topology=Topology.DELAY_LINE,
        noise_location=NoiseLocation.OUTPUT, noise_covariance=[0.1, 0.5, 1.0, 2.0],
    )
    basis = enumerate_basis(2, 6)
    report = verify_bound(spec, basis, T=20_000, R=30, seed=SELFTEST_SEED, washout=10)
    return report.ipc_measured - report.tol_stat, report.ipc_bound


def decomposition_identity() -> Tuple[float, float]:
    spec = generate_reservoir(
        ReservoirKind.ECHO_STATE, 5, spectral_radius=0.8, seed=SELFTEST_SEED,
        noise_location=NoiseLocation.STATE, noise_covariance=0.01,
    )
    dec = estimate_moments(ensemble_run(spec, SELFTEST_SEED, 2000, washout=100, R=30))
    return dec.decomposition_residual() / np.linalg.norm(dec.observed_second_moment), 0.0


def capacity_invariance() -> Tuple[float, float]:
    rng = make_rng(SELFTEST_SEED, 1)
    X = rng.standard_normal((6, 5000))
    Y = rng.standard_normal((4, 5000)) + X[:4]
    G = _conditioned(rng, 6)
    scaled = capacities(X, 3.7 * Y)
    transformed = capacities(G @ X, Y)
    base = capacities(X, Y)
    return float(max(np.abs(scaled - base).max(), np.abs(transformed - base).max())), 0.0


def penrose_identities() -> Tuple[float, float]:
    rng = make_rng(SELFTEST_SEED, 2)
    S = _random_psd(rng, 6, 4)
    P = pinv(S)
    scale = np.linalg.norm(S)
    residuals = [
        np.linalg.norm(S @ P @ S - S) / scale,
        np.linalg.norm(P @ S @ P - P) / np.linalg.norm(P),
        np.linalg.norm(S @ P - (S @ P).T),
        np.linalg.norm(P @ S - (P @ S).T),
    ]
    return float(max(residuals)), 0.0


def gram_check() -> Tuple[float, float]:
    """Largest deviation of the empirical target Gram matrix from I"""
    basis = enumerate_basis(2, 1)
    inputs = make_rng(SELFTEST_SEED, 3).uniform(-1.0, 1.0, (1, 100_000))
    Y = evaluate_targets(basis, inputs)
    gram = Y @ Y.T / Y.shape[1]
    return float(np.abs(gram - np.eye(basis.D)).max()), 0.0


def bound_invariance() -> Tuple[float, float]:
    rng = make_rng(SELFTEST_SEED, 4)
    q_eta = _random_psd(rng, 5, 8)
    q_xi = _random_psd(rng, 5, 8) * 0.5
    G = _conditioned(rng, 5)
    before = ipc_bound(normalize_noise(MomentDecomposition.from_matrices(q_eta, q_xi)))
    after = ipc_bound(normalize_noise(MomentDecomposition.from_matrices(G @ q_eta @ G.T, G @ q_xi @ G.T)))
    return abs(before - after), 0.0


# name, check, tolerance, mode
CHECKS: List[Tuple[str, Callable[[], Tuple[float, float]], float, str]] = [
    ("scalar channel sigma^2=0.25", lambda: scalar_channel(0.25), 0.02, "close"),
    ("scalar channel sigma^2=1", lambda: scalar_channel(1.0), 0.02, "close"),
    ("scalar channel sigma^2=4", lambda: scalar_channel(4.0), 0.02, "close"),
    ("orthonormal example bound", orthonormal_example, 1e-6, "close"),
    ("whitened delay line measured <= bound", whitened_simulation, 1e-9, "at_most"),
    ("decomposition identity", decomposition_identity, 1e-10, "close"),
    ("capacity scale/basis invariance", capacity_invariance, 1e-8, "close"),
    ("Penrose identities", penrose_identities, 1e-9, "close"),
    ("basis Gram orthonormality", gram_check, 5.0 / np.sqrt(100_000), "close"),
    ("bound output-basis invariance", bound_invariance, 1e-8, "close"),
]


def run_selftest(tolerance_scale: float = 1.0) -> List[CheckResult]:
    """Every check with its tolerance multiplied by tolerance_scale"""
    results = []
    for name, check, tolerance, mode in CHECKS:
        start = time.perf_counter()
        value, expected = check()
        result = CheckResult(name, float(value), float(expected), tolerance * tolerance_scale, mode)
        result.seconds = time.perf_counter() - start
        logger.info(f"{'PASS' if result.passed else 'FAIL'} {name}: {value:.6g} vs {expected:.6g}")
        results.append(result)
    return results


def format_table(results: List[CheckResult]) -> str:
    lines = ["=" * 80, f"{'CHECK':<40} {'VALUE':>11} {'EXPECTED':>11} {'TOL':>9}  RESULT", "=" * 80]
    for r in results:
        lines.append(
            f"{r.name:<40} {r.value:>11.6g} {r.expected:>11.6g} {r.tolerance:>9.2g}  {'PASS' if r.passed else 'FAIL'}"
        )
    passed = sum(r.passed for r in results)
    lines += ["=" * 80, f"{passed}/{len(results)} checks passed", "=" * 80]
    return "\n".join(lines)
