"""
Orthonormal polynomial target basis over delayed inputs.

A target is a product of normalized Legendre polynomials of delayed inputs,
prod_i P~_{g_i}(U(t - d_i)), with P~_g = sqrt(2g + 1) P_g so that
E[P~_g(u)^2] = 1 for u ~ uniform[-1, 1]. Targets are enumerated in graded
order: total degree, then memory depth, then the per-delay degree vector.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
from pydantic_settings import BaseSettings, SettingsConfigDict
from scipy.special import eval_legendre

from exceptions import BasisError

logger = logging.getLogger(__name__)


class BasisSettings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_prefix="IPC_LAB_", extra="ignore")

    HARD_CAP: int = 1_000_000
    BLOCK_SIZE: int = 64  # targets evaluated per block


def normalized_legendre(degree: int, u: np.ndarray) -> np.ndarray:
    """Legendre polynomial orthonormal under the uniform measure on [-1, 1]"""
    return np.sqrt(2 * degree + 1) * eval_legendre(degree, u)


@dataclass(frozen=True)
class BasisIndex:
    """One target: (delay, degree) terms with strictly increasing delays"""
    terms: Tuple[Tuple[int, int], ...] = ()
    channel: int = 0

    def __post_init__(self):
        terms = tuple((int(d), int(g)) for d, g in self.terms)
        object.__setattr__(self, "terms", terms)
        delays = [d for d, _ in terms]
        if any(d < 0 for d in delays):
            raise BasisError(f"Delays must be nonnegative: {terms}")
        if any(b <= a for a, b in zip(delays, delays[1:])):
            raise BasisError(f"Delays must be strictly increasing: {terms}")
        if any(g < 1 for _, g in terms):
            raise BasisError(f"Degrees must be >= 1: {terms}")
        if self.channel != 0:
            raise BasisError("Only single-channel inputs (channel 0) are supported")

    @property
    def total_degree(self) -> int:
        return sum(g for _, g in self.terms)

    @property
    def max_delay(self) -> int:
        return self.terms[-1][0] if self.terms else 0

    @property
    def memory_depth(self) -> int:
        return self.max_delay + 1

    @property
    def is_constant(self) -> bool:
        return not self.terms

    def degree_vector(self, length: Optional[int] = None) -> Tuple[int, ...]:
        length = self.memory_depth if length is None else length
        vector = [0] * length
        for d, g in self.terms:
            vector[d] = g
        return tuple(vector)

    def sort_key(self, max_delay: int) -> Tuple:
        return (self.total_degree, self.max_delay, self.degree_vector(max_delay + 1))

    def __str__(self) -> str:
        if not self.terms:
            return "1"
        return "*".join(f"{d}^{g}" for d, g in self.terms)

    @classmethod
    def parse(cls, text: str) -> "BasisIndex":
        """Inverse of str(): "0^2*3^1" -> ((0, 2), (3, 1))"""
        text = text.strip()
        if text == "1":
            return cls(())
        try:
            terms = tuple(tuple(int(part) for part in factor.split("^")) for factor in text.split("*"))
        except ValueError:
            raise BasisError(f"Malformed basis index: {text!r}")
        if any(len(term) != 2 for term in terms):
            raise BasisError(f"Malformed basis index: {text!r}")
        return cls(terms)


@dataclass
class BasisSet:
    """Graded, truncated collection of basis indices"""
    indices: List[BasisIndex]
    max_degree: int
    max_delay: int

    @property
    def D(self) -> int:
        return len(self.indices)

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __getitem__(self, item):
        return self.indices[item]

    def subset(self, positions) -> "BasisSet":
        return BasisSet([self.indices[i] for i in positions], self.max_degree, self.max_delay)

    def to_dict(self) -> Dict:
        return {"D": self.D, "max_degree": self.max_degree, "max_delay": self.max_delay}


def basis_size(max_degree: int, max_delay: int) -> int:
    """Number of nonconstant monomials of degree <= max_degree in max_delay + 1 variables"""
    return math.comb(max_degree + max_delay + 1, max_degree) - 1


def _degree_vectors(length: int, budget: int) -> Iterator[Tuple[int, ...]]:
    if length == 0:
        yield ()
        return
    for g in range(budget + 1):
        for rest in _degree_vectors(length - 1, budget - g):
            yield (g,) + rest


def enumerate_basis(
    max_degree: int,
    max_delay: int,
    include_constant: bool = False,
    hard_cap: Optional[int] = None,
) -> BasisSet:
    """Every multi-index within the cutoffs, exactly once, in graded order"""
    if max_degree < 1 or max_delay < 0:
        raise BasisError(f"Need max_degree >= 1 and max_delay >= 0 (got {max_degree}, {max_delay})")
    hard_cap = BasisSettings().HARD_CAP if hard_cap is None else hard_cap
    D = basis_size(max_degree, max_delay)
    if D > hard_cap:
        raise BasisError(
            f"Basis cutoffs (max_degree={max_degree}, max_delay={max_delay}) give D={D} targets, "
            f"above the cap of {hard_cap}; use smaller cutoffs"
        )

    indices = []
    for vector in _degree_vectors(max_delay + 1, max_degree):
        terms = tuple((d, g) for d, g in enumerate(vector) if g > 0)
        if terms or include_constant:
            indices.append(BasisIndex(terms))
    indices.sort(key=lambda index: index.sort_key(max_delay))

    logger.info(f"Enumerated basis: max_degree={max_degree}, max_delay={max_delay}, D={len(indices)}")
    return BasisSet(indices, max_degree, max_delay)


def representative_indices(basis: BasisSet, count: int) -> List[int]:
    """Evenly spaced positions through the graded ordering"""
    count = max(1, min(count, basis.D))
    return sorted(set(np.linspace(0, basis.D - 1, count).round().astype(int).tolist()))


def evaluate_basis(index: BasisIndex, history: np.ndarray) -> float:
    """y(t) for one target; history[-1] is U(t), history[-1 - d] is U(t - d)"""
    history = np.asarray(history, dtype=float).ravel()
    if len(history) < index.memory_depth:
        raise BasisError(
            f"History of length {len(history)} too short for {index}: need at least {index.memory_depth}"
        )
    value = 1.0
    for d, g in index.terms:
        value *= float(normalized_legendre(g, history[-1 - d]))
    return value


class _FactorCache:
    """Memoized P~_g(U(t - d)) rows aligned to the window t = max_delay .. T-1"""

    def __init__(self, inputs: np.ndarray, max_delay: int):
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        self.inputs = inputs
        self.max_delay = max_delay
        self.length = inputs.shape[1] - max_delay
        self._rows: Dict[Tuple[int, int, int], np.ndarray] = {}

    def row(self, channel: int, delay: int, degree: int) -> np.ndarray:
        key = (channel, delay, degree)
        if key not in self._rows:
            u = self.inputs[channel, self.max_delay - delay:self.max_delay - delay + self.length]
            self._rows[key] = normalized_legendre(degree, u)
        return self._rows[key]

    def target(self, index: BasisIndex) -> np.ndarray:
        value = np.ones(self.length)
        for d, g in index.terms:
            value = value * self.row(index.channel, d, g)
        return value


def _check_length(basis: BasisSet, inputs: np.ndarray) -> None:
    T = np.atleast_2d(inputs).shape[1]
    if T <= basis.max_delay:
        raise BasisError(f"Need T > max_delay to evaluate targets (T={T}, max_delay={basis.max_delay})")


def evaluate_targets(basis: BasisSet, inputs: np.ndarray) -> np.ndarray:
    """
    D x (T - max_delay) target matrix.

    Column j is time max_delay + j of `inputs`; the first max_delay samples
    lack a full history and are dropped.
    """
    _check_length(basis, inputs)
    cache = _FactorCache(inputs, basis.max_delay)
    Y = np.empty((basis.D, cache.length))
    for i, index in enumerate(basis):
        Y[i] = cache.target(index)
    return Y


def iter_target_blocks(
    basis: BasisSet,
    inputs: np.ndarray,
    block_size: Optional[int] = None,
) -> Iterator[Tuple[slice, np.ndarray]]:
    """Yield (rows, Y_block) so large target sets never sit in memory at once"""
    _check_length(basis, inputs)
    block_size = BasisSettings().BLOCK_SIZE if block_size is None else block_size
    cache = _FactorCache(inputs, basis.max_delay)
    for start in range(0, basis.D, block_size):
        stop = min(start + block_size, basis.D)
        block = np.empty((stop - start, cache.length))
        for i in range(start, stop):
            block[i - start] = cache.target(basis[i])
        yield slice(start, stop), block
