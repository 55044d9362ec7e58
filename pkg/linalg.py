"""
Tolerance-aware symmetric eigendecomposition and pseudo-inverse kernels.

All ranks are relative to the largest eigenvalue, so covariances of very
different scale (noise sweeps) are thresholded the same way.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

from exceptions import DimensionError, LinalgError

logger = logging.getLogger(__name__)

DEFAULT_REL_TOL = 1e-12
SYMMETRY_TOL = 1e-10


@dataclass
class SpectralDecomposition:
    """S = V diag(eigenvalues) V^T with eigenvalues sorted descending"""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    rank: int
    rel_tol: float = DEFAULT_REL_TOL

    @property
    def size(self) -> int:
        return len(self.eigenvalues)

    @property
    def range_mask(self) -> np.ndarray:
        """Boolean mask of the eigenvalues counted in the rank"""
        mask = np.zeros(self.size, dtype=bool)
        mask[:self.rank] = True
        return mask

    def reconstruct(self) -> np.ndarray:
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T

    def range_projector(self) -> np.ndarray:
        basis = self.eigenvectors[:, :self.rank]
        return basis @ basis.T

    def to_dict(self) -> dict:
        return {
            "eigenvalues": self.eigenvalues.tolist(),
            "rank": self.rank,
            "rel_tol": self.rel_tol,
        }


class PseudoInverseRoot(NamedTuple):
    """(D^{1/2})^+ as a vector and the I_ñ diagonal pattern, both in eigen order"""
    inv_sqrt: np.ndarray
    identity_pattern: np.ndarray


def _as_symmetric(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionError(f"Expected a square matrix, got shape {S.shape}")
    scale = np.linalg.norm(S)
    if scale > 0:
        asymmetry = np.linalg.norm(S - S.T) / scale
        if asymmetry > SYMMETRY_TOL:
            raise LinalgError(f"Matrix is not symmetric (relative asymmetry {asymmetry:.3e})")
    return 0.5 * (S + S.T)


def sym_eig(S: np.ndarray, rel_tol: float = DEFAULT_REL_TOL) -> SpectralDecomposition:
    """
    Spectral decomposition of a symmetric positive semi-definite matrix.

    Negative eigenvalues no larger in magnitude than rel_tol * lambda_max are
    rounding noise and are clamped to zero; anything more negative is an error.
    """
    S = _as_symmetric(S)
    if S.shape[0] == 0:
        return SpectralDecomposition(np.zeros(0), np.zeros((0, 0)), 0, rel_tol)

    try:
        eigenvalues, eigenvectors = scipy.linalg.eigh(S)
    except (scipy.linalg.LinAlgError, ValueError) as e:
        raise LinalgError(f"Eigendecomposition did not converge: {str(e)}")

    # descending; exact ties ordered by the axis each eigenvector points along,
    # so diagonal inputs keep their axis order
    rows = np.argmax(np.abs(eigenvectors), axis=0)
    order = np.lexsort((rows, -eigenvalues))
    eigenvalues = eigenvalues[order]
    eigenvectors = eigenvectors[:, order]
    # sign convention: largest-magnitude entry of each eigenvector is positive
    pivots = eigenvectors[rows[order], np.arange(S.shape[0])]
    eigenvectors = eigenvectors * np.where(pivots < 0, -1.0, 1.0)

    lambda_max = max(float(eigenvalues[0]), 0.0)
    floor = rel_tol * lambda_max
    negative = eigenvalues < 0
    if np.any(eigenvalues < -floor):
        raise LinalgError(
            f"Matrix is not positive semi-definite: eigenvalue {eigenvalues.min():.3e} "
            f"below -{floor:.3e}"
        )
    if np.any(negative):
        logger.warning(f"Clamping {int(negative.sum())} negative eigenvalue(s) to zero")
        eigenvalues = np.where(negative, 0.0, eigenvalues)

    rank = int(np.sum(eigenvalues > floor)) if lambda_max > 0 else 0
    return SpectralDecomposition(eigenvalues, eigenvectors, rank, rel_tol)


def pinv_sqrt(dec: SpectralDecomposition) -> PseudoInverseRoot:
    """Pseudo-inverse square root of the eigenvalues; null directions map to 0"""
    mask = dec.range_mask
    inv_sqrt = np.zeros(dec.size)
    inv_sqrt[mask] = 1.0 / np.sqrt(dec.eigenvalues[mask])
    return PseudoInverseRoot(inv_sqrt, mask.astype(float))


def pinv(S: np.ndarray, rel_tol: float = DEFAULT_REL_TOL) -> np.ndarray:
    """Moore-Penrose pseudo-inverse of a symmetric PSD matrix"""
    dec = sym_eig(S, rel_tol)
    basis = dec.eigenvectors[:, :dec.rank]
    inverse = (basis / dec.eigenvalues[:dec.rank]) @ basis.T
    return 0.5 * (inverse + inverse.T)
