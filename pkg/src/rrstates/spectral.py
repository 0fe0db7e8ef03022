"""Covariance/correlation matrices and their reduced-rank counterparts.

Two construction paths are supported.  The covariance approach starts from
the sample covariance matrix, removes the dyad of its largest eigenpair and
rescales the residual to unit diagonal.  The correlation approach does the
same starting from the sample correlation matrix.  Both yield a singular
correlation matrix describing co-movement relative to the market mode.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateResidualError, DegenerateWindowError, NumericalError

EPS_VAR = 1e-14
NEG_DIAG_TOL = 1e-10
# relative gap below which two top eigenvalues are treated as equal
TIE_RTOL = 1e-10


class Approach(str, enum.Enum):
    COVARIANCE = "covariance"
    CORRELATION = "correlation"

    @property
    def code(self) -> int:
        return 1 if self is Approach.COVARIANCE else 2

    @classmethod
    def from_code(cls, code):
        return {1: cls.COVARIANCE, 2: cls.CORRELATION}.get(int(code))


def _symmetrize(m):
    return 0.5 * (m + m.T)


def _check_block(block):
    block = np.asarray(block, dtype=float)
    if block.ndim != 2:
        raise ValueError("expected a K x T block")
    if block.shape[1] < 2:
        raise ValueError("need at least two observations per asset")
    if not np.isfinite(block).all():
        raise NumericalError("non-finite value in return block")
    return block


def covariance_matrix(block) -> np.ndarray:
    """Sample covariance ``A A^T / T`` of the row-demeaned block (divisor T)."""
    block = _check_block(block)
    a = block - block.mean(axis=1, keepdims=True)
    return _symmetrize(a @ a.T / block.shape[1])


def normalize_rows(block, tickers=None, window=None) -> np.ndarray:
    """Rows shifted to mean zero and scaled to unit (population) standard deviation."""
    block = _check_block(block)
    a = block - block.mean(axis=1, keepdims=True)
    std = np.sqrt((a * a).mean(axis=1))
    scale = np.abs(block).max(axis=1)
    flat = ~(std > 1e-13 * np.maximum(scale, 1e-300))
    if flat.any():
        i = int(np.flatnonzero(flat)[0])
        name = tickers[i] if tickers is not None else i
        raise DegenerateWindowError(
            f"asset {name} has zero return variance in window {window}", ticker=name, window=window
        )
    return a / std[:, None]


def correlation_matrix(block, tickers=None, window=None) -> np.ndarray:
    """Pearson correlation ``M M^T / T`` with an exact unit diagonal."""
    m = normalize_rows(block, tickers, window)
    c = _symmetrize(m @ m.T / m.shape[1])
    np.fill_diagonal(c, 1.0)
    return c


@dataclass(frozen=True)
class SpectralResult:
    """Ascending eigenvalues, orthonormal eigenvectors (columns) and the top pair.

    Each eigenvector is oriented so that its entries sum to a nonnegative
    number.  When the largest eigenvalue is degenerate, ``top_vector`` is the
    unit vector of the top eigenspace closest to the uniform direction.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    top_value: float
    top_vector: np.ndarray

    def reconstruct(self):
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.T


def orient(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so that each sums to >= 0 (ties: first nonzero entry >= 0)."""
    v = np.array(vectors, dtype=float, copy=True)
    squeeze = v.ndim == 1
    if squeeze:
        v = v[:, None]
    sums = v.sum(axis=0)
    tol = 1e-12 * np.sqrt(v.shape[0])
    for j in range(v.shape[1]):
        s = sums[j]
        if abs(s) <= tol:
            nz = np.flatnonzero(np.abs(v[:, j]) > 1e-14)
            s = v[nz[0], j] if len(nz) else 1.0
        if s < 0:
            v[:, j] = -v[:, j]
    return v[:, 0] if squeeze else v


def _top_pair(values, vectors):
    top = values[-1]
    tied = np.flatnonzero(values >= top - TIE_RTOL * max(1.0, abs(top)))
    if len(tied) == 1:
        return float(top), vectors[:, -1]
    basis = vectors[:, tied]
    ones = np.ones(basis.shape[0])
    p = basis @ (basis.T @ ones)
    norm = np.linalg.norm(p)
    if norm <= 1e-12:
        return float(top), vectors[:, -1]
    return float(top), orient(p / norm)


def spectral_decompose(m) -> SpectralResult:
    """Full symmetric eigendecomposition with deterministic orientation."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.isfinite(m).all():
        raise NumericalError("matrix has non-finite entries")
    try:
        values, vectors = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition did not converge: {exc}") from exc
    vectors = orient(vectors)
    top, u = _top_pair(values, vectors)
    return SpectralResult(values, vectors, top, u)


def subtract_market_dyad(m, s: SpectralResult | None = None) -> np.ndarray:
    """``m - kappa_K u_K u_K^T`` for the largest eigenpair of ``m``."""
    m = np.asarray(m, dtype=float)
    if s is None:
        s = spectral_decompose(m)
    u = s.top_vector
    return _symmetrize(m - s.top_value * np.outer(u, u))


@dataclass(frozen=True)
class ReducedRankCorr:
    approach: Approach
    matrix: np.ndarray
    sigma_diag: np.ndarray
    window_index: int | None = None

    @property
    def dim(self):
        return self.matrix.shape[0]


def rescale_to_correlation(m, approach=Approach.COVARIANCE, window_index=None, eps_var=EPS_VAR) -> ReducedRankCorr:
    """Normalize a residual covariance to unit diagonal."""
    m = np.asarray(m, dtype=float)
    diag = np.diag(m).copy()
    neg = np.flatnonzero(diag < -NEG_DIAG_TOL * max(1.0, np.abs(m).max()))
    if len(neg):
        raise NumericalError(f"negative residual variance {diag[neg[0]]:.3e} for asset {neg[0]}")
    small = np.flatnonzero(diag <= eps_var)
    if len(small):
        raise DegenerateResidualError(
            f"residual variance of asset {small[0]} vanished ({diag[small[0]]:.3e})", asset=int(small[0])
        )
    sigma = np.sqrt(diag)
    out = _symmetrize(m / np.outer(sigma, sigma))
    np.fill_diagonal(out, 1.0)
    return ReducedRankCorr(Approach(approach), out, sigma, window_index)


@dataclass(frozen=True)
class ReducedRankStages:
    """Every matrix produced along one construction path."""

    standard: np.ndarray  # covariance or correlation matrix
    spectrum: SpectralResult
    residual: np.ndarray  # standard minus the market dyad
    reduced: ReducedRankCorr


def reduced_rank_stages(block, approach, window_index=None, tickers=None) -> ReducedRankStages:
    approach = Approach(approach)
    if approach is Approach.COVARIANCE:
        standard = covariance_matrix(block)
    else:
        standard = correlation_matrix(block, tickers, window_index)
    spectrum = spectral_decompose(standard)
    residual = subtract_market_dyad(standard, spectrum)
    try:
        reduced = rescale_to_correlation(residual, approach, window_index)
    except DegenerateResidualError as exc:
        if tickers is not None and exc.asset is not None:
            exc.asset = tickers[exc.asset]
        raise
    return ReducedRankStages(standard, spectrum, residual, reduced)


def reduced_rank_pipeline(block, approach, window_index=None) -> ReducedRankCorr:
    """Block of raw returns -> reduced-rank correlation matrix ``C_B`` or ``C_L``."""
    return reduced_rank_stages(block, approach, window_index).reduced


def numerical_rank(m, tol=1e-8) -> int:
    return int((np.linalg.eigvalsh(m) > tol).sum())
