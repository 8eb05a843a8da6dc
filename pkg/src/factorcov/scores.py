"""Factor loadings and scores: the two OLS variants, Bartlett, Thompson.

All score operations demean the data column-wise first and report the means
used.  Sign/permutation alignment between estimated and true factors is a
metrics concern and is not performed here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import (
    CollinearityError,
    DegenerateSpectrumError,
    InputError,
    NumericError,
)
from .kernels import SparseComponent, SymMatrix, sym_eig

__all__ = [
    "FactorFit",
    "ols_factors_v1",
    "ols_factors_v2",
    "bartlett_scores",
    "thompson_scores",
    "rotation_to_truth",
    "communalities",
]

METHODS = ("OLS1", "OLS2", "Bartlett", "Thompson")
SOURCES = ("SampleCov", "ALCE", "UNALCE", "POET")


@dataclass(frozen=True)
class FactorFit:
    """Loadings (p x r), scores (n x r), and provenance tags.

    ``column_means`` records the demeaning offsets applied to the data.
    """

    loadings: np.ndarray
    scores: np.ndarray
    method: str
    source: str
    column_means: np.ndarray

    @property
    def n_factors(self) -> int:
        return self.loadings.shape[1]


def _demean(x) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InputError("data must be a 2-d observations-by-variables array")
    means = x.mean(axis=0)
    return x - means, means


def ols_factors_v1(x: np.ndarray, r: int, source: str = "SampleCov") -> FactorFit:
    """OLS solution normalized on the scores: F = sqrt(n) * top eigenvectors
    of XX', B = X'F / n.  By construction F'F / n = I_r."""
    xc, means = _demean(x)
    n, p = xc.shape
    if not 1 <= r <= min(n, p):
        raise InputError(f"need 1 <= r <= min(n, p) = {min(n, p)}, got r={r}")
    gram = SymMatrix(xc @ xc.T)
    eig = sym_eig(gram)
    scores = np.sqrt(n) * eig.vectors[:, :r]
    loadings = xc.T @ scores / n
    return FactorFit(loadings=loadings, scores=scores, method="OLS1",
                     source=source, column_means=means)


def ols_factors_v2(sigma_n: SymMatrix, x: np.ndarray, r: int,
                   source: str = "SampleCov") -> FactorFit:
    """OLS solution normalized on the loadings: B = U_r Lambda_r^(1/2) from
    the covariance spectrum.  B'B is diagonal.

    Scores are normalized so that sqrt(n) times them reproduces the
    Gram-eigenvector solution of :func:`ols_factors_v1` when ``sigma_n`` is
    the 1/n sample covariance of ``x`` (the mapping between the two OLS
    normalizations); the unit-variance regression scores are sqrt(n) times
    the returned ones.
    """
    xc, means = _demean(x)
    p = sigma_n.dim
    if xc.shape[1] != p:
        raise InputError("data column count must match covariance dimension")
    if not 1 <= r <= p:
        raise InputError(f"need 1 <= r <= p = {p}, got r={r}")
    eig = sym_eig(sigma_n)
    lam = eig.values[:r]
    if lam[-1] <= 0:
        raise DegenerateSpectrumError(
            f"eigenvalue {r} of the covariance is {lam[-1]:.3e}; "
            "need a strictly positive top-r spectrum"
        )
    loadings = eig.vectors[:, :r] * np.sqrt(lam)
    scores = xc @ eig.vectors[:, :r] / np.sqrt(lam) / np.sqrt(xc.shape[0])
    return FactorFit(loadings=loadings, scores=scores, method="OLS2",
                     source=source, column_means=means)


def _solve_pd(a: np.ndarray, b: np.ndarray, what: str) -> np.ndarray:
    """Solve a x = b for symmetric positive definite a via Cholesky."""
    try:
        c, low = scipy.linalg.cho_factor(a, lower=True)
    except np.linalg.LinAlgError:
        lam_min = float(np.linalg.eigvalsh(a).min())
        raise NumericError(
            f"{what} is not positive definite (lambda_min={lam_min:.6e})"
        ) from None
    return scipy.linalg.cho_solve((c, low), b)


def bartlett_scores(loadings: np.ndarray, sparse: SparseComponent, x: np.ndarray,
                    source: str = "SampleCov") -> FactorFit:
    """GLS factor scores: f_k = (B'S^-1 B)^-1 B' S^-1 x_k."""
    b = np.asarray(loadings, dtype=np.float64)
    xc, means = _demean(x)
    s = sparse.matrix.values
    if b.shape[0] != s.shape[0] or xc.shape[1] != s.shape[0]:
        raise InputError("loadings, sparse component and data dimensions disagree")
    sinv_b = _solve_pd(s, b, "sparse component")
    m = b.T @ sinv_b
    try:
        weights = np.linalg.solve(m, sinv_b.T)
    except np.linalg.LinAlgError:
        raise CollinearityError("B'S^-1B is singular; loadings are collinear") from None
    scores = xc @ weights.T
    return FactorFit(loadings=b, scores=scores, method="Bartlett",
                     source=source, column_means=means)


def thompson_scores(loadings: np.ndarray, sparse: SparseComponent, x: np.ndarray,
                    source: str = "SampleCov") -> FactorFit:
    """Posterior-mean factor scores: f_k = B'(BB' + S)^-1 x_k."""
    b = np.asarray(loadings, dtype=np.float64)
    xc, means = _demean(x)
    s = sparse.matrix.values
    if b.shape[0] != s.shape[0] or xc.shape[1] != s.shape[0]:
        raise InputError("loadings, sparse component and data dimensions disagree")
    total = b @ b.T + s
    weights = _solve_pd(total, b, "total covariance BB' + S")
    scores = xc @ weights
    return FactorFit(loadings=b, scores=scores, method="Thompson",
                     source=source, column_means=means)


def rotation_to_truth(eigvals: np.ndarray, scores_hat: np.ndarray,
                      scores_true: np.ndarray, loadings_true: np.ndarray) -> np.ndarray:
    """Rotation mapping true factors into the estimated factor space.

    H = (1/n) diag(eigvals)^-1 F_hat' F B'B, an r_hat x r matrix; losses of
    the form ||f_hat - H f|| are computed against it.
    """
    eigvals = np.atleast_1d(np.asarray(eigvals, dtype=np.float64))
    if np.any(eigvals == 0):
        raise InputError("rotation requires nonzero latent eigenvalues")
    scores_hat = np.asarray(scores_hat, dtype=np.float64)
    scores_true = np.asarray(scores_true, dtype=np.float64)
    loadings_true = np.asarray(loadings_true, dtype=np.float64)
    n = scores_true.shape[0]
    if scores_hat.shape[0] != n:
        raise InputError("estimated and true scores must cover the same observations")
    if scores_hat.shape[1] != eigvals.shape[0]:
        raise InputError("eigvals length must match the estimated factor count")
    h = (scores_hat.T @ scores_true) @ (loadings_true.T @ loadings_true)
    h = (h.T / eigvals).T / n
    if not np.all(np.isfinite(h)):
        raise NumericError("rotation matrix has non-finite entries")
    return h


def communalities(loadings: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Projections onto the estimated latent space: row k is (B f_k)'."""
    b = np.asarray(loadings, dtype=np.float64)
    f = np.asarray(scores, dtype=np.float64)
    if b.shape[1] != f.shape[1]:
        raise InputError("loadings and scores must share the factor dimension")
    return f @ b.T


def align_signs_to(reference: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Per-column sign flips making ``target`` columns correlate positively
    with ``reference``; used by equivalence tests, not by the estimators."""
    dots = np.sum(reference * target, axis=0)
    signs = np.where(dots < 0, -1.0, 1.0)
    return target * signs
