"""Dense symmetric linear-algebra primitives.

Everything downstream (solvers, baselines, scores, metrics) is built from the
four value types and five operations defined here: symmetric matrices with a
norm catalog, deterministic eigendecomposition, eigenvalue soft-thresholding
(SVT), entrywise off-diagonal soft-thresholding, and projection off a column
space.

All values are immutable after construction (backing arrays are marked
read-only) and all operations are pure, so they are safe to share across
concurrent tasks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .exceptions import InputError

__all__ = [
    "SymMatrix",
    "EigenPair",
    "LowRankComponent",
    "SparseComponent",
    "NORM_KINDS",
    "sym_eig",
    "matrix_norm",
    "svt",
    "soft_threshold_offdiag",
    "project_off_colspace",
]

# Dimension at which the partial-spectrum LAPACK driver starts to beat the
# full decomposition for SVT (measured on dense 100..200 matrices).
_SVT_SUBSET_MIN_DIM = 150


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SymMatrix:
    """Dense symmetric p x p matrix.

    Input is symmetrized as (M + M')/2 on construction; sample covariances
    can carry asymmetric rounding noise.
    """

    values: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.values, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InputError(f"expected a square matrix, got shape {a.shape}")
        if a.shape[0] < 1:
            raise InputError("matrix dimension must be >= 1")
        if not np.all(np.isfinite(a)):
            raise InputError("matrix has non-finite entries")
        a = (a + a.T) / 2.0
        object.__setattr__(self, "values", _readonly(a))

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def diagonal(self) -> np.ndarray:
        return np.diag(self.values).copy()


@dataclass(frozen=True)
class EigenPair:
    """Full eigendecomposition: descending eigenvalues, orthogonal vectors.

    Column i of ``vectors`` pairs with ``values[i]``.  Signs are fixed so the
    entry of largest absolute value in each column is positive, which makes
    the decomposition a deterministic function of the input.
    """

    values: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(self.values))
        object.__setattr__(self, "vectors", _readonly(self.vectors))


@dataclass(frozen=True)
class LowRankComponent:
    """Rank-r PSD matrix stored as a semi-orthogonal basis and eigenvalues.

    ``basis`` is p x r with orthonormal columns, ``eigvals`` holds r strictly
    positive values in descending order.  r = 0 (empty component) is legal.
    """

    basis: np.ndarray
    eigvals: np.ndarray

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=np.float64)
        eigvals = np.atleast_1d(np.asarray(self.eigvals, dtype=np.float64))
        if basis.ndim != 2:
            raise InputError("basis must be a 2-d array")
        if eigvals.shape != (basis.shape[1],):
            raise InputError("eigvals length must match basis column count")
        r = basis.shape[1]
        if r > 0:
            gram = basis.T @ basis
            if np.max(np.abs(gram - np.eye(r))) > 1e-10:
                raise InputError("basis columns are not orthonormal")
            if np.any(eigvals <= 0):
                raise InputError("eigvals must be strictly positive")
            if np.any(np.diff(eigvals) > 0):
                raise InputError("eigvals must be in descending order")
        object.__setattr__(self, "basis", _readonly(basis))
        object.__setattr__(self, "eigvals", _readonly(eigvals))

    @classmethod
    def empty(cls, p: int) -> "LowRankComponent":
        return cls(basis=np.zeros((p, 0)), eigvals=np.zeros(0))

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    def reconstruct(self) -> np.ndarray:
        """Return the dense p x p matrix U diag(d) U'."""
        return (self.basis * self.eigvals) @ self.basis.T

    def diagonal(self) -> np.ndarray:
        return np.einsum("ij,j,ij->i", self.basis, self.eigvals, self.basis)

    def trace(self) -> float:
        return float(np.sum(self.eigvals))


@dataclass(frozen=True)
class SparseComponent:
    """Symmetric matrix plus the explicit set of off-diagonal nonzeros.

    ``support`` is derived from the matrix at construction, as the frozenset
    of index pairs (i, j) with i < j and matrix[i, j] != 0.  Diagonal entries
    are not part of the support.
    """

    matrix: SymMatrix
    support: frozenset = field(init=False)

    def __post_init__(self):
        a = self.matrix.values
        iu, ju = np.nonzero(np.triu(a, k=1))
        object.__setattr__(self, "support", frozenset(zip(iu.tolist(), ju.tolist())))

    @property
    def dim(self) -> int:
        return self.matrix.dim

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    def offdiag_degrees(self) -> np.ndarray:
        """Number of off-diagonal nonzeros per row."""
        a = self.matrix.values
        nz = a != 0
        return nz.sum(axis=1) - np.diag(nz).astype(int)

    def min_offdiag_abs(self) -> float:
        """Smallest nonzero off-diagonal magnitude (inf if none)."""
        a = self.matrix.values
        vals = np.abs(a[np.triu_indices(self.dim, k=1)])
        vals = vals[vals > 0]
        return float(vals.min()) if vals.size else float("inf")


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip eigenvector columns so the largest-|entry| element is positive."""
    if vectors.shape[1] == 0:
        return vectors
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def sym_eig(m: SymMatrix) -> EigenPair:
    """Eigendecompose a symmetric matrix with deterministic conventions.

    Eigenvalues come out in descending order; each eigenvector is sign-fixed
    by the largest-absolute-entry-positive rule.  Ties in eigenvalues keep
    the stable ordering of the underlying LAPACK decomposition, so factor
    identification is only up to rotation in degenerate cases.
    """
    w, v = np.linalg.eigh(m.values)
    order = np.argsort(-w, kind="stable")
    w = w[order]
    v = _fix_signs(v[:, order])
    return EigenPair(values=w, vectors=v)


NORM_KINDS = (
    "l0",
    "l1",
    "l1_off",
    "frobenius",
    "max",
    "degree_max",
    "l1_row_max",
    "spectral",
    "nuclear",
)


def matrix_norm(m: SymMatrix, kind: str) -> float:
    """Evaluate one entry of the norm catalog.

    ``l1_off`` sums absolute off-diagonal entries over a single triangle.
    ``nuclear`` is the sum of eigenvalues (not singular values), which on a
    PSD matrix equals the trace; on indefinite matrices the two definitions
    differ and the eigenvalue-sum reading is used.  ``spectral`` is the
    operator 2-norm, max |eigenvalue|; for the PSD matrices the catalog was
    written for this is the top eigenvalue.
    """
    a = m.values
    if kind == "l0":
        return float(np.count_nonzero(a))
    if kind == "l1":
        return float(np.sum(np.abs(a)))
    if kind == "l1_off":
        return float(np.sum(np.abs(a[np.triu_indices(m.dim, k=1)])))
    if kind == "frobenius":
        return float(np.linalg.norm(a, "fro"))
    if kind == "max":
        return float(np.max(np.abs(a)))
    if kind == "degree_max":
        return float(np.max(np.count_nonzero(a, axis=1)))
    if kind == "l1_row_max":
        return float(np.max(np.sum(np.abs(a), axis=1)))
    if kind == "spectral":
        return float(np.max(np.abs(scipy.linalg.eigvalsh(a))))
    if kind == "nuclear":
        return float(np.sum(scipy.linalg.eigvalsh(a)))
    raise InputError(f"unknown norm kind {kind!r}; expected one of {NORM_KINDS}")


def spectral_norm(a: np.ndarray) -> float:
    """Operator 2-norm of a symmetric array (max absolute eigenvalue)."""
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(scipy.linalg.eigvalsh(a))))


def _svt_array(a: np.ndarray, psi: float) -> tuple[np.ndarray, np.ndarray]:
    """SVT on a raw symmetric array; returns (basis, shifted eigvals)."""
    p = a.shape[0]
    if psi > 0 and p >= _SVT_SUBSET_MIN_DIM:
        w, v = scipy.linalg.eigh(a, subset_by_value=(psi, np.inf))
    else:
        w, v = np.linalg.eigh(a)
        keep = w > psi
        w, v = w[keep], v[:, keep]
    order = np.argsort(-w, kind="stable")
    w = w[order] - psi
    v = _fix_signs(v[:, order])
    return v, w


def svt(m: SymMatrix, psi: float) -> LowRankComponent:
    """Eigenvalue soft-thresholding.

    Retains the eigenpairs of ``m`` whose eigenvalue exceeds ``psi`` and
    shifts the retained eigenvalues down by ``psi``.  May return an empty
    (rank-0) component.  With psi = 0 on a PSD matrix this is the full
    eigendecomposition.
    """
    if psi < 0:
        raise InputError("svt threshold must be nonnegative")
    basis, eigvals = _svt_array(m.values, psi)
    return LowRankComponent(basis=basis, eigvals=eigvals)


def _soft_offdiag_array(a: np.ndarray, rho: float) -> np.ndarray:
    """Entrywise soft-threshold off the diagonal; diagonal preserved."""
    out = np.sign(a) * np.maximum(np.abs(a) - rho, 0.0)
    np.fill_diagonal(out, np.diag(a))
    return out


def soft_threshold_offdiag(m: SymMatrix, rho: float) -> SparseComponent:
    """Shrink off-diagonal entries toward zero by ``rho``; keep the diagonal."""
    if rho < 0:
        raise InputError("soft threshold must be nonnegative")
    return SparseComponent(SymMatrix(_soft_offdiag_array(m.values, rho)))


def project_off_colspace(basis: np.ndarray, m: SymMatrix) -> SymMatrix:
    """Compute (I - UU') M (I - UU') for a semi-orthogonal U."""
    basis = np.asarray(basis, dtype=np.float64)
    r = basis.shape[1]
    if r > 0 and np.max(np.abs(basis.T @ basis - np.eye(r))) > 1e-8:
        raise InputError("basis columns are not orthonormal")
    a = m.values
    t = a - basis @ (basis.T @ a)
    t = t - (t @ basis) @ basis.T
    return SymMatrix(t)
