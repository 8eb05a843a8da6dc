"""Evaluation quantities: rotated losses, recovery flags, dispersion, summaries.

The rotation-based losses are invariant to consistent per-column sign flips
and permutations of the estimated factors (the rotation absorbs them), so no
alignment is applied before computing them; ``align_columns`` exists to
detect and log column swaps under near-tied eigenvalues.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError
from .kernels import LowRankComponent, SparseComponent, SymMatrix
from .scores import FactorFit

__all__ = [
    "LossReport",
    "ColumnAlignment",
    "align_columns",
    "loss_loadings",
    "loss_scores",
    "loss_common",
    "projection_error",
    "RecoveryFlags",
    "recovery_flags",
    "eigen_dispersion",
    "variability_stats",
    "SummaryStats",
    "summarize",
]


@dataclass(frozen=True)
class LossReport:
    loss_loadings: float
    loss_scores: float
    loss_common: float
    projection_error: float
    spectral_low_rank: float
    max_sparse: float
    spectral_sigma: float
    rank_hit: bool
    support_exact: bool
    sign_exact: bool


@dataclass(frozen=True)
class ColumnAlignment:
    permutation: tuple
    signs: tuple
    swapped: bool


def align_columns(scores_hat: np.ndarray, scores_true: np.ndarray) -> ColumnAlignment:
    """Greedy absolute-correlation matching of estimated to true columns.

    Diagnostic only: reports the permutation/sign pattern that best maps the
    estimated factor columns onto the true ones, and whether any column
    order swap occurred.
    """
    a = np.asarray(scores_hat, dtype=np.float64)
    b = np.asarray(scores_true, dtype=np.float64)
    r_hat, r = a.shape[1], b.shape[1]
    corr = np.zeros((r_hat, r))
    for i in range(r_hat):
        for j in range(r):
            da = np.linalg.norm(a[:, i])
            db = np.linalg.norm(b[:, j])
            corr[i, j] = 0.0 if da == 0 or db == 0 else float(a[:, i] @ b[:, j] / (da * db))
    perm = [-1] * r_hat
    signs = [1.0] * r_hat
    taken: set[int] = set()
    order = np.dstack(np.unravel_index(np.argsort(-np.abs(corr), axis=None), corr.shape))[0]
    for i, j in order:
        if perm[i] != -1 or j in taken:
            continue
        perm[i] = int(j)
        signs[i] = -1.0 if corr[i, j] < 0 else 1.0
        taken.add(int(j))
        if len(taken) == min(r_hat, r):
            break
    swapped = any(p != -1 and p != i for i, p in enumerate(perm))
    return ColumnAlignment(permutation=tuple(perm), signs=tuple(signs), swapped=swapped)


def loss_loadings(loadings_hat: np.ndarray, loadings_true: np.ndarray,
                  rotation: np.ndarray, over: str = "variables") -> float:
    """Max norm of the rows or columns of B_hat - B H'.

    ``over="variables"`` maxes the per-variable loading errors (rows);
    ``over="factors"`` maxes the per-factor loading-vector errors (columns),
    the convention whose magnitudes the published benchmark tables carry.
    """
    bh = np.asarray(loadings_hat, dtype=np.float64)
    bt = np.asarray(loadings_true, dtype=np.float64)
    if bh.shape[0] != bt.shape[0]:
        raise InputError("loadings must cover the same variables")
    diff = bh - bt @ np.asarray(rotation).T
    if over == "variables":
        return float(np.max(np.linalg.norm(diff, axis=1)))
    if over == "factors":
        return float(np.max(np.linalg.norm(diff, axis=0)))
    raise InputError(f"unknown axis {over!r}; expected 'variables' or 'factors'")


def loss_scores(scores_hat: np.ndarray, scores_true: np.ndarray,
                rotation: np.ndarray) -> float:
    """Max over observations of ||f_hat_k - H f_k||."""
    fh = np.asarray(scores_hat, dtype=np.float64)
    ft = np.asarray(scores_true, dtype=np.float64)
    if fh.shape[0] != ft.shape[0]:
        raise InputError("scores must cover the same observations")
    diff = fh - ft @ np.asarray(rotation).T
    return float(np.max(np.linalg.norm(diff, axis=1)))


def loss_common(loadings_hat, scores_hat, loadings_true, scores_true) -> float:
    """Max absolute entry of F_hat B_hat' - F B' (rotation cancels)."""
    prod_hat = np.asarray(scores_hat) @ np.asarray(loadings_hat).T
    prod_true = np.asarray(scores_true) @ np.asarray(loadings_true).T
    if prod_hat.shape != prod_true.shape:
        raise InputError("common-component matrices have mismatched shapes")
    return float(np.max(np.abs(prod_hat - prod_true)))


def projection_error(low_rank_hat: np.ndarray, truth) -> float:
    """Operator norm of the low-rank error projected onto the orthogonal
    complement of the true column space: ||(I - UU')(L_hat - L*)||_2.

    The projector is applied on one side only (the error matrix itself stays
    unprojected on the right), so the statistic is first order in the
    eigenvector perturbation.
    """
    err = np.asarray(low_rank_hat, dtype=np.float64) - truth.low_rank.reconstruct()
    u = truth.low_rank.basis
    proj = err - u @ (u.T @ err)
    return float(np.linalg.norm(proj, 2))


@dataclass(frozen=True)
class RecoveryFlags:
    rank_hit: bool
    support_exact: bool
    sign_exact: bool


def recovery_flags(low_rank: LowRankComponent, sparse: SparseComponent, truth) -> RecoveryFlags:
    """Exact rank / support / sign recovery indicators against a truth."""
    rank_hit = low_rank.rank == truth.low_rank.rank
    support_exact = sparse.support == truth.sparse.support
    union = sparse.support | truth.sparse.support
    a = sparse.matrix.values
    b = truth.sparse.matrix.values
    sign_exact = all(np.sign(a[i, j]) == np.sign(b[i, j]) for i, j in union)
    return RecoveryFlags(rank_hit=bool(rank_hit), support_exact=bool(support_exact),
                         sign_exact=bool(sign_exact))


def eigen_dispersion(m: SymMatrix, mu_true: float) -> float:
    """Mean squared deviation of the eigenvalues from a target mean:
    (1/p) sum_i (lambda_i - mu_true)^2."""
    lam = np.linalg.eigvalsh(m.values)
    return float(np.mean((lam - mu_true) ** 2))


def variability_stats(fit: FactorFit) -> dict:
    """Variability of loadings, scores and projections for a fitted model.

    var_B sums distances of loading rows from their mean row; var_f sums
    score norms; var_Bf sums distances of the factor projections from the
    mean projection.
    """
    b = fit.loadings
    f = fit.scores
    var_b = float(np.sum(np.linalg.norm(b - b.mean(axis=0), axis=1)))
    var_f = float(np.sum(np.linalg.norm(f, axis=1)))
    proj = f @ b.T
    var_bf = float(np.sum(np.linalg.norm(proj - proj.mean(axis=0), axis=1)))
    return {"var_B": var_b, "var_f": var_f, "var_Bf": var_bf}


@dataclass(frozen=True)
class SummaryStats:
    mean: float
    std: float
    median: float
    mad: float


def summarize(values) -> SummaryStats:
    """Mean, sample std (n-1), median, and unscaled MAD of a sequence."""
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise InputError("cannot summarize an empty sequence")
    med = float(np.median(v))
    return SummaryStats(
        mean=float(np.mean(v)),
        std=float(np.std(v, ddof=1)) if v.size > 1 else 0.0,
        median=med,
        mad=float(np.median(np.abs(v - med))),
    )
