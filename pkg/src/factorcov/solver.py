"""Penalized low-rank + sparse covariance decomposition.

Fits the composite objective

    1/2 ||Sigma_n - (L + S)||_F^2  +  2*psi * tr(L)    [L PSD]
                                   +  2*rho * sum_{i != j} |S_ij|

by accelerated proximal gradient with step size 1/2 (the Lipschitz constant
of the coupled smooth term is 2), so each iteration applies exactly one
eigenvalue soft-thresholding at level ``psi`` to the L-directed gradient
iterate and one off-diagonal soft-thresholding at level ``rho`` to the
S-directed iterate.  ``psi`` and ``rho`` are therefore the effective
per-step thresholds.  The S diagonal is unpenalized.

On top of the penalized fit this module provides the unshrinking refit
(UNALCE: eigenvalues of L lifted back up on the same eigenbasis, S diagonal
rebalanced to preserve the fitted total diagonal), threshold-grid model
selection, and identifiability diagnostics.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputError, NumericError, RefitError, SelectionError
from .kernels import (
    LowRankComponent,
    SparseComponent,
    SymMatrix,
    _soft_offdiag_array,
    _svt_array,
    spectral_norm,
)

__all__ = [
    "SolveOptions",
    "PenalizedFit",
    "UnalceFit",
    "GridCell",
    "ThresholdGridResult",
    "ThresholdSuggestion",
    "solve_penalized",
    "unalce_refit",
    "theoretical_thresholds",
    "incoherence_proxy",
    "max_degree",
    "threshold_grid",
    "default_grid",
    "fit_diagnostics",
]


@dataclass(frozen=True)
class SolveOptions:
    max_iter: int = 5000
    tol: float = 1e-6
    accel: bool = True


@dataclass(frozen=True)
class PenalizedFit:
    """Stationary pair of the penalized objective.

    ``pre_low_rank`` / ``pre_sparse`` are the pre-threshold gradient iterates
    of the final accepted iteration (the inputs of the last SVT and
    soft-threshold applications).  ``objective_trace`` is non-increasing;
    ``restarts`` records the iterations where the momentum was reset.
    """

    low_rank: LowRankComponent
    sparse: SparseComponent
    pre_low_rank: SymMatrix
    pre_sparse: SymMatrix
    psi: float
    rho: float
    iterations: int
    converged: bool
    objective_trace: tuple
    restarts: tuple = ()

    @property
    def rank(self) -> int:
        return self.low_rank.rank

    def sigma(self) -> SymMatrix:
        """Fitted covariance L + S."""
        return SymMatrix(self.low_rank.reconstruct() + self.sparse.matrix.values)


@dataclass(frozen=True)
class UnalceFit:
    """Unshrunk refit of a penalized fit.

    Shares the eigenbasis and off-diagonal sparse entries with the source
    fit; eigenvalues are lifted by ``lift`` and the S diagonal absorbs the
    difference so that diag(L) + diag(S) stays equal to the source fit's
    fitted diagonal (hence equal traces).
    """

    low_rank: LowRankComponent
    sparse: SparseComponent
    lift: float
    source: PenalizedFit

    @property
    def rank(self) -> int:
        return self.low_rank.rank

    def sigma(self) -> SymMatrix:
        return SymMatrix(self.low_rank.reconstruct() + self.sparse.matrix.values)

    def loadings(self) -> np.ndarray:
        """Implied loading matrix U sqrt(d)."""
        return self.low_rank.basis * np.sqrt(self.low_rank.eigvals)


def _objective(resid: np.ndarray, trace_l: float, s: np.ndarray, psi: float, rho: float) -> float:
    # The composite objective the iteration actually minimizes: thresholding
    # off-diagonal entries by rho at step 1/2 prices each entry of the full
    # (two-triangle) matrix at 2*rho, i.e. 4*rho per unordered pair.
    offdiag_l1 = np.sum(np.abs(s)) - np.sum(np.abs(np.diag(s)))
    return float(
        0.5 * np.sum(resid * resid)
        + 2.0 * psi * trace_l
        + 2.0 * rho * offdiag_l1
    )


def solve_penalized(
    sigma_n: SymMatrix,
    psi: float,
    rho: float,
    opts: SolveOptions = SolveOptions(),
    start: tuple[np.ndarray, np.ndarray] | None = None,
) -> PenalizedFit:
    """Fit the penalized decomposition of a sample covariance matrix.

    Parameters
    ----------
    sigma_n : SymMatrix
        Sample covariance (or any symmetric target).
    psi, rho : float
        Positive eigenvalue / off-diagonal thresholds applied at each step.
    opts : SolveOptions
        ``accel`` enables the momentum scheme with restart on objective
        increase; convergence is declared when the larger of the two
        per-block iterate changes falls below ``tol * max(1, ||sigma_n||_F)``.
    start : (L0, S0) arrays, optional
        Warm start; defaults to (0, 0).

    Returns a fit with ``converged=False`` (not an exception) when
    ``max_iter`` is exhausted.  Non-finite iterates raise NumericError.
    """
    if psi <= 0 or rho <= 0:
        raise InputError("psi and rho must be strictly positive")
    target = sigma_n.values
    p = sigma_n.dim
    scale = max(1.0, float(np.linalg.norm(target, "fro")))

    if start is not None:
        l_cur, s_cur = (np.array(start[0], dtype=np.float64), np.array(start[1], dtype=np.float64))
        if l_cur.shape != (p, p) or s_cur.shape != (p, p):
            raise InputError("warm start blocks must be p x p")
    else:
        l_cur = np.zeros((p, p))
        s_cur = np.zeros((p, p))
    l_prev, s_prev = l_cur, s_cur

    resid = target - l_cur - s_cur
    obj_cur = _objective(resid, float(np.trace(l_cur)), s_cur, psi, rho)
    trace = [obj_cur]
    restarts: list[int] = []

    t_cur = 1.0
    pre_l = l_cur.copy()
    pre_s = s_cur.copy()
    converged = False
    iterations = 0

    for it in range(1, opts.max_iter + 1):
        iterations = it
        if opts.accel:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_cur * t_cur))
            beta = (t_cur - 1.0) / t_next
        else:
            t_next, beta = 1.0, 0.0

        for attempt in (0, 1):
            if attempt == 1:
                # Momentum overshoot: restart from the last accepted iterate.
                t_next, beta = 1.0, 0.0
                restarts.append(it)
            y_l = l_cur + beta * (l_cur - l_prev)
            y_s = s_cur + beta * (s_cur - s_prev)
            grad = 0.5 * (y_l + y_s - target)
            cand_pre_l = y_l - grad
            cand_pre_s = y_s - grad
            if not np.all(np.isfinite(cand_pre_l)):
                raise NumericError(f"non-finite iterate at iteration {it}")
            basis, eigvals = _svt_array((cand_pre_l + cand_pre_l.T) / 2.0, psi)
            l_new = (basis * eigvals) @ basis.T
            s_new = _soft_offdiag_array((cand_pre_s + cand_pre_s.T) / 2.0, rho)
            obj_new = _objective(target - l_new - s_new, float(np.sum(eigvals)), s_new, psi, rho)
            if not opts.accel or obj_new <= obj_cur + 1e-12 * max(1.0, abs(obj_cur)):
                break

        pre_l, pre_s = cand_pre_l, cand_pre_s
        delta = max(
            float(np.linalg.norm(l_new - l_cur, "fro")),
            float(np.linalg.norm(s_new - s_cur, "fro")),
        )
        l_prev, s_prev = l_cur, s_cur
        l_cur, s_cur = l_new, s_new
        t_cur = t_next
        obj_cur = obj_new
        trace.append(obj_new)
        last_component = LowRankComponent(basis=basis, eigvals=eigvals)
        if delta <= opts.tol * scale:
            converged = True
            break

    if iterations == 0:  # max_iter == 0 edge: report the start point
        last_component = LowRankComponent.empty(p)

    return PenalizedFit(
        low_rank=last_component,
        sparse=SparseComponent(SymMatrix(s_cur)),
        pre_low_rank=SymMatrix(pre_l),
        pre_sparse=SymMatrix(pre_s),
        psi=psi,
        rho=rho,
        iterations=iterations,
        converged=converged,
        objective_trace=tuple(trace),
        restarts=tuple(restarts),
    )


def unalce_refit(fit: PenalizedFit, lift: float | None = None) -> UnalceFit:
    """Lift the fitted eigenvalues and rebalance the sparse diagonal.

    ``lift`` defaults to the fit's own psi (the natural un-shrinkage
    amount); any nonnegative value is legal.  The off-diagonal entries and
    support of S are preserved bitwise; the diagonal of S is set to
    diag(L + S) - diag(L_lifted), which keeps the fitted total diagonal
    (and hence the trace) unchanged.
    """
    if fit.rank == 0:
        raise RefitError("cannot refit a rank-0 fit: nothing to un-shrink")
    if lift is None:
        lift = fit.psi
    if lift < 0:
        raise InputError("lift must be nonnegative")
    lifted = LowRankComponent(basis=fit.low_rank.basis, eigvals=fit.low_rank.eigvals + lift)
    fitted_diag = fit.low_rank.diagonal() + fit.sparse.diagonal()
    s_matrix = fit.sparse.matrix.values.copy()
    np.fill_diagonal(s_matrix, fitted_diag - lifted.diagonal())
    return UnalceFit(
        low_rank=lifted,
        sparse=SparseComponent(SymMatrix(s_matrix)),
        lift=float(lift),
        source=fit,
    )


@dataclass(frozen=True)
class ThresholdSuggestion:
    psi: float
    rho_range: tuple
    empty_range: bool


def theoretical_thresholds(
    p: int, n: int, alpha: float, xi_t: float, mu_omega: float
) -> ThresholdSuggestion:
    """Threshold levels implied by the identifiability measures.

    psi = p**alpha / (xi_t * sqrt(n)); the admissible ratio rho/psi lies in
    [9*xi_t, 1/(6*mu_omega)].  Warns (does not fail) when that interval is
    empty.  Diagnostic guidance only; correctness never depends on it.
    """
    if p <= 0 or n <= 0 or xi_t <= 0 or mu_omega <= 0:
        raise InputError("all threshold inputs must be positive")
    if not (0 < alpha <= 1):
        raise InputError("alpha must lie in (0, 1]")
    psi = p**alpha / (xi_t * np.sqrt(n))
    lo = 9.0 * xi_t * psi
    hi = psi / (6.0 * mu_omega)
    empty = lo > hi
    if empty:
        warnings.warn(
            "empty admissible rho interval: 9*xi_t exceeds 1/(6*mu_omega)",
            stacklevel=2,
        )
    return ThresholdSuggestion(psi=float(psi), rho_range=(float(lo), float(hi)), empty_range=empty)


def incoherence_proxy(component: LowRankComponent) -> float:
    """Upper-bound proxy for the low-rank identifiability measure.

    Twice the largest row leverage of the eigenbasis: 2 * max_i ||U_i.||^2.
    Equals 2 for a maximally coherent (coordinate-aligned) basis and 2r/p
    for a perfectly incoherent one.
    """
    if component.rank < 1:
        raise InputError("incoherence proxy requires rank >= 1")
    leverages = np.sum(component.basis**2, axis=1)
    return float(2.0 * np.max(leverages))


def max_degree(component: SparseComponent) -> int:
    """Max over rows of the off-diagonal nonzero count (sparsity measure proxy)."""
    degrees = component.offdiag_degrees()
    return int(degrees.max()) if degrees.size else 0


@dataclass(frozen=True)
class GridCell:
    psi: float
    rho: float
    fit: PenalizedFit
    refit: UnalceFit | None
    admissible: bool
    reason: str | None
    criterion: float
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ThresholdGridResult:
    """All grid cells in sweep order plus the selected index.

    The selection rule is named ``min-sample-spectral-loss``: among
    admissible cells (refit S positive definite and rank >= 1) pick the
    smallest spectral-norm distance between the refit covariance and the
    input; exact ties break toward larger psi, then larger rho.
    """

    cells: tuple
    selected: int
    criterion_name: str = "min-sample-spectral-loss"

    @property
    def selected_cell(self) -> GridCell:
        return self.cells[self.selected]

    @property
    def criterion_values(self) -> tuple:
        return tuple(c.criterion for c in self.cells)


def _evaluate_cell(sigma_n: SymMatrix, psi: float, rho: float, fit: PenalizedFit,
                   lift: float | None) -> GridCell:
    diagnostics: dict = {"rank": fit.rank, "iterations": fit.iterations,
                         "converged": fit.converged}
    if fit.rank == 0:
        return GridCell(psi=psi, rho=rho, fit=fit, refit=None, admissible=False,
                        reason="rank 0", criterion=float("nan"), diagnostics=diagnostics)
    refit = unalce_refit(fit, lift)
    lam_min_s = float(np.linalg.eigvalsh(refit.sparse.matrix.values).min())
    diagnostics["lambda_min_s"] = lam_min_s
    diff = refit.sigma().values - sigma_n.values
    loss_spectral = spectral_norm(diff)
    diagnostics["sample_loss_spectral"] = loss_spectral
    diagnostics["sample_loss_frob_rel"] = float(
        np.linalg.norm(diff, "fro") / max(np.linalg.norm(sigma_n.values, "fro"), 1e-300)
    )
    if lam_min_s <= 0:
        return GridCell(psi=psi, rho=rho, fit=fit, refit=refit, admissible=False,
                        reason=f"refit S not positive definite (lambda_min={lam_min_s:.3e})",
                        criterion=float("nan"), diagnostics=diagnostics)
    return GridCell(psi=psi, rho=rho, fit=fit, refit=refit, admissible=True,
                    reason=None, criterion=loss_spectral, diagnostics=diagnostics)


def threshold_grid(
    sigma_n: SymMatrix,
    psi_grid,
    rho_grid,
    opts: SolveOptions = SolveOptions(),
    warm_start: bool = True,
    lift: float | None = None,
) -> ThresholdGridResult:
    """Fit every (psi, rho) pair and select by minimal sample spectral loss.

    The sweep runs psi descending, rho descending within psi, warm-starting
    each cell from its predecessor when ``warm_start`` is set (the serial
    mode; cold starts give the same fits up to solver tolerance and are the
    mode to use when cells are evaluated concurrently).
    """
    psi_values = sorted({float(x) for x in np.atleast_1d(psi_grid)}, reverse=True)
    rho_values = sorted({float(x) for x in np.atleast_1d(rho_grid)}, reverse=True)
    if not psi_values or not rho_values:
        raise InputError("threshold grids must be non-empty")
    if psi_values[-1] <= 0 or rho_values[-1] <= 0:
        raise InputError("threshold grids must be strictly positive")

    cells = []
    carry: tuple[np.ndarray, np.ndarray] | None = None
    for psi in psi_values:
        row_carry = carry
        for rho in rho_values:
            fit = solve_penalized(sigma_n, psi, rho, opts,
                                  start=row_carry if warm_start else None)
            row_carry = (fit.low_rank.reconstruct(), fit.sparse.matrix.values)
            if rho == rho_values[0]:
                carry = row_carry  # next psi row starts from this row's first cell
            cells.append(_evaluate_cell(sigma_n, psi, rho, fit, lift))

    admissible = [i for i, c in enumerate(cells) if c.admissible]
    if not admissible:
        detail = "; ".join(
            f"(psi={c.psi:.4g}, rho={c.rho:.4g}): {c.reason}" for c in cells
        )
        raise SelectionError(f"no admissible fit in threshold grid: {detail}")
    selected = min(admissible, key=lambda i: (cells[i].criterion, -cells[i].psi, -cells[i].rho))
    return ThresholdGridResult(cells=tuple(cells), selected=selected)


def default_grid(sigma_n: SymMatrix, n_psi: int = 20, n_rho: int = 20,
                 gap_search_max: int = 12):
    """Data-driven default threshold grids.

    The lower psi anchor sits at 0.45x the top noise eigenvalue, located by
    the largest eigenvalue-ratio gap in the input spectrum: below roughly a
    third of that edge the eigenvalue thresholding starts retaining bulk
    directions and the fitted rank inflates.  The upper anchor probes rank
    collapse near the top eigenvalue.  rho spans the off-diagonal magnitude
    scale of the input, from its median to just above its maximum.
    """
    lam = np.linalg.eigvalsh(sigma_n.values)[::-1]
    lam1 = float(lam[0])
    if lam1 <= 0:
        raise InputError("input matrix has no positive spectrum to anchor a grid")
    r_max = max(1, min(sigma_n.dim - 2, gap_search_max))
    ratios = lam[:r_max] / np.maximum(lam[1 : r_max + 1], 1e-12 * lam1)
    noise_edge = float(lam[int(np.argmax(ratios)) + 1])
    psi_lo = max(0.45 * noise_edge, 1e-8 * lam1)
    psi_hi = max(lam1 / 1.5, psi_lo * 1.0001)
    psi_grid = np.geomspace(psi_lo, psi_hi, n_psi)
    off = np.abs(sigma_n.values[np.triu_indices(sigma_n.dim, k=1)])
    off_hi = float(off.max()) if off.size else lam1
    off_med = float(np.median(off)) if off.size else lam1 / 100.0
    lo = max(off_med, 1e-12 * lam1)
    hi = max(1.05 * off_hi, lo * 1.0001)
    rho_grid = np.geomspace(lo, hi, n_rho)
    return psi_grid, rho_grid


def fit_diagnostics(fit: PenalizedFit, refit: UnalceFit | None, truth=None) -> dict:
    """Positive-definiteness flags and (optional) losses against a truth.

    ``truth`` is any object with ``low_rank``, ``sparse`` and ``sigma``
    attributes (e.g. a simulation ground truth).  Loss entries are reported
    for logging; the theory's bounds involve unknown constants and are not
    asserted anywhere.
    """
    report: dict = {"psi": fit.psi, "rho": fit.rho, "rank": fit.rank,
                    "iterations": fit.iterations, "converged": fit.converged}
    if refit is not None:
        lam_s = np.linalg.eigvalsh(refit.sparse.matrix.values)
        lam_sigma = np.linalg.eigvalsh(refit.sigma().values)
        report.update(
            lambda_min_s=float(lam_s.min()),
            lambda_min_sigma=float(lam_sigma.min()),
            s_positive_definite=bool(lam_s.min() > 0),
            sigma_positive_definite=bool(lam_sigma.min() > 0),
        )
    if truth is not None and refit is not None:
        l_err = refit.low_rank.reconstruct() - truth.low_rank.reconstruct()
        s_err = refit.sparse.matrix.values - truth.sparse.matrix.values
        sig_err = refit.sigma().values - truth.sigma.values
        from .kernels import project_off_colspace  # local to avoid shadowing

        proj = project_off_colspace(truth.low_rank.basis, SymMatrix(l_err))
        report.update(
            spectral_loss_low_rank=spectral_norm(l_err),
            max_loss_sparse=float(np.max(np.abs(s_err))),
            spectral_loss_sigma=spectral_norm(sig_err),
            projection_loss=spectral_norm(proj.values),
        )
    return report
