"""Ground-truth generation and the Monte-Carlo replicate harness.

The generator builds a rank-r PSD component with equispaced eigenvalues on a
Gram-Schmidt random basis, residual variances from a Dirichlet draw scaled to
the residual trace budget and matched to the latent diagonal by rank order,
and off-diagonal residual entries drawn inside the Cauchy-Schwarz envelope
with all but the s largest magnitudes zeroed.  Data are Gaussian draws from
the factor model.

``run_replicates`` fits the registered estimators on freshly generated
truth + data per replicate and aggregates the requested metrics.  Replicates
use counter-split seeds, so serial and parallel execution produce identical
results; failures are recorded and excluded, and more than 20% failures
aborts the study.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    FactorcovError,
    GenerationError,
    InputError,
    NumericError,
    StudyError,
)
from .io import sample_covariance
from .kernels import LowRankComponent, SparseComponent, SymMatrix, spectral_norm
from .metrics import (
    eigen_dispersion,
    loss_common,
    loss_loadings,
    loss_scores,
    projection_error,
    recovery_flags,
    summarize,
)
from .poet import cross_validate_C, poet_fit
from .scores import bartlett_scores, rotation_to_truth, thompson_scores
from .solver import SolveOptions, default_grid, threshold_grid

__all__ = [
    "SimulationSetting",
    "GroundTruth",
    "StudyOptions",
    "StudyResult",
    "equispaced_eigenvalues",
    "random_orthobasis",
    "generate_truth",
    "sample_factors_and_noise",
    "sample_data",
    "setting_registry",
    "run_replicates",
    "ESTIMATORS",
]

# Off-diagonal residual draws are scaled inside the Cauchy-Schwarz envelope
# by this factor.  0.1 keeps the residual PD without repair in the benchmark
# settings and reproduces the published residual-covariance proportions.
DEPENDENCE_FACTOR = 0.1
_PD_REPAIR_SHRINK = 0.9
_PD_REPAIR_MAX = 50


@dataclass(frozen=True)
class SimulationSetting:
    """Parameters of one simulated regime.

    ``tau`` scales the total variance, ``theta`` is the fraction explained
    by the latent part, ``cond`` the latent condition number, ``s`` the
    off-diagonal nonzero count of the residual.
    """

    name: str
    p: int
    n: int
    r: int
    tau: float
    theta: float
    cond: float
    s: int
    seed: int = 0
    # Dirichlet concentration of the residual variances.  0.35 reproduces the
    # published residual spectral norms and (huge) condition numbers; a flat
    # simplex draw (1.0) gives a residual several times too tame.
    dirichlet_alpha: float = 0.35

    def __post_init__(self):
        if self.p < 2 or self.n < 2 or self.r < 1:
            raise InputError("p, n must be >= 2 and r >= 1")
        if self.dirichlet_alpha <= 0:
            raise InputError("dirichlet_alpha must be positive")
        if self.r > self.p:
            raise InputError("rank cannot exceed dimension")
        if not 0 < self.theta < 1:
            raise InputError("theta must lie in (0, 1)")
        if self.cond < 1:
            raise InputError("condition number must be >= 1")
        if self.tau <= 0:
            raise InputError("tau must be positive")
        max_pairs = self.p * (self.p - 1) // 2
        if not 0 <= self.s <= max_pairs:
            raise InputError(f"s must lie in [0, {max_pairs}]")

    @property
    def latent_trace(self) -> float:
        return self.tau * self.theta * self.p

    @property
    def residual_trace(self) -> float:
        return self.tau * (1.0 - self.theta) * self.p

    @property
    def nonzero_fraction(self) -> float:
        return self.s / (self.p * (self.p - 1) / 2)


@dataclass(frozen=True)
class GroundTruth:
    low_rank: LowRankComponent
    sparse: SparseComponent
    loadings: np.ndarray
    sigma: SymMatrix
    info: dict = field(default_factory=dict)

    @property
    def rank(self) -> int:
        return self.low_rank.rank


def equispaced_eigenvalues(r: int, cond: float, total: float) -> np.ndarray:
    """Arithmetic eigenvalue sequence with ratio ``cond`` and sum ``total``."""
    if r < 1:
        raise InputError("need r >= 1")
    if total <= 0:
        raise InputError("total must be positive")
    if cond < 1:
        raise InputError("condition number must be >= 1")
    if r == 1:
        if cond != 1:
            raise InputError("r=1 admits only condition number 1")
        return np.array([total])
    smallest = 2.0 * total / (r * (cond + 1.0))
    largest = cond * smallest
    return np.linspace(largest, smallest, r)


def random_orthobasis(p: int, r: int, rng: np.random.Generator) -> np.ndarray:
    """Orthonormal p x r basis from Gram-Schmidt on standard normal columns."""
    if r > p:
        raise InputError("r cannot exceed p")
    raw = rng.standard_normal((p, r))
    basis = np.empty((p, r))
    for j in range(r):
        v = raw[:, j].copy()
        for i in range(j):
            v -= (basis[:, i] @ v) * basis[:, i]
        norm = np.linalg.norm(v)
        if norm < 1e-12:  # essentially impossible for Gaussian draws
            raise GenerationError("Gram-Schmidt hit a dependent column")
        basis[:, j] = v / norm
    return basis


def _match_by_rank(values: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Permute ``values`` so its rank ordering matches that of ``reference``."""
    out = np.empty_like(values)
    out[np.argsort(reference)] = np.sort(values)
    return out


def generate_truth(setting: SimulationSetting, rng: np.random.Generator) -> GroundTruth:
    """Draw one ground-truth decomposition for a setting.

    Positive definiteness of the residual is enforced by multiplicatively
    shrinking the off-diagonal part (factor 0.9, at most 50 rounds); failing
    that, a GenerationError carries the last spectrum seen.
    """
    p, r = setting.p, setting.r
    lam = equispaced_eigenvalues(r, setting.cond, setting.latent_trace)
    basis = random_orthobasis(p, r, rng)
    low_rank = LowRankComponent(basis=basis, eigvals=lam)

    d_raw = rng.dirichlet(np.full(p, setting.dirichlet_alpha)) * setting.residual_trace
    d = _match_by_rank(d_raw, low_rank.diagonal())

    iu, ju = np.triu_indices(p, k=1)
    envelope = DEPENDENCE_FACTOR * np.sqrt(d[iu] * d[ju])
    vals = rng.uniform(-1.0, 1.0, iu.size) * envelope
    if setting.s < iu.size:
        order = np.argsort(-np.abs(vals), kind="stable")
        vals[order[setting.s:]] = 0.0

    repair_rounds = 0
    while True:
        s_mat = np.zeros((p, p))
        s_mat[iu, ju] = vals
        s_mat += s_mat.T
        np.fill_diagonal(s_mat, d)
        lam_min = float(np.linalg.eigvalsh(s_mat).min())
        if lam_min > 0:
            break
        repair_rounds += 1
        if repair_rounds > _PD_REPAIR_MAX:
            raise GenerationError(
                f"residual PD repair failed after {_PD_REPAIR_MAX} rounds "
                f"(lambda_min={lam_min:.3e}, s={setting.s}, p={p})"
            )
        vals = vals * _PD_REPAIR_SHRINK

    sparse = SparseComponent(SymMatrix(s_mat))
    sigma = SymMatrix(low_rank.reconstruct() + s_mat)
    loadings = basis * np.sqrt(lam)

    offdiag_abs = np.abs(s_mat[iu, ju])
    sigma_abs = np.abs(sigma.values)
    info = {
        "s_min_off": sparse.min_offdiag_abs(),
        "max_degree": int(sparse.offdiag_degrees().max()),
        "pd_repair_rounds": repair_rounds,
        "lambda_s": (float(np.linalg.eigvalsh(s_mat).min()), spectral_norm(s_mat)),
        "lambda_sigma": (
            float(np.linalg.eigvalsh(sigma.values).min()),
            spectral_norm(sigma.values),
        ),
        "residual_cov_fraction": float(
            offdiag_abs.sum() / (np.triu(sigma_abs).sum())
        ),
    }
    return GroundTruth(low_rank=low_rank, sparse=sparse, loadings=loadings,
                       sigma=sigma, info=info)


def sample_factors_and_noise(truth: GroundTruth, n: int,
                             rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw factor scores F (n x r) and residuals E (n x p) for the model."""
    if n < 2:
        raise InputError("need n >= 2")
    factors = rng.standard_normal((n, truth.rank))
    w, v = np.linalg.eigh(truth.sparse.matrix.values)
    root = v * np.sqrt(np.maximum(w, 0.0))
    noise = rng.standard_normal((n, truth.sparse.dim)) @ root.T
    return factors, noise


def sample_data(truth: GroundTruth, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n observations x_k = B f_k + eps_k with Gaussian factors/noise."""
    factors, noise = sample_factors_and_noise(truth, n, rng)
    return factors @ truth.loadings.T + noise


def setting_registry() -> tuple[SimulationSetting, ...]:
    """The four benchmark settings.

    The nonzero counts come from the published nonzero fractions; the scale
    parameter tau is back-solved from the latent spectra (tau=1 except the
    spiked second setting, where the latent trace 240 at theta=0.8, p=100
    forces tau=3).
    """
    def _make(name, p, n, r, theta, cond, pi_s, tau):
        return SimulationSetting(
            name=name, p=p, n=n, r=r, tau=tau, theta=theta, cond=cond,
            s=round(pi_s * p * (p - 1) / 2),
        )

    return (
        _make("1", 100, 1000, 4, 0.7, 2.0, 0.0238, 1.0),
        _make("2", 100, 1000, 3, 0.8, 4.0, 0.1172, 3.0),
        _make("3", 150, 150, 5, 0.8, 2.0, 0.0320, 1.0),
        _make("4", 200, 100, 6, 0.8, 2.0, 0.0366, 1.0),
    )


def get_setting(name: str) -> SimulationSetting:
    for setting in setting_registry():
        if setting.name == str(name):
            return setting
    raise InputError(f"unknown setting {name!r}; registry has 1..4")


# ---------------------------------------------------------------------------
# Replicate harness
# ---------------------------------------------------------------------------

SCORE_METHODS = ("bartlett", "thompson")

METRICS = (
    "loss_loadings_bartlett",
    "loss_scores_bartlett",
    "loss_common_bartlett",
    "loss_loadings_thompson",
    "loss_scores_thompson",
    "loss_common_thompson",
    "projection_error",
    "sigma_dispersion",
    "sample_loss",
    "rank",
    "rank_hit",
    "support_exact",
    "sign_exact",
    "strong_support_ok",
)


@dataclass(frozen=True)
class StudyOptions:
    """Knobs of the replicate harness.

    The threshold grids used by the penalized estimators are geometric and
    anchored on the top sample eigenvalue (psi) and on the off-diagonal
    magnitude scale (rho); sizes trade accuracy against runtime.
    """

    n_psi: int = 5
    n_rho: int = 3
    gap_search_max: int = 12
    solve: SolveOptions = field(default_factory=lambda: SolveOptions(max_iter=1500, tol=1e-4))
    poet_kind: str = "soft"
    poet_c_grid: tuple = tuple(np.linspace(0.0, 3.0, 13))
    poet_cv_folds: int = 10


def _study_psi_rho_grids(sigma_n: SymMatrix, opts: StudyOptions):
    """Study grids: the shared gap-anchored psi grid (see
    :func:`factorcov.solver.default_grid`) with a quantile-trimmed rho band."""
    psi_grid, _ = default_grid(sigma_n, opts.n_psi, opts.n_rho,
                               gap_search_max=opts.gap_search_max)
    lam1 = float(np.linalg.eigvalsh(sigma_n.values).max())
    off = np.abs(sigma_n.values[np.triu_indices(sigma_n.dim, k=1)])
    hi = float(np.quantile(off, 0.999))
    lo = float(np.quantile(off, 0.5))
    rho_grid = np.geomspace(max(lo, 1e-12 * lam1), max(hi, 2e-12 * lam1), opts.n_rho)
    return psi_grid, rho_grid


def _estimate_penalized(sigma_n, x, truth, setting, opts: StudyOptions):
    """Shared grid solve backing the 'alce' and 'unalce' estimator views."""
    psi_grid, rho_grid = _study_psi_rho_grids(sigma_n, opts)
    grid = threshold_grid(sigma_n, psi_grid, rho_grid, opts=opts.solve)
    return grid.selected_cell


def _estimator_poet(sigma_n, x, truth, setting, opts: StudyOptions):
    """Cross-validated POET, with C raised if needed to keep S invertible.

    Bartlett scores require the thresholded residual to be positive
    definite, so when the CV-selected constant leaves it indefinite the
    constant is grown geometrically until the residual becomes PD (the
    canonical constraint on the POET constant's admissible range).
    """
    c = cross_validate_C(x, setting.r, opts.poet_c_grid, folds=opts.poet_cv_folds,
                         kind=opts.poet_kind)
    fit = poet_fit(sigma_n, setting.r, c, n_obs=setting.n, kind=opts.poet_kind)
    attempts = 0
    while np.linalg.eigvalsh(fit.sparse.matrix.values).min() <= 0:
        attempts += 1
        if attempts > 40:
            raise GenerationError("POET residual stays indefinite for any C")
        c = 1.25 * max(c, 0.05)
        fit = poet_fit(sigma_n, setting.r, c, n_obs=setting.n, kind=opts.poet_kind)
    return fit


ESTIMATORS = ("unalce", "alce", "poet")


def _replicate_records(setting: SimulationSetting, index: int, seed_seq,
                       estimators, metrics, opts: StudyOptions):
    score_failures: list[tuple] = []
    rng = np.random.default_rng(seed_seq)
    truth = generate_truth(setting, rng)
    factors_true, noise = sample_factors_and_noise(truth, setting.n, rng)
    x = factors_true @ truth.loadings.T + noise
    sigma_n = sample_covariance(x - x.mean(axis=0), "unbiased")
    mu_sigma = float(np.trace(truth.sigma.values)) / setting.p
    # the rotation uses the top sample eigenvalues for every estimator (one
    # common formula), not each estimator's own latent spectrum
    sample_eigvals = np.linalg.eigvalsh(sigma_n.values)[::-1]

    views: dict[str, dict] = {}
    if "unalce" in estimators or "alce" in estimators:
        cell = _estimate_penalized(sigma_n, x, truth, setting, opts)
        refit = cell.refit
        if "unalce" in estimators:
            views["unalce"] = {
                "low_rank": refit.low_rank,
                "sparse": refit.sparse,
                "loadings": refit.loadings(),
                "rho": cell.rho,
            }
        if "alce" in estimators:
            fit = cell.fit
            views["alce"] = {
                "low_rank": fit.low_rank,
                "sparse": fit.sparse,
                "loadings": fit.low_rank.basis * np.sqrt(fit.low_rank.eigvals),
                "rho": cell.rho,
            }
    if "poet" in estimators:
        pf = _estimator_poet(sigma_n, x, truth, setting, opts)
        views["poet"] = {
            "low_rank": pf.low_rank,
            "sparse": pf.sparse,
            "loadings": pf.loadings(),
            "rho": None,
        }

    records = []
    for name in estimators:
        view = views[name]
        low_rank, sparse = view["low_rank"], view["sparse"]
        values: dict[str, float] = {}

        for method in SCORE_METHODS:
            wanted = [m for m in metrics if m.endswith("_" + method)]
            if not wanted:
                continue
            score_fn = bartlett_scores if method == "bartlett" else thompson_scores
            try:
                fit = score_fn(view["loadings"], sparse, x, source=name.upper())
            except NumericError as exc:
                # a non-PD sparse part blocks this score method only (the
                # un-refit estimator carries no PD guarantee); the metric is
                # excluded for this estimator and the aggregation's n_ok
                # column records the gap
                score_failures.append((index, f"{name}/{method}: {exc}"))
                continue
            rot = rotation_to_truth(sample_eigvals[: low_rank.rank], fit.scores,
                                    factors_true, truth.loadings)
            values[f"loss_loadings_{method}"] = loss_loadings(
                fit.loadings, truth.loadings, rot)
            values[f"loss_scores_{method}"] = loss_scores(
                fit.scores, factors_true, rot)
            values[f"loss_common_{method}"] = loss_common(
                fit.loadings, fit.scores, truth.loadings, factors_true)

        values["projection_error"] = projection_error(low_rank.reconstruct(), truth)
        sigma_hat = SymMatrix(low_rank.reconstruct() + sparse.matrix.values)
        values["sigma_dispersion"] = eigen_dispersion(sigma_hat, mu_sigma)
        values["sample_loss"] = spectral_norm(sigma_hat.values - sigma_n.values)
        flags = recovery_flags(low_rank, sparse, truth)
        values["rank"] = float(low_rank.rank)
        values["rank_hit"] = float(flags.rank_hit)
        values["support_exact"] = float(flags.support_exact)
        values["sign_exact"] = float(flags.sign_exact)
        values["strong_support_ok"] = float(
            _strong_support_ok(sparse, truth, view["rho"]))

        for metric in metrics:
            if metric in values:
                records.append({
                    "replicate": index,
                    "estimator": name,
                    "metric": metric,
                    "value": values[metric],
                })
    return records, score_failures


def _strong_support_ok(sparse: SparseComponent, truth: GroundTruth, rho) -> bool:
    """No false negatives among truth entries with |s*_ij| >= 2*rho.

    For estimators without an explicit off-diagonal threshold (POET) the
    check uses the smallest recovered magnitude as the reference level.
    """
    if rho is None:
        rho = sparse.min_offdiag_abs()
        if not np.isfinite(rho):
            rho = 0.0
    t = truth.sparse.matrix.values
    strong = {
        (i, j) for i, j in truth.sparse.support if abs(t[i, j]) >= 2.0 * rho
    }
    return strong <= sparse.support


def _run_replicate_job(args):
    setting, index, seed_seq, estimators, metrics, opts = args
    try:
        records, score_failures = _replicate_records(
            setting, index, seed_seq, estimators, metrics, opts)
        return index, records, score_failures, None
    except (FactorcovError, np.linalg.LinAlgError) as exc:
        return index, [], [], f"{type(exc).__name__}: {exc}"


@dataclass(frozen=True)
class StudyResult:
    """Per-replicate records plus two failure channels.

    ``failures`` lists whole replicates that were excluded; ``score_failures``
    lists (replicate, detail) pairs where only one estimator's score method
    was blocked (e.g. a non-PD sparse part) and the remaining metrics of the
    replicate were kept.
    """

    setting: SimulationSetting
    n_replicates: int
    records: tuple
    failures: tuple
    score_failures: tuple = ()

    def values(self, estimator: str, metric: str) -> np.ndarray:
        return np.array([
            rec["value"]
            for rec in self.records
            if rec["estimator"] == estimator and rec["metric"] == metric
        ])

    def aggregate(self) -> list[dict]:
        rows = []
        seen = []
        for rec in self.records:
            key = (rec["estimator"], rec["metric"])
            if key not in seen:
                seen.append(key)
        for estimator, metric in seen:
            vals = self.values(estimator, metric)
            stats = summarize(vals)
            rows.append({
                "setting": self.setting.name,
                "estimator": estimator,
                "metric": metric,
                "mean": stats.mean,
                "std": stats.std,
                "median": stats.median,
                "mad": stats.mad,
                "n_ok": int(vals.size),
            })
        return rows


def run_replicates(
    setting: SimulationSetting,
    n_replicates: int,
    estimators=("unalce", "poet"),
    metrics=METRICS,
    seed: int | None = None,
    jobs: int = 1,
    opts: StudyOptions = StudyOptions(),
) -> StudyResult:
    """Run a replicate study and aggregate the requested metrics.

    Per-replicate seeds are spawned from ``seed`` (default: the setting's
    own seed) with a counter-based split, so results do not depend on
    ``jobs``.  Replicates that raise are excluded and reported; more than
    20% failures raises StudyError.
    """
    if n_replicates < 1:
        raise InputError("need at least one replicate")
    unknown = [e for e in estimators if e not in ESTIMATORS]
    if unknown:
        raise InputError(f"unknown estimators {unknown}; available: {ESTIMATORS}")
    bad_metrics = [m for m in metrics if m not in METRICS]
    if bad_metrics:
        raise InputError(f"unknown metrics {bad_metrics}; available: {METRICS}")
    if seed is None:
        seed = setting.seed
    children = np.random.SeedSequence(seed).spawn(n_replicates)
    args = [
        (setting, i, children[i], tuple(estimators), tuple(metrics), opts)
        for i in range(n_replicates)
    ]
    outcomes = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_replicate_job, args))
    else:
        outcomes = [_run_replicate_job(a) for a in args]
    outcomes.sort(key=lambda t: t[0])

    records: list[dict] = []
    failures: list[tuple] = []
    score_failures: list[tuple] = []
    for index, recs, partial, error in outcomes:
        if error is not None:
            failures.append((index, error))
        else:
            records.extend(recs)
            score_failures.extend(partial)
    if len(failures) > 0.2 * n_replicates:
        raise StudyError(
            f"{len(failures)}/{n_replicates} replicates failed: {failures[:5]}"
        )
    return StudyResult(setting=setting, n_replicates=n_replicates,
                       records=tuple(records), failures=tuple(failures),
                       score_failures=tuple(score_failures))
