"""Low-rank plus sparse covariance estimation for approximate factor models.

Public surface: symmetric-matrix kernels, the penalized decomposition solver
with its unshrinking refit and threshold-grid selection, the POET baseline,
OLS/Bartlett/Thompson factor scores, evaluation metrics, the simulation lab,
and text I/O.  The ``factorcov`` command exposes the same workflows on the
command line.
"""

__version__ = "0.1.0"

from .exceptions import (
    CollinearityError,
    DegenerateSpectrumError,
    FactorcovError,
    GenerationError,
    InputError,
    NumericError,
    RefitError,
    SelectionError,
    StudyError,
)
from .kernels import (
    EigenPair,
    LowRankComponent,
    NORM_KINDS,
    SparseComponent,
    SymMatrix,
    matrix_norm,
    project_off_colspace,
    soft_threshold_offdiag,
    svt,
    sym_eig,
)
from .solver import (
    GridCell,
    PenalizedFit,
    SolveOptions,
    ThresholdGridResult,
    ThresholdSuggestion,
    UnalceFit,
    default_grid,
    fit_diagnostics,
    incoherence_proxy,
    max_degree,
    solve_penalized,
    theoretical_thresholds,
    threshold_grid,
    unalce_refit,
)
from .poet import PoetFit, cross_validate_C, estimate_rank_heuristic, poet_fit
from .scores import (
    FactorFit,
    bartlett_scores,
    communalities,
    ols_factors_v1,
    ols_factors_v2,
    rotation_to_truth,
    thompson_scores,
)
from .metrics import (
    ColumnAlignment,
    LossReport,
    RecoveryFlags,
    SummaryStats,
    align_columns,
    eigen_dispersion,
    loss_common,
    loss_loadings,
    loss_scores,
    projection_error,
    recovery_flags,
    summarize,
    variability_stats,
)
from .simulate import (
    ESTIMATORS,
    METRICS,
    GroundTruth,
    SimulationSetting,
    StudyOptions,
    StudyResult,
    equispaced_eigenvalues,
    generate_truth,
    get_setting,
    random_orthobasis,
    run_replicates,
    sample_data,
    sample_factors_and_noise,
    setting_registry,
)
from .io import (
    DatasetSpec,
    LoadedMatrix,
    load_fit,
    load_matrix,
    sample_covariance,
    save_fit,
    save_matrix_csv,
    save_study_csv,
)
