"""Sparse factored approximations of symmetric PSD matrices.

Builds partial pivoted Cholesky, Vecchia (sparse inverse Cholesky), and
hybrid Cholesky+Vecchia approximations from counted entry oracles, measures
their quality through the Kaporin condition number, and uses them as
preconditioners for linear solves and log-determinant estimation.
"""

from .core import (
    DenseOracle,
    EntryOracle,
    PartialCholeskyFactor,
    PermutedOracle,
    PivotOrder,
    SparsityPattern,
    VecchiaFactor,
    factor_matvec,
    factor_solve,
    pointwise_distance_sq,
    reconstruct_dense,
    weighted_distance_sq,
)
from .errors import (
    Breakdown,
    CholvecError,
    ConfigError,
    EmptyDataset,
    NonSPDFactor,
    ParseError,
)
from .kaporin import (
    KaporinReport,
    kaporin_error_bounds,
    kappa_from_dense,
    kappa_from_factor,
)
from .kernels import (
    Dataset,
    KernelOracle,
    KernelSpec,
    kernel_matrix,
    kernel_oracle,
    kernel_response_vectors,
    load_csv,
    standardize,
    synthetic_clusters,
)
from .partial import (
    DistanceState,
    PivotChooser,
    build_partial_cholesky,
    choose_pivots,
    eta_objectives,
    pc_diag_log_kappa,
    verify_fps_ratio,
)
from .solvers import (
    LogdetEstimate,
    PcgTrace,
    diaz_preconditioner,
    direct_solve,
    frangella_preconditioner,
    lanczos_quadratic_form,
    logdet_stochastic,
    pcg,
)
from .sparsity import (
    SparsityChooser,
    build_residual_pattern,
    choose_candidates,
    choose_pattern_nn,
    choose_pattern_omp,
)
from .vecchia import (
    ResidualOracle,
    augment_pattern,
    build_hybrid,
    build_vecchia,
    check_equivalence,
    load_factor,
    logdet_direct,
    save_factor,
)

__version__ = "0.1.0"

__all__ = [
    "Breakdown",
    "CholvecError",
    "ConfigError",
    "Dataset",
    "DenseOracle",
    "DistanceState",
    "EmptyDataset",
    "EntryOracle",
    "KaporinReport",
    "KernelOracle",
    "KernelSpec",
    "LogdetEstimate",
    "NonSPDFactor",
    "ParseError",
    "PartialCholeskyFactor",
    "PcgTrace",
    "PermutedOracle",
    "PivotChooser",
    "PivotOrder",
    "ResidualOracle",
    "SparsityChooser",
    "SparsityPattern",
    "VecchiaFactor",
    "augment_pattern",
    "build_hybrid",
    "build_partial_cholesky",
    "build_residual_pattern",
    "build_vecchia",
    "check_equivalence",
    "choose_candidates",
    "choose_pattern_nn",
    "choose_pattern_omp",
    "choose_pivots",
    "diaz_preconditioner",
    "direct_solve",
    "eta_objectives",
    "factor_matvec",
    "factor_solve",
    "frangella_preconditioner",
    "kaporin_error_bounds",
    "kappa_from_dense",
    "kappa_from_factor",
    "kernel_matrix",
    "kernel_oracle",
    "kernel_response_vectors",
    "lanczos_quadratic_form",
    "load_csv",
    "load_factor",
    "logdet_direct",
    "logdet_stochastic",
    "pc_diag_log_kappa",
    "pcg",
    "pointwise_distance_sq",
    "reconstruct_dense",
    "save_factor",
    "standardize",
    "synthetic_clusters",
    "verify_fps_ratio",
    "weighted_distance_sq",
]
