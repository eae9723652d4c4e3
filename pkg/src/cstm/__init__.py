"""Coupled matrix-tensor factorization with a multi-kernel max-margin classifier.

Two stages: each (tensor, matrix) sample is jointly factorized with shared
third/second-mode components (:mod:`cstm.acmtf`), then a kernel machine over
the individual and shared factors is trained by solving a dual quadratic
program (:mod:`cstm.stm`).  :mod:`cstm.experiments` ships the synthetic
benchmark harness and :mod:`cstm.cli` the command-line front end.
"""

from .acmtf import (
    AcmtfFactors,
    AcmtfHyperParams,
    CoupledSample,
    NumericalError,
    acmtf_decompose,
    acmtf_gradient,
    acmtf_objective,
    line_search,
    shared_factor,
)
from .experiments import (
    ExperimentConfig,
    MetricsRow,
    MetricsSummary,
    SimCaseSpec,
    compute_metrics,
    gen_case,
    run_experiment,
    stratified_split,
)
from .kernels import (
    CoupledKernelSpec,
    KernelSpec,
    coupled_kernel,
    cp_kernel,
    gram_matrix,
    vector_kernel,
)
from .stm import (
    QpProblem,
    StmModel,
    cpstm_decision,
    cpstm_fit,
    decision,
    default_lambda,
    fit,
    matrix_to_kruskal,
    solve_qp,
)
from .tensor_core import (
    KruskalTensor,
    cp_als,
    fold,
    khatri_rao,
    kruskal_to_full,
    normalize_columns,
    unfold,
)

__version__ = "0.1.0"
