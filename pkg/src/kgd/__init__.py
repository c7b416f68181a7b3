"""Kernel gradient discrepancy for entropy-regularised variational
objectives, and particle samplers driven by it."""

from .core import (
    DiagonalGaussian,
    EmpiricalMeasure,
    RunConfig,
    make_empirical,
    ref_log_grad,
    seeded_stream,
)
from .discrepancy import (
    KGDEstimate,
    ScalingStudy,
    clt_scaling_study,
    gen_score,
    kgd_u_squared,
    kgd_v_squared,
    matrix_stein_kernel_eval,
    stein_gram,
    stein_kernel_eval,
)
from .kernels import (
    IMQ,
    DerivativeBundle,
    Gaussian,
    Mixture,
    NormalizedLinear,
    ScalarKernel,
    WeightedMatrixKernel,
    kernel_derivatives,
    kernel_eval,
    matrix_kernel_eval,
)
from .losses import (
    InteractionLoss,
    LinearLoss,
    MeanFieldRegressionLoss,
    PredictiveKernelLoss,
    VariationalLoss,
    ZeroLoss,
    euclid_identity_check,
    gaussian_overlap,
    gaussian_smooth,
)
from .samplers import (
    OptimizerSpec,
    SamplerDivergence,
    SamplerRun,
    SearchSpec,
    greedy_extend,
    greedy_next,
    kgdd_grad,
    kgdd_run,
    mfld_run,
    mfld_step,
    param_vi_objective,
    vgd_drift,
    vgd_run,
    vgd_step,
)

__version__ = "0.1.0"

__all__ = [
    "DiagonalGaussian",
    "EmpiricalMeasure",
    "RunConfig",
    "make_empirical",
    "ref_log_grad",
    "seeded_stream",
    "KGDEstimate",
    "ScalingStudy",
    "clt_scaling_study",
    "gen_score",
    "kgd_u_squared",
    "kgd_v_squared",
    "matrix_stein_kernel_eval",
    "stein_gram",
    "stein_kernel_eval",
    "IMQ",
    "DerivativeBundle",
    "Gaussian",
    "Mixture",
    "NormalizedLinear",
    "ScalarKernel",
    "WeightedMatrixKernel",
    "kernel_derivatives",
    "kernel_eval",
    "matrix_kernel_eval",
    "InteractionLoss",
    "LinearLoss",
    "MeanFieldRegressionLoss",
    "PredictiveKernelLoss",
    "VariationalLoss",
    "ZeroLoss",
    "euclid_identity_check",
    "gaussian_overlap",
    "gaussian_smooth",
    "OptimizerSpec",
    "SamplerDivergence",
    "SamplerRun",
    "SearchSpec",
    "greedy_extend",
    "greedy_next",
    "kgdd_grad",
    "kgdd_run",
    "mfld_run",
    "mfld_step",
    "param_vi_objective",
    "vgd_drift",
    "vgd_run",
    "vgd_step",
    "__version__",
]
