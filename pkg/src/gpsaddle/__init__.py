"""Saddle-point search on expensive fields via a derivative-aware GP surrogate.

The package couples gentlest ascent dynamics with a Gaussian-process
surrogate of the driving force field.  The surrogate supplies posterior
means of the force and its Jacobian for stepping, posterior variances for
deciding when it can no longer be trusted, and sampled realizations for
scoring where the next batch of true-model evaluations will help most.
"""

from .errors import (
    DivergenceError,
    IllConditionedDataError,
    InputError,
    SurrogateUnusableError,
)
from .kernel import KernelParams, cross_blocks, energy_kernel, joint_blocks
from .gpr import (
    Dataset,
    DerivPosterior,
    GprModel,
    MleResult,
    ObservationKind,
    SampledField,
    fast_posterior_variance,
    fit,
    optimize_hyperparams,
    predict_derivatives,
    predict_label,
    sample_field_realization,
)
from .gad import (
    ActiveLearningConfig,
    GadConfig,
    GadResult,
    GadState,
    check_convergence,
    gad_step,
    run_agpr_gad,
    run_reference_gad,
)
from .design import (
    DesignBatch,
    LinCoeffs,
    PriorPathSet,
    SpsaParams,
    fit_lin_coeffs,
    propose_design,
    reliability_check,
    sample_prior_paths,
    spsa_maximize,
    utility_u1,
)
from .problems import (
    AnalyticProvider,
    FdJacobianProvider,
    Problem,
    example1_energy,
    example1_problem,
    example2_force,
    example2_problem,
    observe,
    oracle_critical_points,
)
from .cli import ExperimentConfig, emit_table, main, parse_config, run_experiment

__version__ = "0.1.0"

__all__ = [
    "InputError",
    "IllConditionedDataError",
    "DivergenceError",
    "SurrogateUnusableError",
    "KernelParams",
    "energy_kernel",
    "cross_blocks",
    "joint_blocks",
    "ObservationKind",
    "Dataset",
    "GprModel",
    "DerivPosterior",
    "MleResult",
    "SampledField",
    "fit",
    "optimize_hyperparams",
    "predict_derivatives",
    "predict_label",
    "sample_field_realization",
    "fast_posterior_variance",
    "GadState",
    "GadConfig",
    "GadResult",
    "ActiveLearningConfig",
    "gad_step",
    "check_convergence",
    "run_reference_gad",
    "run_agpr_gad",
    "DesignBatch",
    "LinCoeffs",
    "PriorPathSet",
    "SpsaParams",
    "fit_lin_coeffs",
    "sample_prior_paths",
    "utility_u1",
    "spsa_maximize",
    "reliability_check",
    "propose_design",
    "Problem",
    "observe",
    "example1_energy",
    "example1_problem",
    "example2_force",
    "example2_problem",
    "AnalyticProvider",
    "FdJacobianProvider",
    "oracle_critical_points",
    "ExperimentConfig",
    "parse_config",
    "run_experiment",
    "emit_table",
    "main",
]
