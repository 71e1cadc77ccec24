"""divkern: Monte-Carlo scores and linear responses of parameterized SDEs.

The package propagates a covector process alongside each sample path of an
Ito SDE; its conditional mean is the score (gradient of the log marginal
density), and path accumulators built from the same quantities estimate
parameter derivatives of the log density, without adjoint solves and without
differentiating trajectories.  On top of that sit an ergodic (stationary)
response estimator and a forward-only fitter for diffusion-type models.
"""

from .errors import ConfigError, DivkernError, ModelError, NumericsError, UnknownModelError
from .models import (
    DerivativeBundle,
    InitialDensity,
    ModelInstance,
    ModelParams,
    eval_bundle,
    fd_derivative_check,
    finite_difference_bundle,
    from_functions,
    get_model,
    list_models,
    validate_bundle,
)
from .rng import generate_increments, initial_rng, path_rng
from .simulate import (
    PathConfig,
    PathEnsemble,
    ResponseHook,
    ScoreHook,
    em_step,
    run_forward,
    simulate_ensemble,
)
from .score import (
    AlphaSchedule,
    estimate_score,
    init_nu,
    step_nu_continuous,
    step_nu_discrete,
)
from .linresp import (
    ErgodicConfig,
    delta_x,
    ergodic_average,
    ergodic_linear_response,
    estimate_linear_response,
    step_accumulator,
    step_accumulator_discrete,
)
from .conditioning import BinSpec, ConditionalTable, KnnSpec, bin_1d, knn
from .oracle import (
    FDErgodicResult,
    OUAnalytic,
    fd_ergodic_response,
    fd_log_density,
    kernel_one_step_response,
    likelihood_ratio_response,
    ou_analytic,
    quadrature_delta_log_h1,
    quadrature_one_step,
)
from .diffusion import FitConfig, FitHistory, fit, generate_dataset, kl_gradient

__version__ = "0.1.0"

__all__ = [
    "AlphaSchedule",
    "BinSpec",
    "ConfigError",
    "ConditionalTable",
    "DerivativeBundle",
    "DivkernError",
    "ErgodicConfig",
    "FDErgodicResult",
    "FitConfig",
    "FitHistory",
    "InitialDensity",
    "KnnSpec",
    "ModelError",
    "ModelInstance",
    "ModelParams",
    "NumericsError",
    "OUAnalytic",
    "PathConfig",
    "PathEnsemble",
    "ResponseHook",
    "ScoreHook",
    "UnknownModelError",
    "bin_1d",
    "delta_x",
    "em_step",
    "ergodic_average",
    "ergodic_linear_response",
    "estimate_linear_response",
    "estimate_score",
    "eval_bundle",
    "fd_derivative_check",
    "fd_ergodic_response",
    "fd_log_density",
    "finite_difference_bundle",
    "fit",
    "from_functions",
    "generate_dataset",
    "generate_increments",
    "get_model",
    "init_nu",
    "initial_rng",
    "kernel_one_step_response",
    "kl_gradient",
    "knn",
    "likelihood_ratio_response",
    "list_models",
    "ou_analytic",
    "path_rng",
    "quadrature_delta_log_h1",
    "quadrature_one_step",
    "run_forward",
    "simulate_ensemble",
    "step_accumulator",
    "step_accumulator_discrete",
    "step_nu_continuous",
    "step_nu_discrete",
    "validate_bundle",
]
