"""Sparse pre-training toolkit built around the average-parameter scaling law."""

from .core import (ModelShape, ParamTrajectory, RunRecord, Segment, SparsityScheduleConfig,
                   average_params, build_schedule, canonical_config, compression_rate,
                   effective_compute, match_dense, solve_iterations)
from .exceptions import (ConvergenceError, IllPosedError, InfeasibleError, SchemaError,
                         SingularityError, SparseScaleError)
from .lawfit import (HOFFMANN_FIT, FrantarLawFit, FrantarScalingLaw, ScalingLawFit,
                     UnifiedScalingLaw, fit, fit_frantar, huber_objective, predict_loss)
from .prescribe import Prescription, solve_chinchilla, solve_lifetime
from .theorysim import (TheoryParams, coefficient_series, delta_loss, fit_piecewise_alpha,
                        loss_of_compute, simulate_trajectory)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError", "FrantarLawFit", "FrantarScalingLaw", "HOFFMANN_FIT", "IllPosedError",
    "InfeasibleError", "ModelShape", "ParamTrajectory", "Prescription", "RunRecord",
    "ScalingLawFit", "SchemaError", "Segment", "SingularityError", "SparseScaleError",
    "SparsityScheduleConfig", "TheoryParams", "UnifiedScalingLaw", "average_params",
    "build_schedule", "canonical_config", "coefficient_series", "compression_rate",
    "delta_loss", "effective_compute", "fit", "fit_frantar", "fit_piecewise_alpha",
    "huber_objective", "loss_of_compute", "match_dense", "predict_loss", "simulate_trajectory",
    "solve_chinchilla", "solve_iterations", "solve_lifetime",
]
