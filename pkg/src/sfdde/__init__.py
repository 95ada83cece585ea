"""Monte Carlo laboratory for stochastic functional delay equations with jumps."""

from .errors import (AtomOffGridError, ConfigError, DimensionMismatchError,
                     EmptyEnsembleError, GridError, HorizonExceedsDelayError,
                     InfiniteRateError, InsufficientIteratesError,
                     JumpDetectedError, MissingJumpLogError, NonFiniteError,
                     NonIntegrableError, NotFactorizedError,
                     OffsetOutOfRangeError, PointEvaluationError, SfddeError,
                     ShiftBeyondHorizonError, StateNotMaintainedError)
from .levy import (AtomMeasure, DensityMeasure, JumpEvent, JumpScaling,
                   TemperedStableMeasure, compensator_integral, lp_nu_norm,
                   sample_large_jumps, shell_rates, shell_scale_sq,
                   substitution_scale)
from .paths import (CadlagPath, FrozenSegment, MpSegment, Segment, TimeGrid,
                    embedding_gap, mp_norm, segment_continuity_profile,
                    sup_norm)
from .functionals import (AuxiliaryState, DelayMeasure, MeanFieldCoefficient,
                          NoisyDelayCoefficient, SfddeModel, eval_discrete,
                          eval_distributed, eval_meanfield, eval_noisy_delay,
                          lipschitz_probe)
from .solver import (NoiseRecord, SolveReport, euler_solve,
                     euler_solve_ensemble, fit_growth_constant, kunita_ratio,
                     moment_estimate, picard_gap, picard_gap_experiment,
                     picard_solve)
from .robustness import (RobustnessSweep, SweepReport, bound_proxy,
                         build_approx_step, coupled_sweep,
                         general_lambda_sweep, variance_preservation_check)
from .calculus import (PresentFn, RegularizationParams, SmoothFn,
                       TestFunctional, WeightFn, backward_extension,
                       forward_integral, functional_kernel,
                       horizontal_derivative, ito_residual,
                       ito_residual_jumpform, linear_present, restriction,
                       segment_average, square_present, vertical_derivative,
                       weak_forward_integral)
from .feynman_kac import (FkEstimate, TerminalPayoff, fk_estimate, flow_check,
                          ppide_residual)

__version__ = "0.1.0"
