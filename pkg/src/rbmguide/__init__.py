"""Guided herding with random batch dynamics, adjoint gradients and MPC."""
from .errors import (ConfigError, DegenerateInputError, InvalidParameterError,
                     OptimizationError, ScheduleMismatchError)
from .kernels import KernelParams, eval_a, eval_f, eval_g, force_and_jacobian
from .dynamics import (BatchSchedule, CostParams, Grid, ModelParams, State, Trajectory,
                       adjacency, constant_control, full_rhs, integrate_forward,
                       interaction_count, lattice_positions, rbm_rhs, sample_batch_schedule)

__version__ = "0.1.0"
