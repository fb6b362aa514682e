"""Momentum-based stochastic augmented Lagrangian method for ``min f(x) s.t. Ax = b``."""

from .exceptions import (
    DegenerateMatrixError,
    DimensionError,
    DivergenceError,
    FormatError,
    IllPosedConstraintError,
    MalmError,
    NumericError,
    ParameterError,
    PreconditionError,
)
from .metrics import IterationRecord, Trace, average_traces, kkt_residuals, select_output
from .numerics import RngStream, SpectralInfo, apply_B, b_matrix_norm, smallest_nonzero_eigenvalue, spectral_norm
from .problems import (
    ConstrainedProblem,
    full_gradient,
    generate_quadratic,
    generate_regression,
    load_problem,
    make_quadratic,
    objective,
    save_problem,
    stochastic_gradient,
)
from .solvers import (
    MalmParams,
    ScheduleConstants,
    ScheduleValidity,
    SolverState,
    malm_init,
    malm_run,
    malm_step,
    run_solver,
    schedule,
    schedule_for,
    spd_step,
    storm_alm_step,
)

__version__ = "0.1.0"
