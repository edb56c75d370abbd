"""Structure-preserving simulation of a structural acoustic chamber with a thermoelastic Berger wall."""
__version__ = "0.1.0"

from .exceptions import (
    AssumptionViolation,
    BergerWaveError,
    ConfigurationError,
    ConvergenceError,
    DegenerateFitError,
    SimulationError,
    SolverError,
    StepError,
    StiffnessWarning,
)
from .operators import DiscreteOperators, GridSpec, build_operators, flux_inject, neumann_map_solve, trace
from .model import (
    EnergyLedger,
    ModelParams,
    NonlinearitySpec,
    compute_energy_bound_constants,
    total_energy,
    validate_assumptions,
    validate_params,
)
from .states import SimState, random_state_in_WR, zero_state
from .integrator import StepReport, TimeStepper, Trajectory, rhs, simulate, step
from .equilibria import Equilibrium, enumerate_equilibria, solve_plate_stationary, solve_wave_stationary
from .diagnostics import (
    DiffDiagnostics,
    DimensionEstimate,
    attractor_sample,
    difference_functionals,
    dist_to_equilibria,
    fractal_dimension,
    semicontinuity_experiment,
    stabilizability_fit,
    y_norm,
)
from .estimators import BoxCountingDimension, ModalProjector, StabilizabilityEstimator
