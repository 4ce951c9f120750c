"""Double-obstacle Isaacs equations: monotone solver plus stopping-game verification."""

__version__ = "0.1.0"

from .grid import (
    GridFunction,
    Lattice,
    MonotonicityViolation,
    cfl_timestep,
    read_grid_csv,
    second_difference,
    upwind_gradient,
    write_grid_csv,
)
from .hamiltonian import (
    HamiltonianArgs,
    ResidualTriple,
    clamp_hamiltonian,
    eval_H_bar_brute,
    eval_H_minus,
    eval_H_plus,
    eval_inner,
    median3,
    residual,
)
from .problem import (
    Box,
    CoefficientField,
    ControlSet,
    ObstacleOrderError,
    ObstaclePair,
    ProblemSpec,
    ProblemValidationError,
    STOP,
    ValidationReport,
    extend_coefficients,
    validate_problem,
)
from .solver import (
    NonConvergenceError,
    SolveOptions,
    VISolveReport,
    convergence_study,
    manufactured_instance,
    manufactured_lattice,
    solve_vi,
    upper_lower_gap,
    verify_vi_conditions,
)
from .game import (
    ContactHittingRule,
    CounterRng,
    FirstExitRule,
    FixedTimeRule,
    MCConfig,
    MCEstimate,
    NeverRule,
    PayoffSpec,
    SDEModel,
    SimulationAbortError,
    StoppingRule,
    ThresholdRule,
    dynkin_oracle,
    estimate_value,
    game_from_spec,
    hitting_rules,
    payoff,
    saddle_check,
    simulate_paths,
)
from .presets import RegistryInstance, load_instance, registry_names
