"""Distribution-free chance-constrained control via conformal prediction regions.

Feedback gains and prediction regions are learned from disturbance data
(directly over error-trajectory scores, or indirectly through a conformal
disturbance ellipsoid and an S-procedure synthesis), the ellipsoidal
constraints are tightened by the regions, and a convex relaxed problem yields
the control plan.  Probabilistic guarantees are validated by seeded Monte
Carlo simulation.
"""

from .conformal import (
    BallRegion,
    EllipsoidRegion,
    SplitDataset,
    calibrate_regions,
    conformal_quantile,
    pac_adjusted_level,
    required_calibration_size,
    score_disturbance_sequence,
    score_error_trajectory,
    score_input_trajectory,
)
from .data import (
    ConstantCoordinate,
    DisturbanceGeneratorSpec,
    NormalCoordinate,
    SignedGammaCoordinate,
    double_integrator_generator,
    read_dataset_csv,
    write_dataset_csv,
)
from .direct import TrainConfig, TrainResult, eta_bounds, fitness, train_feedback_gain, training_quantile_level
from .errors import (
    ConfigError,
    ConformalControlError,
    InfeasibleError,
    InsufficientCalibrationError,
    SolverFailureError,
    SynthesisInfeasibleError,
    TighteningInfeasibleError,
)
from .estimators import DirectController, IndirectController
from .indirect import (
    DisturbanceRegion,
    InvariantSynthesis,
    centered_mvee,
    default_multiplier_grid,
    disturbance_region,
    sdp_feasible_point,
    synthesize_invariant_region,
    verify_invariance,
)
from .montecarlo import CoverageResult, ValidationReport, coverage_experiment, monte_carlo_validate, wilson_interval
from .ocp import (
    RelaxedSolution,
    TightenedConstraints,
    assemble_control,
    check_tightening_feasible,
    solve_relaxed_ocp,
    tighten,
)
from .scenario import (
    REFERENCE_SCENARIO_COUNT,
    ScenarioProgram,
    ScenarioSolution,
    build_scenario_program,
    feedback_inputs,
    scenario_requirement_note,
    solve_scenario_program,
)
from .systems import (
    ConstraintSpec,
    CostSpec,
    Ellipsoid,
    LinearSystem,
    Trajectory,
    max_eigenvalue,
    min_eigenvalue,
    simulate_closed_loop,
    simulate_error,
    simulate_error_batch,
    simulate_nominal,
)

__version__ = "0.1.0"
