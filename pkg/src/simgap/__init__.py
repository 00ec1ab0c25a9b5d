"""Stochastic simulation-gap quantification and symbolic controller synthesis.

Pipeline: cover the state box, collect one-step data from a nominal model
and a stochastic simulator, bound variances and Lipschitz constants, fit a
state/input-dependent gap function by scenario linear programming with
Chebyshev-backed confidence, synthesize invariance or reach-avoid
controllers on the gap-inflated abstraction, and validate closed loop
against the simulator.
"""

from .cover import (
    Cover,
    Dataset,
    build_cover,
    collect_dataset,
    enumerate_inputs,
    export_csv,
    load_dataset,
    save_dataset,
)
from .errors import (
    ConfigError,
    CorruptDatasetError,
    InfeasibleError,
    InvalidArgumentError,
    MissingArtifactError,
    ResourceLimitError,
    SimGapError,
    SimulatorIOError,
    UnboundedError,
    UnsupportedOperationError,
)
from .estimate import (
    EstimationReport,
    beta1,
    beta2,
    estimate_lipschitz,
    estimate_report,
    sample_variance,
    variance_bound,
)
from .scp import (
    BasisDescriptor,
    GapDimension,
    GapModel,
    ScenarioLP,
    assemble_gap,
    assemble_scp,
    eval_basis,
    eval_gap,
    fit_gap_model,
    overall_confidence,
    residuals,
    solve_lp,
)
from .seeding import derive_seed
from .synth import (
    Controller,
    StateGrid,
    SymbolicModel,
    build_abstraction,
    cells_in_box,
    cells_touching_box,
    load_controller,
    lookup,
    save_controller,
    synthesize_invariance,
    synthesize_reach_avoid,
)
from .systems import (
    BiasSpec,
    ExternalSimulator,
    NoiseSpec,
    NominalModel,
    StochasticSimulator,
    SyntheticSimulator,
    SystemSpec,
    affine,
    composed,
    pendulum,
    step_nominal,
    step_simulator,
    true_mean_gap,
    turtlebot,
)
from .validate import (
    InvarianceSpec,
    ReachAvoidSpec,
    TrajectoryBundle,
    ValidationReport,
    check_spec,
    coverage_check,
    emit_report,
    run_closed_loop,
)

__version__ = "0.1.0"
