"""Jump-adapted adaptive time stepping for SDEs with Poisson jumps."""

__version__ = "0.1.0"

from .problems import (
    NoiseClass,
    SjdeProblem,
    check_commutativity,
    fd_diffusion_correction,
    get_problem,
    make_1d_additive,
    make_1d_multiplicative,
    make_2d,
    PROBLEM_IDS,
)
from .noise import (
    IteratedIntegrals,
    JumpSchedule,
    WienerSource,
    sample_iterated,
    sample_jump_schedule,
    sample_levy_areas,
)
from .maps import (
    MapError,
    MapPair,
    OneStepMap,
    make_map,
    milstein,
    projected_milstein,
    ssbm,
    tamed_milstein,
    MAP_IDS,
)
from .stepping import (
    PathAborted,
    PathRecord,
    StepOutcome,
    StepParams,
    advance,
    propose_step,
    run_fixed_mesh,
    simulate_path,
)
from .harness import (
    ErrorRow,
    ErrorTable,
    ExperimentConfig,
    ExperimentError,
    backstop_experiment,
    convergence_experiment,
    efficiency_experiment,
    run_reference,
)

__all__ = [name for name in dir() if not name.startswith("_")]
