"""Filtering and smoothing of monitored hybrid quantum-classical dynamics.

The package simulates hybrid Lindblad rate equations under jump-type
continuous monitoring: forward filtered states conditioned on the past
record, backward effect operators conditioned on the future record, and
their Bayesian combination into smoothed states.  A driven two-level
emitter watched by an inefficient photon detector ships as the built-in
model, together with its analytic waiting-time law.
"""

from .errors import (
    ConfigError,
    DegenerateRoots,
    Extinct,
    InconsistentWeight,
    InfeasibleFuture,
    NullJump,
)
from .linalg import (
    HybridOperator,
    HybridSuperop,
    apply,
    check_classical_dist,
    check_state,
    devectorize,
    dual,
    expm,
    hs_pairing,
    symmetrize,
    vectorize,
)
from .generators import (
    JumpTerm,
    ModelGenerators,
    ModelSpec,
    StepCache,
    build,
    conditional_propagate,
    load_model_file,
    master_solve,
    measurement_map,
    reduce_classical,
    reduce_quantum,
    uniform_grid,
)
from .trajectories import (
    FilteredPath,
    Trajectory,
    filter_path,
    sample_jump_time,
    sample_trajectory,
    simulate_trajectory,
    survival,
    trajectory_log_weight,
    trajectory_rng,
)
from .smoothing import (
    EffectPath,
    SmoothedRecord,
    effect_backward,
    smooth_path,
    smoothed_classical,
    smoothed_quantities,
    smoothed_state,
)
from .fluorescence import (
    FluorParams,
    build_hybrid,
    build_plain,
    initial_hybrid,
    initial_plain,
    inversion_sampler,
    steady_state_classical,
    steady_state_quantum,
    thinning_sampler,
    waiting_cdf,
    waiting_density,
    waiting_laplace,
)
from .ensemble import (
    CSV_HEADER,
    EnsembleStats,
    RunConfig,
    emit_csv,
    master_quantities,
    parse_csv,
    path_quantities,
    resolve_model,
    run_ensemble,
)
from .validate import run_validation

__version__ = "0.1.0"
