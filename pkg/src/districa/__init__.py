"""Distributed blind source separation on simulated sensor networks.

The package splits into a centralized ICA solver (``fastica``), the signal
and network scaffolding (``signals``, ``network``, ``stats``), the
distributed iteration itself (``engine``), and a Monte-Carlo experiment
harness with trace output (``experiments``).
"""

from .engine import (
    CommTally,
    IterationRecord,
    NodeState,
    ReusingBatchProvider,
    SolutionPartition,
    StackedLocalBatch,
    apply_update,
    compress,
    districa_iteration,
    fuse_forward,
    global_filter,
    initial_states,
    local_solver_seed,
    orient_partition,
    solve_local,
    stack_local,
)
from .errors import (
    ConfigError,
    DegenerateDirectionError,
    DistricaError,
    ExtractionFailureError,
    GraphGenerationError,
    InvalidInputError,
    NumericalFailureError,
    RankDeficiencyError,
)
from .experiments import (
    ErrorTrace,
    ExperimentConfig,
    ExperimentResult,
    RunResult,
    aligned_error,
    centralized_reference,
    emit_trace,
    load_config,
    make_source_specs,
    normalized_error,
    read_trace,
    run_experiment,
    run_single,
)
from .fastica import (
    ContrastFunction,
    IcaResult,
    LogCosh,
    NegExp,
    SolverOptions,
    contrast_by_name,
    deflate,
    fix_signs,
    fixed_point_step,
    negentropy_score,
    run_fastica,
)
from .network import (
    NetworkGraph,
    TreeTopology,
    er_graph,
    load_graph,
    prune_to_tree,
    save_graph,
)
from .signals import (
    DriftSchedule,
    MixedNoise,
    MixingModel,
    Sinusoid,
    SourceSpec,
    Square,
    drift_mixing,
    generate_sources,
    make_drift_schedule,
    mix_and_normalize,
    ramp_profile,
)
from .stats import (
    CovarianceMatrix,
    EigenDecomposition,
    SampleBatch,
    WhiteningTransform,
    sample_covariance,
    sym_eig,
    whitening_transform,
)

__version__ = "0.1.0"
