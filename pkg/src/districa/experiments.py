"""Monte-Carlo experiment harness around the distributed iteration.

A run sets up one random scene (network, mixing matrix, source bank),
freezes the sensor scales on a calibration batch, computes the centralized
solution on that batch as the reference, and then measures how the
distributed filter approaches it iteration by iteration. Three modes:

stationary  fixed mixing matrix, fixed reference
adaptive    mixing matrix drifts along a ramp profile; the reference is
            recomputed from the calibration sources whenever the drift
            scale changes
partial     like stationary but the in-network solves are cut short
            (loose tolerance, few inner steps)

Errors are relative squared Frobenius distances to the reference, both as-is
and after the best column permutation and per-column sign flips. Traces are
medians over runs, written as CSV (deterministic bytes) plus a JSON sidecar
for anything allowed to vary, like wall time.
"""

from __future__ import annotations

import itertools
import json
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .engine import ReusingBatchProvider, districa_iteration, initial_states
from .errors import ConfigError, DistricaError, InvalidInputError, NumericalFailureError
from .fastica import SolverOptions, contrast_by_name, run_fastica
from .network import NetworkGraph, er_graph, load_graph
from .signals import (
    MixedNoise,
    MixingModel,
    Sinusoid,
    Square,
    drift_mixing,
    generate_sources,
    make_drift_schedule,
    mix_and_normalize,
    ramp_profile,
)
from .stats import SampleBatch

MODES = ("stationary", "adaptive", "partial")

# Independent seed streams per run, combined as SeedSequence([seed, run, stream]).
_GRAPH, _MIXING, _DRIFT, _INIT, _BATCH, _SOLVER, _CALIBRATION, _REFERENCE, _ALPHA = range(9)

ALIGNMENT_MAX_COMPONENTS = 8


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs; validated on construction.

    ``alpha_range`` bounds the uniform-vs-Gaussian weight of the noise
    sources, drawn once per run. ``graph_file`` pins the topology to an
    edge-list file instead of redrawing a random graph per run.
    """

    nodes: int = 5
    channels_per_node: int = 5
    q_components: int = 2
    samples_per_iteration: int = 10_000
    iterations: int = 100
    monte_carlo_runs: int = 5
    mode: str = "stationary"
    er_probability: float = 0.8
    contrast: str = "logcosh"
    solver_tol: float = 1e-9
    solver_max_iters: int = 1000
    solver_restarts: int = 5
    partial_tol: float = 1e-3
    partial_max_iters: int = 10
    reuse: int = 1
    seed: int = 0
    drift_ratio: float = 0.005
    sinusoid_freq: float = 0.007
    square_freq: float = 0.013
    alpha_range: tuple[float, float] = (0.2, 0.8)
    calibration_samples: int = 10_000
    graph_file: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "alpha_range", tuple(float(a) for a in self.alpha_range))
        if self.nodes < 1:
            raise ConfigError(f"nodes must be >= 1, got {self.nodes}")
        if self.channels_per_node < 1:
            raise ConfigError(f"channels_per_node must be >= 1, got {self.channels_per_node}")
        if not 1 <= self.q_components <= self.channels_per_node:
            raise ConfigError(
                f"q_components must lie in [1, {self.channels_per_node}], "
                f"got {self.q_components}"
            )
        if self.nodes * self.channels_per_node < 2:
            raise ConfigError("the signal model needs at least 2 mixture channels")
        stacked_max = self.channels_per_node + (self.nodes - 1) * self.q_components
        if self.samples_per_iteration < 10 * stacked_max:
            raise ConfigError(
                f"samples_per_iteration must be >= {10 * stacked_max} "
                f"(10x the widest stacked signal), got {self.samples_per_iteration}"
            )
        if self.calibration_samples < 10 * self.nodes * self.channels_per_node:
            raise ConfigError(
                f"calibration_samples must be >= {10 * self.nodes * self.channels_per_node}, "
                f"got {self.calibration_samples}"
            )
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.monte_carlo_runs < 1:
            raise ConfigError(f"monte_carlo_runs must be >= 1, got {self.monte_carlo_runs}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 < self.er_probability <= 1.0:
            raise ConfigError(f"er_probability must lie in (0, 1], got {self.er_probability}")
        try:
            contrast_by_name(self.contrast)
        except InvalidInputError as exc:
            raise ConfigError(str(exc)) from exc
        for label, tol in (("solver_tol", self.solver_tol), ("partial_tol", self.partial_tol)):
            if not tol > 0:
                raise ConfigError(f"{label} must be positive, got {tol}")
        for label, n in (
            ("solver_max_iters", self.solver_max_iters),
            ("solver_restarts", self.solver_restarts),
            ("partial_max_iters", self.partial_max_iters),
            ("reuse", self.reuse),
        ):
            if n < 1:
                raise ConfigError(f"{label} must be >= 1, got {n}")
        if self.drift_ratio < 0:
            raise ConfigError(f"drift_ratio must be >= 0, got {self.drift_ratio}")
        for label, f in (("sinusoid_freq", self.sinusoid_freq), ("square_freq", self.square_freq)):
            if not 0.0 < f < 0.5:
                raise ConfigError(f"{label} must lie in (0, 0.5), got {f}")
        lo, hi = self.alpha_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ConfigError(f"alpha_range must satisfy 0 <= lo <= hi <= 1, got {self.alpha_range}")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        """Build from parsed JSON; unknown keys are an error, not a warning."""
        if not isinstance(raw, dict):
            raise ConfigError(f"config must be a JSON object, got {type(raw).__name__}")
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        out = asdict(self)
        out["alpha_range"] = list(self.alpha_range)
        return out


def load_config(path) -> ExperimentConfig:
    """Read a JSON config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(raw)


def _stream(seed: int, run: int, stream: int, *extra: int) -> int:
    """A 32-bit seed unique to (experiment seed, run index, stream id)."""
    words = [int(seed), int(run), int(stream), *map(int, extra)]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


def make_source_specs(n_channels: int, config: ExperimentConfig, rng) -> tuple:
    """The standard source bank: one sinusoid, one square wave, noise for the rest."""
    if n_channels < 2:
        raise InvalidInputError(f"need at least 2 sources, got {n_channels}")
    lo, hi = config.alpha_range
    alphas = rng.uniform(lo, hi, size=n_channels - 2)
    specs = [Sinusoid(config.sinusoid_freq), Square(config.square_freq)]
    specs.extend(MixedNoise(float(a)) for a in alphas)
    return tuple(specs)


def normalized_error(x: np.ndarray, reference: np.ndarray) -> float:
    """||X - X*||_F^2 / ||X*||_F^2."""
    x = np.asarray(x, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if x.shape != reference.shape:
        raise InvalidInputError(f"shape mismatch: {x.shape} vs reference {reference.shape}")
    ref_energy = float(np.sum(reference * reference))
    if ref_energy <= 0.0:
        raise InvalidInputError("reference filter has zero norm")
    diff = x - reference
    return float(np.sum(diff * diff)) / ref_energy


def aligned_error(x: np.ndarray, reference: np.ndarray) -> float:
    """The normalized error after the best column permutation and sign flips.

    For each permutation the optimal per-column sign is analytic
    (s = sign of the matched columns' inner product), so only the Q!
    permutations are enumerated.
    """
    x = np.asarray(x, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if x.shape != reference.shape:
        raise InvalidInputError(f"shape mismatch: {x.shape} vs reference {reference.shape}")
    q = x.shape[1]
    if q > ALIGNMENT_MAX_COMPONENTS:
        raise InvalidInputError(
            f"permutation alignment supports up to {ALIGNMENT_MAX_COMPONENTS} "
            f"components, got {q}"
        )
    ref_energy = float(np.sum(reference * reference))
    if ref_energy <= 0.0:
        raise InvalidInputError("reference filter has zero norm")
    cross = np.abs(x.T @ reference)
    x_energy = float(np.sum(x * x))
    best = max(
        sum(cross[p[j], j] for j in range(q)) for p in itertools.permutations(range(q))
    )
    return (x_energy + ref_energy - 2.0 * float(best)) / ref_energy


def centralized_reference(
    batch: SampleBatch, n_components: int, contrast, opts: SolverOptions, restarts: int = 1
) -> np.ndarray:
    """The filter the network should converge to: plain ICA on the full batch.

    ``restarts`` > 1 reruns the extraction from fresh seeds and keeps the
    filter with the largest batch objective, the same guard against
    inferior deflation fixed points the distributed solves use.
    """
    if restarts < 1:
        raise InvalidInputError(f"restarts must be >= 1, got {restarts}")
    best = None
    for attempt in range(int(restarts)):
        attempt_opts = opts
        if attempt > 0:
            sub = np.random.SeedSequence([int(opts.rng_seed), attempt])
            attempt_opts = replace(opts, rng_seed=int(sub.generate_state(1)[0]))
        x = run_fastica(batch, n_components, contrast, attempt_opts).demixing_raw
        objective = float(contrast.f(batch.data @ x).mean(axis=0).sum())
        if best is None or objective > best[0]:
            best = (objective, x)
    return best[1]


@dataclass(frozen=True)
class RunResult:
    """Per-iteration measurements of a single Monte-Carlo run.

    A run that hits a numerical failure stops early: ``status`` becomes
    "failed", the message records where, and the trailing entries of every
    array stay NaN.
    """

    run_index: int
    status: str
    message: str
    iterations_completed: int
    epsilon: np.ndarray
    epsilon_aligned: np.ndarray
    objective: np.ndarray
    scalars_fused: np.ndarray
    scalars_disseminated: np.ndarray
    wall_time: float
    graph_resamples: int


def _build_graph(config: ExperimentConfig, run_index: int) -> NetworkGraph:
    if config.graph_file is not None:
        graph = load_graph(config.graph_file)
        expected = (config.channels_per_node,) * config.nodes
        if graph.n_nodes != config.nodes or graph.channels != expected:
            raise ConfigError(
                f"graph file {config.graph_file} describes {graph.n_nodes} nodes with "
                f"channels {graph.channels}, config expects {config.nodes} nodes with "
                f"{expected}"
            )
        return graph
    return er_graph(
        config.nodes,
        config.er_probability,
        (config.channels_per_node,) * config.nodes,
        rng_seed=_stream(config.seed, run_index, _GRAPH),
    )


def run_single(config: ExperimentConfig, run_index: int) -> RunResult:
    """One Monte-Carlo run: scene setup, calibration, then the iteration loop."""
    t_start = time.perf_counter()
    contrast = contrast_by_name(config.contrast)
    graph = _build_graph(config, run_index)
    m = graph.total_channels

    alpha_rng = np.random.default_rng(_stream(config.seed, run_index, _ALPHA))
    specs = make_source_specs(m, config, alpha_rng)
    mixing_rng = np.random.default_rng(_stream(config.seed, run_index, _MIXING))
    model = MixingModel(mixing_rng.standard_normal((m, m)), specs)

    calibration_sources = generate_sources(
        specs,
        config.calibration_samples,
        t0=0,
        rng_seed=_stream(config.seed, run_index, _CALIBRATION),
    )
    calibration_mix = mix_and_normalize(model, calibration_sources)

    reference_opts = SolverOptions(
        tol=config.solver_tol,
        max_inner_iters=config.solver_max_iters,
        rng_seed=_stream(config.seed, run_index, _REFERENCE),
    )
    base_reference = centralized_reference(
        calibration_mix,
        config.q_components,
        contrast,
        reference_opts,
        restarts=config.solver_restarts,
    )

    schedule = None
    reference_cache = {0.0: base_reference}
    if config.mode == "adaptive":
        schedule = make_drift_schedule(
            model,
            ramp_profile(config.iterations),
            rng_seed=_stream(config.seed, run_index, _DRIFT),
            ratio=config.drift_ratio,
        )

    def reference_for(i: int) -> np.ndarray:
        if schedule is None:
            return base_reference
        p = float(schedule.profile[i])
        if p not in reference_cache:
            drifted_mix = mix_and_normalize(drift_mixing(model, schedule, i), calibration_sources)
            reference_cache[p] = centralized_reference(
                drifted_mix,
                config.q_components,
                contrast,
                reference_opts,
                restarts=config.solver_restarts,
            )
        return reference_cache[p]

    states = initial_states(graph, config.q_components, _stream(config.seed, run_index, _INIT))
    batch_seed = _stream(config.seed, run_index, _BATCH)

    def draw_sources(i: int) -> SampleBatch:
        t0 = config.calibration_samples + i * config.samples_per_iteration
        return generate_sources(specs, config.samples_per_iteration, t0=t0, rng_seed=batch_seed)

    source_provider = ReusingBatchProvider(draw_sources, config.reuse)

    def batch_provider(i: int) -> SampleBatch:
        active = model if schedule is None else drift_mixing(model, schedule, i)
        return mix_and_normalize(active, source_provider(i)).with_layout(graph.channels)

    if config.mode == "partial":
        # Partial solves model cheap, truncated local computation; retrying
        # them from several seeds would defeat the point.
        solve_opts = SolverOptions(
            tol=config.partial_tol,
            max_inner_iters=config.partial_max_iters,
            rng_seed=_stream(config.seed, run_index, _SOLVER),
        )
        solve_restarts = 1
    else:
        solve_opts = SolverOptions(
            tol=config.solver_tol,
            max_inner_iters=config.solver_max_iters,
            rng_seed=_stream(config.seed, run_index, _SOLVER),
        )
        solve_restarts = config.solver_restarts

    n_iters = config.iterations
    epsilon = np.full(n_iters, np.nan)
    epsilon_aligned = np.full(n_iters, np.nan)
    objective = np.full(n_iters, np.nan)
    fused = np.full(n_iters, np.nan)
    disseminated = np.full(n_iters, np.nan)

    status, message, completed = "ok", "", n_iters
    for i in range(n_iters):
        try:
            states, record = districa_iteration(
                graph, states, batch_provider, i, contrast, solve_opts,
                restarts=solve_restarts,
            )
        except NumericalFailureError as exc:
            status, message, completed = "failed", str(exc), i
            break
        reference = reference_for(i)
        epsilon[i] = normalized_error(record.global_filter, reference)
        epsilon_aligned[i] = aligned_error(record.global_filter, reference)
        objective[i] = record.objective
        fused[i] = record.tally.scalars_fused
        disseminated[i] = record.tally.scalars_disseminated

    return RunResult(
        run_index=run_index,
        status=status,
        message=message,
        iterations_completed=completed,
        epsilon=epsilon,
        epsilon_aligned=epsilon_aligned,
        objective=objective,
        scalars_fused=fused,
        scalars_disseminated=disseminated,
        wall_time=time.perf_counter() - t_start,
        graph_resamples=graph.resamples,
    )


@dataclass(frozen=True)
class ErrorTrace:
    """Median trajectories over the successful runs, one row per iteration."""

    iterations: np.ndarray
    epsilon_median: np.ndarray
    epsilon_aligned_median: np.ndarray
    objective_median: np.ndarray
    per_run_epsilon: np.ndarray
    per_run_epsilon_aligned: np.ndarray
    scalars_fused: np.ndarray
    scalars_disseminated: np.ndarray


@dataclass(frozen=True)
class ExperimentResult:
    config: ExperimentConfig
    runs: list[RunResult] = field(default_factory=list)
    trace: ErrorTrace | None = None

    @property
    def successful_runs(self) -> list[RunResult]:
        return [r for r in self.runs if r.status == "ok"]


def _build_trace(config: ExperimentConfig, runs: list[RunResult]) -> ErrorTrace:
    ok = [r for r in runs if r.status == "ok"]
    eps = np.vstack([r.epsilon for r in runs])
    eps_aligned = np.vstack([r.epsilon_aligned for r in runs])
    ok_idx = [r.run_index for r in ok]
    fused = ok[0].scalars_fused
    disseminated = ok[0].scalars_disseminated
    for r in ok[1:]:
        if not (
            np.array_equal(r.scalars_fused, fused)
            and np.array_equal(r.scalars_disseminated, disseminated)
        ):
            raise DistricaError(
                "communication tallies differ across runs with identical dimensions"
            )
    return ErrorTrace(
        iterations=np.arange(config.iterations),
        epsilon_median=np.median(eps[ok_idx], axis=0),
        epsilon_aligned_median=np.median(eps_aligned[ok_idx], axis=0),
        objective_median=np.median(np.vstack([r.objective for r in ok]), axis=0),
        per_run_epsilon=eps,
        per_run_epsilon_aligned=eps_aligned,
        scalars_fused=fused,
        scalars_disseminated=disseminated,
    )


def run_experiment(config: ExperimentConfig, jobs: int = 1, progress=None) -> ExperimentResult:
    """Run all Monte-Carlo repetitions and aggregate the surviving ones.

    Failed runs are dropped from the medians with a warning; if every run
    fails, a ``NumericalFailureError`` carries the first failure message.
    ``jobs`` > 1 distributes runs over a process pool. ``progress``
    (callable taking a RunResult) is invoked as results arrive.
    """
    indices = range(config.monte_carlo_runs)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = []
            for result in pool.map(run_single, itertools.repeat(config), indices):
                runs.append(result)
                if progress is not None:
                    progress(result)
    else:
        runs = []
        for r in indices:
            result = run_single(config, r)
            runs.append(result)
            if progress is not None:
                progress(result)

    failed = [r for r in runs if r.status != "ok"]
    for r in failed:
        warnings.warn(
            f"run {r.run_index} aborted at iteration {r.iterations_completed}: {r.message}",
            stacklevel=2,
        )
    if len(failed) == len(runs):
        raise NumericalFailureError(
            f"all {len(runs)} runs failed; first failure: {failed[0].message}"
        )
    return ExperimentResult(config, runs, _build_trace(config, runs))


def _trace_columns(trace: ErrorTrace) -> list[tuple[str, np.ndarray]]:
    n_runs = trace.per_run_epsilon.shape[0]
    columns = [
        ("iter", trace.iterations),
        ("epsilon_median", trace.epsilon_median),
        ("epsilon_aligned_median", trace.epsilon_aligned_median),
    ]
    columns.extend((f"epsilon_run_{r}", trace.per_run_epsilon[r]) for r in range(n_runs))
    columns.extend(
        (f"epsilon_aligned_run_{r}", trace.per_run_epsilon_aligned[r]) for r in range(n_runs)
    )
    columns.append(("objective", trace.objective_median))
    columns.append(("scalars_fused", trace.scalars_fused))
    columns.append(("scalars_disseminated", trace.scalars_disseminated))
    return columns


def emit_trace(result: ExperimentResult, out_dir, name: str = "trace") -> tuple[Path, Path]:
    """Write <name>.csv (byte-deterministic) and <name>.json (run metadata).

    Floats are printed with 17 significant digits so the CSV round-trips
    exactly. Wall times and failure messages, which may differ between
    repeated invocations, live only in the JSON sidecar.
    """
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    columns = _trace_columns(result.trace)
    csv_path = out_dir / f"{name}.csv"
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(label for label, _ in columns) + "\n")
        for i in range(len(result.trace.iterations)):
            cells = [str(int(columns[0][1][i]))]
            cells.extend(format(col[i], ".17g") for _, col in columns[1:])
            fh.write(",".join(cells) + "\n")

    meta = {
        "config": result.config.to_dict(),
        "columns": [label for label, _ in columns],
        "runs": [
            {
                "run_index": r.run_index,
                "status": r.status,
                "message": r.message,
                "iterations_completed": r.iterations_completed,
                "wall_time_seconds": r.wall_time,
                "graph_resamples": r.graph_resamples,
            }
            for r in result.runs
        ],
    }
    json_path = out_dir / f"{name}.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, json_path


def read_trace(csv_path) -> dict[str, np.ndarray]:
    """Load a trace CSV back into named columns."""
    with open(csv_path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header:
            raise InvalidInputError(f"{csv_path} is empty")
        names = header.split(",")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            table = np.loadtxt(fh, delimiter=",", ndmin=2)
    if table.size == 0:
        return {name: np.empty(0) for name in names}
    if table.shape[1] != len(names):
        raise InvalidInputError(
            f"{csv_path}: header names {len(names)} columns, rows have {table.shape[1]}"
        )
    return {name: table[:, j] for j, name in enumerate(names)}
