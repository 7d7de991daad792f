"""Acceptance gate: numbered end-to-end checks with explicit thresholds.

Each check measures one shipped behavior and records a single pass/fail
line (printed live and repeated in the terminal summary). Checks that the
current algorithm does not meet are kept at full strength on purpose: a
red line here is a measurement, not a test bug.
"""

import time

import numpy as np
import pytest
from conftest import record_acceptance
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from districa.engine import (
    compress,
    districa_iteration,
    fuse_forward,
    global_filter,
    initial_states,
    solve_local,
    stack_local,
)
from districa.experiments import ExperimentConfig, run_experiment
from districa.fastica import LogCosh, NegExp, SolverOptions, fix_signs, run_fastica
from districa.network import er_graph, prune_to_tree
from districa.signals import (
    MixedNoise,
    MixingModel,
    Sinusoid,
    Square,
    generate_sources,
    mix_and_normalize,
    ramp_profile,
)
from districa.stats import SampleBatch, sample_covariance, whitening_transform

Q = 2
N = 10_000
THRESHOLD = 1e-3


def source_bank(n_channels, rng):
    """The standard scene: two structured targets plus near-Gaussian noise."""
    return (
        Sinusoid(0.007),
        Square(0.013),
        *(MixedNoise(rng.uniform(0.2, 0.8)) for _ in range(n_channels - 2)),
    )


def mixed_scene(n_channels, n_samples, seed):
    rng = np.random.default_rng(seed)
    specs = source_bank(n_channels, rng)
    sources = generate_sources(specs, n_samples, rng_seed=seed)
    batch = mix_and_normalize(MixingModel(rng.standard_normal((n_channels, n_channels)), specs), sources)
    return batch, sources


def _experiment(**overrides):
    base = dict(
        nodes=5,
        channels_per_node=5,
        q_components=Q,
        samples_per_iteration=N,
        iterations=100,
        monte_carlo_runs=5,
        seed=0,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def _timed_run(config):
    t0 = time.perf_counter()
    result = run_experiment(config)
    return result, time.perf_counter() - t0


@pytest.fixture(scope="session")
def stationary_k5():
    return _timed_run(_experiment())


@pytest.fixture(scope="session")
def stationary_k8():
    return _timed_run(_experiment(nodes=8, iterations=160))


@pytest.fixture(scope="session")
def partial_k5():
    return _timed_run(_experiment(mode="partial"))


@pytest.fixture(scope="session")
def adaptive_k5():
    return _timed_run(_experiment(mode="adaptive"))


def first_below(curve, level):
    hits = np.flatnonzero(curve < level)
    return int(hits[0]) if hits.size else None


# ---------------------------------------------------------------------------
# 1. Centralized recovery of both target sources
# ---------------------------------------------------------------------------

def test_centralized_recovery():
    t0 = time.perf_counter()
    hits = 0
    for seed in range(30):
        batch, sources = mixed_scene(10, N, seed)
        result = run_fastica(batch, Q, LogCosh(), SolverOptions(rng_seed=seed))
        estimates = batch.data @ result.demixing_raw
        cross = np.abs(np.corrcoef(estimates.T, sources.data[:, :2].T)[:2, 2:])
        best = max(min(cross[0, 0], cross[1, 1]), min(cross[0, 1], cross[1, 0]))
        hits += best > 0.95
    elapsed = time.perf_counter() - t0
    ok = hits >= 28 and elapsed < 30.0
    record_acceptance(
        1, "centralized recovery",
        ok, f"{hits}/30 runs recover both targets with |corr| > 0.95, {elapsed:.1f}s",
    )
    assert hits >= 28
    assert elapsed < 30.0


# ---------------------------------------------------------------------------
# 2. One distributed round equals the assembled global update exactly
# ---------------------------------------------------------------------------

def test_exact_equivalence():
    t0 = time.perf_counter()
    graph = er_graph(3, 0.8, (2, 2, 2), rng_seed=3)
    rng = np.random.default_rng(4)
    specs = source_bank(6, rng)
    sources = generate_sources(specs, 50, rng_seed=5)
    batch = mix_and_normalize(
        MixingModel(rng.standard_normal((6, 6)), specs), sources
    ).with_layout(graph.channels)

    worst = 0.0
    for root in range(3):
        states = initial_states(graph, 1, rng_seed=6)
        tree = prune_to_tree(graph, root)
        per_node = {k: batch.node_block(k) for k in range(3)}
        compressed = {k: compress(states[k], per_node[k]) for k in range(3)}
        stacked = stack_local(per_node[root], fuse_forward(tree, compressed))
        partition, _ = solve_local(stacked, 1, LogCosh(), SolverOptions(rng_seed=7))

        blocks = []
        for k in range(3):
            if k == root:
                blocks.append(partition.updated_root_block)
                continue
            hop = k
            while tree.parent[hop] != root:
                hop = tree.parent[hop]
            blocks.append(states[k].block @ partition.g_blocks[hop])
        assembled = np.vstack(blocks)

        gap = np.abs(stacked.data @ partition.stacked_matrix() - batch.data @ assembled)
        worst = max(worst, float(gap.max()))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-10 and elapsed < 1.0
    record_acceptance(
        2, "exact equivalence",
        ok, f"worst per-sample identity gap {worst:.2e} over 3 roots, {elapsed:.2f}s",
    )
    assert worst < 1e-10
    assert elapsed < 1.0


# ---------------------------------------------------------------------------
# 3. Reused batch: monotone objective and vanishing filter steps
# ---------------------------------------------------------------------------

def test_fixed_batch_refinement():
    t0 = time.perf_counter()
    graph = er_graph(5, 0.8, (5,) * 5, rng_seed=8)
    rng = np.random.default_rng(9)
    specs = source_bank(25, rng)
    sources = generate_sources(specs, N, rng_seed=10)
    batch = mix_and_normalize(
        MixingModel(rng.standard_normal((25, 25)), specs), sources
    ).with_layout(graph.channels)

    states = initial_states(graph, Q, rng_seed=11)
    opts = SolverOptions(rng_seed=12)
    objectives, steps = [], []
    previous = global_filter(states)
    for i in range(50):
        states, record = districa_iteration(
            graph, states, lambda _: batch, i, LogCosh(), opts, restarts=5
        )
        objectives.append(record.objective)
        steps.append(
            np.linalg.norm(record.global_filter - previous) / np.linalg.norm(previous)
        )
        previous = record.global_filter
    elapsed = time.perf_counter() - t0

    min_increment = float(np.min(np.diff(objectives))) if len(objectives) > 1 else 0.0
    final_step = float(steps[-1])
    ok = min_increment >= -1e-8 and final_step < 1e-6 and elapsed < 120.0
    record_acceptance(
        3, "fixed-batch refinement",
        ok,
        f"smallest objective increment {min_increment:+.2e} (monotone floor -1e-8), "
        f"final relative step {final_step:.2e} (need < 1e-6), {elapsed:.0f}s",
    )
    assert min_increment >= -1e-8
    assert final_step < 1e-6
    assert elapsed < 120.0


# ---------------------------------------------------------------------------
# 4. Stationary convergence to the centralized filter, two network sizes
# ---------------------------------------------------------------------------

def test_stationary_convergence(stationary_k5, stationary_k8):
    result5, t5 = stationary_k5
    result8, t8 = stationary_k8
    curve5 = result5.trace.epsilon_aligned_median
    curve8 = result8.trace.epsilon_aligned_median
    first5 = first_below(curve5, THRESHOLD)
    first8 = first_below(curve8, THRESHOLD)
    elapsed = t5 + t8
    ok = (
        first5 is not None
        and first8 is not None
        and first5 < first8
        and elapsed < 900.0
    )
    record_acceptance(
        4, "stationary convergence",
        ok,
        f"K=5 median eps min {curve5.min():.3g} hits 1e-3 at {first5}, "
        f"K=8 min {curve8.min():.3g} hits at {first8}, {elapsed:.0f}s",
    )
    assert first5 is not None, f"K=5 aligned error never below 1e-3, min {curve5.min():.3g}"
    assert first8 is not None, f"K=8 aligned error never below 1e-3, min {curve8.min():.3g}"
    assert first5 < first8
    assert elapsed < 900.0


# ---------------------------------------------------------------------------
# 5. Truncated local solves: same communication, comparable error
# ---------------------------------------------------------------------------

def test_partial_solves(stationary_k5, partial_k5):
    exact, t_exact = stationary_k5
    partial, t_partial = partial_k5
    exact_final = float(exact.trace.epsilon_aligned_median[-1])
    partial_final = float(partial.trace.epsilon_aligned_median[-1])
    same_tallies = np.array_equal(
        exact.trace.scalars_fused, partial.trace.scalars_fused
    ) and np.array_equal(
        exact.trace.scalars_disseminated, partial.trace.scalars_disseminated
    )
    elapsed = t_exact + t_partial
    ok = partial_final <= 10.0 * exact_final and same_tallies and elapsed < 900.0
    record_acceptance(
        5, "partial local solves",
        ok,
        f"final aligned eps partial {partial_final:.3g} vs exact {exact_final:.3g} "
        f"(factor {partial_final / exact_final:.2f}), tallies identical: {same_tallies}, {elapsed:.0f}s",
    )
    assert partial_final <= 10.0 * exact_final
    assert same_tallies
    assert elapsed < 900.0


# ---------------------------------------------------------------------------
# 6. Drifting mixture: bounded tracking floor above the stationary floor
# ---------------------------------------------------------------------------

def test_adaptive_tracking(stationary_k5, adaptive_k5):
    stationary, t_stat = stationary_k5
    adaptive, t_adapt = adaptive_k5
    profile = ramp_profile(adaptive.config.iterations)
    window = profile == 1.0
    stationary_floor = float(np.median(stationary.trace.epsilon_aligned_median[window]))
    adaptive_floor = float(np.median(adaptive.trace.epsilon_aligned_median[window]))
    elapsed = t_stat + t_adapt
    ok = (
        adaptive_floor >= 10.0 * stationary_floor
        and adaptive_floor < 1.0
        and elapsed < 900.0
    )
    record_acceptance(
        6, "adaptive tracking",
        ok,
        f"constant-drift floor {adaptive_floor:.3g} vs stationary floor {stationary_floor:.3g} "
        f"(need >= 10x and < 1), {elapsed:.0f}s",
    )
    assert adaptive_floor >= 10.0 * stationary_floor
    assert adaptive_floor < 1.0
    assert elapsed < 900.0


# ---------------------------------------------------------------------------
# 7. Communication accounting is exact in every configuration
# ---------------------------------------------------------------------------

def test_communication_accounting(stationary_k5, stationary_k8, partial_k5, adaptive_k5):
    checked = 0
    exact = True
    for result, _ in (stationary_k5, stationary_k8, partial_k5, adaptive_k5):
        k = result.config.nodes
        n = result.config.samples_per_iteration
        fused = result.trace.scalars_fused
        diss = result.trace.scalars_disseminated
        exact &= bool(np.all(fused == (k - 1) * Q * n))
        exact &= bool(np.all(diss == (k - 1) * Q * Q))
        exact &= all(float(v).is_integer() for v in fused)
        exact &= all(float(v).is_integer() for v in diss)
        checked += fused.size + diss.size
    record_acceptance(
        7, "communication accounting",
        exact, f"{checked} per-iteration tallies match (K-1)*Q*N and (K-1)*Q^2 exactly",
    )
    assert exact


# ---------------------------------------------------------------------------
# 8. Invariant suite under a property-based runner, 100 cases each
# ---------------------------------------------------------------------------

CASES = settings(
    max_examples=100,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.filter_too_much],
)


@CASES
@given(seed=st.integers(0, 10**9), m=st.integers(2, 5), n=st.integers(24, 120))
def whitening_identity_property(seed, m, n):
    rng = np.random.default_rng(seed)
    basis = np.linalg.qr(rng.standard_normal((m, m)))[0]
    mixing = basis * rng.uniform(0.5, 2.0, size=m)
    data = rng.standard_normal((n, m)) @ mixing
    cov = sample_covariance(SampleBatch(data))
    t = whitening_transform(cov).matrix
    assert np.max(np.abs(t.T @ cov.values @ t - np.eye(m))) < 1e-8


@CASES
@given(seed=st.integers(0, 10**9), extra=st.integers(1, 3))
def orthonormal_unmixing_property(seed, extra):
    batch, _ = mixed_scene(2 + extra, 400, seed)
    result = run_fastica(batch, 2, LogCosh(), SolverOptions(rng_seed=seed, max_inner_iters=300))
    w = result.demixing_orthogonal
    assert np.max(np.abs(w.T @ w - np.eye(2))) < 1e-8


@CASES
@given(seed=st.integers(0, 10**9), k=st.integers(2, 3))
def local_constraint_property(seed, k):
    graph = er_graph(k, 0.9, (2,) * k, rng_seed=seed % 100_000)
    batch, _ = mixed_scene(2 * k, 300, seed)
    batch = batch.with_layout(graph.channels)
    states = initial_states(graph, 1, rng_seed=seed % 65_536)
    tree = prune_to_tree(graph, 0)
    per_node = {i: batch.node_block(i) for i in range(k)}
    compressed = {i: compress(states[i], per_node[i]) for i in range(k)}
    stacked = stack_local(per_node[0], fuse_forward(tree, compressed))
    partition, _ = solve_local(stacked, 1, LogCosh(), SolverOptions(rng_seed=seed % 997))
    solution = partition.stacked_matrix()
    r = sample_covariance(SampleBatch(stacked.data)).values
    assert np.max(np.abs(solution.T @ r @ solution - np.eye(1))) < 1e-6


@CASES
@given(
    x=st.floats(-4.0, 4.0, allow_nan=False),
    pick=st.sampled_from(["logcosh", "negexp"]),
)
def curvature_consistency_property(x, pick):
    contrast = LogCosh() if pick == "logcosh" else NegExp()
    h = 1e-6
    numeric = (contrast.df(x + h) - contrast.df(x - h)) / (2.0 * h)
    assert abs(contrast.d2f(x) - numeric) < 1e-6


@CASES
@given(seed=st.integers(0, 10**9), k=st.integers(2, 8), root_pick=st.integers(0, 7))
def tree_pruning_property(seed, k, root_pick):
    graph = er_graph(k, 0.6, (2,) * k, rng_seed=seed % 1_000_000)
    root = root_pick % k
    tree = prune_to_tree(graph, root)
    edges = {(min(v, tree.parent[v]), max(v, tree.parent[v])) for v in range(k) if v != root}
    assert len(edges) == k - 1
    assert all(graph.adjacency[a, b] for a, b in edges)
    members = [node for branch in tree.branches.values() for node in branch]
    assert sorted(members) == [v for v in range(k) if v != root]
    for neighbor, branch in tree.branches.items():
        for node in branch:
            hop = node
            for _ in range(k):
                if tree.parent[hop] == root:
                    break
                hop = tree.parent[hop]
            assert hop == neighbor


@CASES
@given(seed=st.integers(0, 10**9), m=st.integers(1, 5), q=st.integers(1, 4))
def sign_rule_idempotence_property(seed, m, q):
    x = np.random.default_rng(seed).standard_normal((m, q))
    fixed = fix_signs(x)
    assert np.array_equal(fix_signs(fixed), fixed)
    for col in fixed.T:
        if np.any(col):
            assert col[np.argmax(np.abs(col))] > 0


def test_property_invariant_suite():
    t0 = time.perf_counter()
    suite = (
        whitening_identity_property,
        orthonormal_unmixing_property,
        local_constraint_property,
        curvature_consistency_property,
        tree_pruning_property,
        sign_rule_idempotence_property,
    )
    try:
        for prop in suite:
            prop()
    except Exception as exc:
        record_acceptance(8, "invariant suite", False, f"property failed: {exc}")
        raise
    elapsed = time.perf_counter() - t0
    ok = elapsed < 120.0
    record_acceptance(
        8, "invariant suite",
        ok, f"6 invariants x 100 randomized cases, {elapsed:.0f}s",
    )
    assert elapsed < 120.0
