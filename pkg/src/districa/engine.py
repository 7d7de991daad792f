"""One iteration of the distributed ICA protocol, simulated in-process.

Per iteration, a round-robin updating node q is chosen and the network is
pruned to a BFS tree rooted at q. Every node compresses its local block of
the current batch through its filter block (N x M_k -> N x Q), the
compressed streams are summed leaf-to-root along the tree, and q stacks its
own raw channels with the per-neighbor sums. Solving the ICA problem on
that stacked signal (including its local whitening, which stands in for
network-wide pre-whitening) yields a filter that splits into q's new block
plus one Q x Q matrix per root neighbor; those matrices are disseminated
into their branches and right-multiplied onto every branch node's block.

Message passing is simulated with explicit per-message accounting but no
real transport: determinism is what makes the exact equivalence tests
possible. All payloads are immutable once created.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError, RankDeficiencyError
from .fastica import ContrastFunction, IcaResult, SolverOptions, run_fastica
from .network import NetworkGraph, TreeTopology, prune_to_tree
from .stats import SampleBatch


@dataclass(frozen=True)
class NodeState:
    """One node's current filter block (M_k x Q)."""

    node_id: int
    block: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.block, dtype=np.float64)
        if arr.ndim != 2:
            raise InvalidInputError(f"filter block must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("filter block contains non-finite values")
        object.__setattr__(self, "block", arr)

    @property
    def n_channels(self) -> int:
        return self.block.shape[0]

    @property
    def n_components(self) -> int:
        return self.block.shape[1]


@dataclass
class CommTally:
    """Scalar counts transmitted during fusion (inward) and dissemination (outward)."""

    scalars_fused: int = 0
    scalars_disseminated: int = 0
    per_node: dict[int, list[int]] = field(default_factory=dict)

    def _entry(self, node: int) -> list[int]:
        return self.per_node.setdefault(node, [0, 0])

    def add_fused(self, node: int, scalars: int):
        self.scalars_fused += scalars
        self._entry(node)[0] += scalars

    def add_disseminated(self, node: int, scalars: int):
        self.scalars_disseminated += scalars
        self._entry(node)[1] += scalars


@dataclass(frozen=True)
class StackedLocalBatch:
    """The data available at the updating node: own channels then per-neighbor sums.

    Column layout is [(own node, M_q), (n_1, Q), ..., (n_j, Q)] with
    neighbors in ascending node-id order.
    """

    data: np.ndarray
    own_node: int
    own_channels: int
    neighbor_ids: tuple[int, ...]
    compressed_channels: int

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        expected = self.own_channels + len(self.neighbor_ids) * self.compressed_channels
        if arr.shape[1] != expected:
            raise InvalidInputError(
                f"stacked batch has {arr.shape[1]} columns, layout implies {expected}"
            )
        if tuple(sorted(self.neighbor_ids)) != tuple(self.neighbor_ids):
            raise InvalidInputError("neighbor blocks must be in ascending node-id order")
        object.__setattr__(self, "data", arr)

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def layout(self) -> tuple[tuple[int, int], ...]:
        blocks = [(self.own_node, self.own_channels)]
        blocks.extend((n, self.compressed_channels) for n in self.neighbor_ids)
        return tuple(blocks)


@dataclass(frozen=True)
class SolutionPartition:
    """The local solution split by the stacked layout: q's new block plus G per neighbor."""

    updated_root_block: np.ndarray
    g_blocks: dict[int, np.ndarray]

    def stacked_matrix(self) -> np.ndarray:
        """Reassemble the full stacked-filter matrix in layout order."""
        blocks = [self.updated_root_block]
        blocks.extend(self.g_blocks[n] for n in sorted(self.g_blocks))
        return np.vstack(blocks)


@dataclass(frozen=True)
class IterationRecord:
    """Everything one iteration produced, for experiment traces and tests."""

    iteration: int
    updating_node: int
    global_filter: np.ndarray
    objective: float
    tally: CommTally
    source_estimates: np.ndarray


def compress(state: NodeState, local_batch: SampleBatch) -> SampleBatch:
    """Project a node's local samples through its filter block (N x M_k -> N x Q)."""
    if local_batch.n_channels != state.n_channels:
        raise InvalidInputError(
            f"node {state.node_id}: batch has {local_batch.n_channels} channels, "
            f"filter block expects {state.n_channels}"
        )
    return SampleBatch(local_batch.data @ state.block)


def fuse_forward(
    tree: TreeTopology,
    compressed: dict[int, SampleBatch],
    tally: CommTally | None = None,
) -> dict[int, SampleBatch]:
    """Sum compressed streams leaf-to-root; returns the per-root-neighbor totals.

    Nodes are processed in reverse BFS order, which reproduces the
    leaf-initiated schedule: a node forwards once it has heard from all its
    tree neighbors except the one it forwards to. Each non-root node
    transmits exactly one N x Q message.
    """
    missing = [k for k in tree.order if k not in compressed]
    if missing:
        raise InvalidInputError(f"missing compressed batches for nodes {missing}")
    messages: dict[int, np.ndarray] = {}
    for node in reversed(tree.order):
        if node == tree.root:
            continue
        total = compressed[node].data.copy()
        for child in tree.children(node):
            total += messages[child]
        messages[node] = total
        if tally is not None:
            tally.add_fused(node, total.size)
    return {n: SampleBatch(messages[n]) for n in tree.neighbor_sets[tree.root]}


def stack_local(own_batch: SampleBatch, fused: dict[int, SampleBatch]) -> StackedLocalBatch:
    """Concatenate the updating node's raw channels with the fused neighbor streams."""
    if len(own_batch.channel_layout) != 1:
        raise InvalidInputError("own batch must be a single-node block")
    own_node = own_batch.channel_layout[0][0]
    neighbor_ids = tuple(sorted(fused))
    widths = {fused[n].n_channels for n in neighbor_ids}
    if len(widths) > 1:
        raise InvalidInputError(f"fused streams disagree on channel count: {sorted(widths)}")
    q_channels = widths.pop() if widths else 0
    columns = [own_batch.data]
    for n in neighbor_ids:
        if fused[n].n_samples != own_batch.n_samples:
            raise InvalidInputError(
                f"neighbor {n} stream has {fused[n].n_samples} samples, own batch has "
                f"{own_batch.n_samples}"
            )
        columns.append(fused[n].data)
    return StackedLocalBatch(
        np.hstack(columns), own_node, own_batch.n_channels, neighbor_ids, q_channels
    )


def solve_local(
    stacked: StackedLocalBatch,
    n_components: int,
    contrast: ContrastFunction,
    opts: SolverOptions,
    center: bool = True,
    restarts: int = 1,
) -> tuple[SolutionPartition, IcaResult]:
    """Solve the compressed ICA problem at the updating node and split the result.

    Runs the full FastICA solver (local whitening included) on the stacked
    batch, then partitions the raw filter by the stacked layout: the first
    M_q rows become the updating node's new block and each following Q-row
    chunk the G matrix of one neighbor.

    ``restarts`` > 1 repeats the whole extraction from fresh random seeds
    and keeps the filter with the largest batch objective. Deflation can
    land on an inferior stationary point from an unlucky start; a handful
    of restarts makes that failure mode rare enough to preserve the
    monotone ascent the update step is built on. The first attempt uses
    ``opts`` unchanged, so restarts=1 is the plain solver.
    """
    if stacked.neighbor_ids and n_components != stacked.compressed_channels:
        raise InvalidInputError(
            f"extracting {n_components} components but neighbor streams carry "
            f"{stacked.compressed_channels} channels"
        )
    if stacked.n_channels > stacked.n_samples:
        raise InvalidInputError(
            f"stacked batch is rank deficient by construction: "
            f"{stacked.n_channels} channels > {stacked.n_samples} samples"
        )
    if restarts < 1:
        raise InvalidInputError(f"restarts must be >= 1, got {restarts}")
    batch = SampleBatch(stacked.data)
    best = None
    for attempt in range(int(restarts)):
        attempt_opts = opts
        if attempt > 0:
            sub = np.random.SeedSequence([int(opts.rng_seed), attempt])
            attempt_opts = replace(opts, rng_seed=int(sub.generate_state(1)[0]))
        result = run_fastica(batch, n_components, contrast, attempt_opts, center=center)
        objective = float(contrast.f(stacked.data @ result.demixing_raw).mean(axis=0).sum())
        if best is None or objective > best[0]:
            best = (objective, result)
    result = best[1]
    x = result.demixing_raw
    root_block = x[: stacked.own_channels]
    g_blocks = {}
    offset = stacked.own_channels
    for n in stacked.neighbor_ids:
        g_blocks[n] = x[offset : offset + stacked.compressed_channels]
        offset += stacked.compressed_channels
    return SolutionPartition(root_block, g_blocks), result


def orient_partition(partition: SolutionPartition, carry: np.ndarray) -> SolutionPartition:
    """Flip solution columns whose orientation disagrees with the carried-in filter.

    The compressed problem determines each column only up to sign, and the
    solver's own sign rule keys off whichever entry of the local stacked
    matrix happens to be largest. That pick is different at different
    updating nodes, so under round-robin updates the network-wide filter
    can flip columns back and forth every iteration without the objective
    ever noticing (the contrast is even). Orienting each column against
    the stacked carry-in filter (the updating node's current block over
    identity G blocks) removes those swings; a column is left alone when
    its inner product with the carry-in is exactly zero.
    """
    stacked = partition.stacked_matrix()
    if carry.shape != stacked.shape:
        raise InvalidInputError(
            f"carry filter shape {carry.shape} does not match solution {stacked.shape}"
        )
    dots = np.sum(carry * stacked, axis=0)
    signs = np.where(dots < 0, -1.0, 1.0)
    if np.all(signs == 1.0):
        return partition
    return SolutionPartition(
        partition.updated_root_block * signs,
        {n: g * signs for n, g in partition.g_blocks.items()},
    )


def apply_update(
    states: list[NodeState],
    partition: SolutionPartition,
    tree: TreeTopology,
    tally: CommTally | None = None,
) -> list[NodeState]:
    """Install the local solution network-wide.

    The root replaces its block; every node in branch B_n right-multiplies
    its block by G_n. Dissemination is charged one Q x Q message per tree
    edge below the root (equivalently, one per non-root node).
    """
    if set(partition.g_blocks) != set(tree.branches):
        raise InvalidInputError(
            f"partition carries G for {sorted(partition.g_blocks)}, "
            f"tree has root neighbors {sorted(tree.branches)}"
        )
    g_for_node: dict[int, np.ndarray] = {}
    for n, members in tree.branches.items():
        for k in members:
            g_for_node[k] = partition.g_blocks[n]

    new_states = []
    for state in states:
        if state.node_id == tree.root:
            new_states.append(replace(state, block=partition.updated_root_block.copy()))
        else:
            new_states.append(replace(state, block=state.block @ g_for_node[state.node_id]))

    if tally is not None:
        for v, u in tree.parent.items():
            if v != tree.root:
                g = g_for_node[v]
                tally.add_disseminated(u, g.size)
    return new_states


def global_filter(states: list[NodeState]) -> np.ndarray:
    """Stack all node blocks in node-id order into the network-wide filter."""
    ordered = sorted(states, key=lambda s: s.node_id)
    return np.vstack([s.block for s in ordered])


def initial_states(graph: NetworkGraph, n_components: int, rng_seed: int = 0) -> list[NodeState]:
    """Independent standard-normal filter blocks for every node."""
    rng = np.random.default_rng(rng_seed)
    return [
        NodeState(k, rng.standard_normal((m, n_components)))
        for k, m in enumerate(graph.channels)
    ]


def local_solver_seed(base_seed: int, iteration: int) -> int:
    """Stable per-iteration seed for the updating node's solver."""
    return int(np.random.SeedSequence([int(base_seed), int(iteration)]).generate_state(1)[0])


class ReusingBatchProvider:
    """Hands out batches, drawing a fresh one only every ``reuse`` calls.

    ``reuse`` = 1 draws fresh samples every iteration; larger values feed
    the same batch to several consecutive updating nodes before resampling.
    Calls are assumed sequential in the iteration index.
    """

    def __init__(self, draw, reuse: int = 1):
        if reuse < 1:
            raise InvalidInputError(f"reuse count must be >= 1, got {reuse}")
        self._draw = draw
        self._reuse = int(reuse)
        self._batch: SampleBatch | None = None
        self._uses = 0

    def __call__(self, iteration: int) -> SampleBatch:
        if self._batch is None or self._uses >= self._reuse:
            self._batch = self._draw(iteration)
            self._uses = 0
        self._uses += 1
        return self._batch


def _split_by_node(batch: SampleBatch, graph: NetworkGraph) -> dict[int, SampleBatch]:
    layout = tuple(batch.channel_layout)
    expected = tuple(enumerate(graph.channels))
    if layout != expected:
        raise InvalidInputError(
            f"batch layout {layout} does not match the graph's node blocks {expected}"
        )
    return {k: batch.node_block(k) for k, _ in layout}


INCUMBENT_CONSTRAINT_TOL = 1e-6


def _keep_better_incumbent(
    partition: SolutionPartition,
    carry: np.ndarray,
    stacked: StackedLocalBatch,
    contrast: ContrastFunction,
    center: bool,
    n_components: int,
) -> SolutionPartition:
    """Fall back to the carried-in filter when it beats the fresh solve.

    Monotone ascent of the update rule rests on the local solve returning
    a point at least as good as the current filter, which is itself a
    feasible point of the local problem whenever the batch is the one it
    was computed on. Deflation occasionally lands below it; keeping the
    incumbent in that case (root block unchanged, every G the identity)
    restores the guarantee. A carry that violates the local constraint,
    as any fresh batch makes it, is never admitted.
    """
    data = stacked.data
    if center:
        data = data - data.mean(axis=0)
    r = data.T @ data / data.shape[0]
    gram = carry.T @ r @ carry
    if np.linalg.norm(gram - np.eye(n_components)) > INCUMBENT_CONSTRAINT_TOL:
        return partition
    solved = float(contrast.f(stacked.data @ partition.stacked_matrix()).mean(axis=0).sum())
    incumbent = float(contrast.f(stacked.data @ carry).mean(axis=0).sum())
    if incumbent <= solved:
        return partition
    eye = np.eye(n_components)
    return SolutionPartition(
        carry[: stacked.own_channels].copy(),
        {n: eye.copy() for n in stacked.neighbor_ids},
    )


def districa_iteration(
    graph: NetworkGraph,
    states: list[NodeState],
    batch_provider,
    iteration: int,
    contrast: ContrastFunction,
    opts: SolverOptions,
    center: bool = True,
    restarts: int = 1,
) -> tuple[list[NodeState], IterationRecord]:
    """Run one full round: compress, fuse, solve locally, disseminate, update.

    The updating node rotates round-robin with the iteration index. Returns
    the new states plus a record holding the stacked global filter, the
    batch objective value at the new filter, the communication tally, and
    the Q extracted source estimates. ``restarts`` is forwarded to the
    local solve; the solution's column signs are oriented against the
    carried-in filter before dissemination.
    """
    k = graph.n_nodes
    if len(states) != k:
        raise InvalidInputError(f"{len(states)} states for {k} nodes")
    states = sorted(states, key=lambda s: s.node_id)
    q_node = iteration % k
    tree = prune_to_tree(graph, q_node)
    batch = batch_provider(iteration)
    per_node = _split_by_node(batch, graph)

    tally = CommTally()
    compressed = {k_id: compress(states[k_id], per_node[k_id]) for k_id in per_node}
    fused = fuse_forward(tree, compressed, tally)
    stacked = stack_local(per_node[q_node], fused)

    n_components = states[q_node].n_components
    local_opts = replace(opts, rng_seed=local_solver_seed(opts.rng_seed, iteration))
    try:
        partition, _ = solve_local(
            stacked, n_components, contrast, local_opts, center=center, restarts=restarts
        )
    except RankDeficiencyError as exc:
        raise RankDeficiencyError(
            f"iteration {iteration}, updating node {q_node}: {exc}"
        ) from exc

    if stacked.neighbor_ids:
        # The local sign rule depends on which node solves, so a rotating
        # root can flip columns every round; re-orienting against the
        # carried-in filter removes that cycle. A single isolated node has
        # a stable rule already and stays exactly the centralized solver.
        carry = np.vstack(
            [states[q_node].block]
            + [np.eye(n_components)] * len(stacked.neighbor_ids)
        )
        partition = orient_partition(partition, carry)
        partition = _keep_better_incumbent(
            partition, carry, stacked, contrast, center, n_components
        )
    estimates = stacked.data @ partition.stacked_matrix()
    objective = float(contrast.f(estimates).mean(axis=0).sum())
    new_states = apply_update(states, partition, tree, tally)

    record = IterationRecord(
        iteration=iteration,
        updating_node=q_node,
        global_filter=global_filter(new_states),
        objective=objective,
        tally=tally,
        source_estimates=estimates,
    )
    return new_states, record
