"""Sensor-network topology: random connected graphs and per-iteration pruned trees.

Every iteration of the distributed solver routes data to one updating node
over a tree. The tree is the breadth-first shortest-path tree rooted at that
node, which automatically keeps every edge between the root and its
neighbors (they all sit at depth 1) and gives each remaining node a unique
path to the root. ``branches`` groups the non-root nodes by the root
neighbor their path passes through.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GraphGenerationError, InvalidInputError

# Consecutive disconnected draws tolerated before generation gives up.
MAX_DISCONNECTED_DRAWS = 1000


def _bfs_component(adjacency: np.ndarray, start: int) -> set[int]:
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adjacency[u]):
            v = int(v)
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


@dataclass(frozen=True)
class NetworkGraph:
    """Undirected connected graph with a per-node sensor (channel) count.

    ``resamples`` records how many disconnected draws were rejected when the
    graph was generated randomly (0 for hand-built graphs).
    """

    adjacency: np.ndarray
    channels: tuple[int, ...]
    resamples: int = field(default=0, compare=False)

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise InvalidInputError(f"adjacency must be square, got {adj.shape}")
        k = adj.shape[0]
        if k < 1:
            raise InvalidInputError("graph needs at least one node")
        if np.any(adj != adj.T):
            raise InvalidInputError("adjacency must be symmetric")
        if np.any(np.diag(adj)):
            raise InvalidInputError("self-loops are not allowed")
        channels = tuple(int(c) for c in self.channels)
        if len(channels) != k:
            raise InvalidInputError(f"{len(channels)} channel counts for {k} nodes")
        if any(c < 1 for c in channels):
            raise InvalidInputError("every node needs at least one channel")
        if len(_bfs_component(adj, 0)) != k:
            raise InvalidInputError("graph is not connected")
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "channels", channels)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def total_channels(self) -> int:
        return sum(self.channels)

    def neighbors(self, node: int) -> tuple[int, ...]:
        return tuple(int(v) for v in np.flatnonzero(self.adjacency[node]))


@dataclass(frozen=True)
class TreeTopology:
    """A spanning tree rooted at the updating node, with branch bookkeeping.

    ``parent`` maps every node to its tree parent (the root to itself);
    ``order`` lists nodes root-first in BFS order, so reversing it schedules
    leaves before their parents. ``branches`` maps each root neighbor n to
    the sorted tuple of nodes whose path to the root passes through n.
    """

    root: int
    parent: dict[int, int]
    neighbor_sets: dict[int, tuple[int, ...]]
    branches: dict[int, tuple[int, ...]]
    order: tuple[int, ...]

    @property
    def n_nodes(self) -> int:
        return len(self.parent)

    def children(self, node: int) -> tuple[int, ...]:
        return tuple(v for v in self.neighbor_sets[node] if self.parent[v] == node)


def prune_to_tree(graph: NetworkGraph, root: int) -> TreeTopology:
    """Breadth-first shortest-path tree rooted at ``root``.

    Ties break toward the lowest node id, so identical inputs always yield
    identical trees. Every edge incident to the root survives pruning.
    """
    k = graph.n_nodes
    if not 0 <= root < k:
        raise InvalidInputError(f"root {root} out of range for {k} nodes")
    parent = {root: root}
    order = [root]
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v in graph.neighbors(u):  # ascending ids: deterministic tie-break
            if v not in parent:
                parent[v] = u
                order.append(v)
                queue.append(v)
    if len(parent) != k:
        raise InvalidInputError("graph is not connected")

    tree_neighbors: dict[int, list[int]] = {u: [] for u in range(k)}
    for v, u in parent.items():
        if v != root:
            tree_neighbors[u].append(v)
            tree_neighbors[v].append(u)
    neighbor_sets = {u: tuple(sorted(vs)) for u, vs in tree_neighbors.items()}

    branches: dict[int, list[int]] = {n: [] for n in neighbor_sets[root]}
    for v in range(k):
        if v == root:
            continue
        node = v
        while parent[node] != root:
            node = parent[node]
        branches[node].append(v)
    branch_map = {n: tuple(sorted(vs)) for n, vs in branches.items()}

    return TreeTopology(root, parent, neighbor_sets, branch_map, tuple(order))


def er_graph(
    n_nodes: int, edge_probability: float, channels, rng_seed: int = 0
) -> NetworkGraph:
    """Connected Erdos-Renyi draw: resample with the next seed until connected.

    Deterministic per seed; the number of rejected draws is recorded on the
    returned graph.
    """
    if n_nodes < 2:
        raise InvalidInputError(f"need at least 2 nodes, got {n_nodes}")
    if not 0.0 < edge_probability <= 1.0:
        raise InvalidInputError(f"edge probability must lie in (0, 1], got {edge_probability}")
    channels = tuple(int(c) for c in channels)
    if len(channels) != n_nodes:
        raise InvalidInputError(f"{len(channels)} channel counts for {n_nodes} nodes")

    for attempt in range(MAX_DISCONNECTED_DRAWS):
        rng = np.random.default_rng(rng_seed + attempt)
        upper = rng.random((n_nodes, n_nodes)) < edge_probability
        adj = np.triu(upper, k=1)
        adj = adj | adj.T
        if len(_bfs_component(adj, 0)) == n_nodes:
            return NetworkGraph(adj, channels, resamples=attempt)
    raise GraphGenerationError(
        f"no connected graph in {MAX_DISCONNECTED_DRAWS} draws (K={n_nodes}, p={edge_probability})"
    )


def save_graph(graph: NetworkGraph, path) -> None:
    """Write the edge-list format: header "K M_1 ... M_K", then one "u v" per line."""
    lines = [" ".join([str(graph.n_nodes), *map(str, graph.channels)])]
    rows, cols = np.nonzero(np.triu(graph.adjacency, k=1))
    lines.extend(f"{int(u)} {int(v)}" for u, v in zip(rows, cols))
    Path(path).write_text("\n".join(lines) + "\n")


def load_graph(path) -> NetworkGraph:
    """Read the edge-list format written by ``save_graph`` (zero-based node ids)."""
    text = Path(path).read_text()
    lines = [ln for ln in (raw.strip() for raw in text.splitlines()) if ln]
    if not lines:
        raise InvalidInputError(f"{path}: empty graph file")
    header = lines[0].split()
    try:
        k = int(header[0])
        channels = [int(c) for c in header[1:]]
    except ValueError as exc:
        raise InvalidInputError(f"{path}: malformed header {lines[0]!r}") from exc
    if len(channels) != k:
        raise InvalidInputError(f"{path}: header names {len(channels)} channel counts for {k} nodes")
    adj = np.zeros((k, k), dtype=bool)
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 2:
            raise InvalidInputError(f"{path}: malformed edge line {ln!r}")
        u, v = int(parts[0]), int(parts[1])
        if not (0 <= u < k and 0 <= v < k) or u == v:
            raise InvalidInputError(f"{path}: invalid edge {u} {v}")
        adj[u, v] = adj[v, u] = True
    return NetworkGraph(adj, channels)
