"""Communication graphs and doubly-stochastic consensus weights.

Edges are ordered pairs ``(j, i)`` meaning agent ``j`` sends to agent ``i``.
Self-loops are always part of a topology so that every agent mixes its own
state with a positive weight.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "GraphError",
    "GraphTopology",
    "GraphWeights",
    "generate_erdos_renyi",
    "complete_graph",
    "path_graph",
    "metropolis_weights",
    "consensus_contraction_factor",
    "read_edge_list",
    "write_edge_list",
]

STOCHASTIC_TOL = 1e-12
MAX_RETRIES = 1000


class GraphError(ValueError):
    """Invalid topology, invalid weights, or failed random generation."""


@dataclass(frozen=True)
class GraphTopology:
    n_agents: int
    edges: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if self.n_agents < 1:
            raise GraphError(f"n_agents must be positive, got {self.n_agents}")
        edges = set(self.edges)
        for j, i in edges:
            if not (0 <= i < self.n_agents and 0 <= j < self.n_agents):
                raise GraphError(f"edge ({j}, {i}) out of range for {self.n_agents} agents")
        edges.update((i, i) for i in range(self.n_agents))
        object.__setattr__(self, "edges", frozenset(edges))

    def in_neighbors(self, i: int) -> list[int]:
        """Sorted in-neighbors of ``i``, including ``i`` itself."""
        return sorted(j for j, t in self.edges if t == i)

    def is_symmetric(self) -> bool:
        return all((i, j) in self.edges for j, i in self.edges)

    def degrees(self) -> np.ndarray:
        """Number of neighbors per agent, self-loops excluded."""
        deg = np.zeros(self.n_agents, dtype=np.int64)
        for j, i in self.edges:
            if i != j:
                deg[i] += 1
        return deg

    def is_strongly_connected(self) -> bool:
        n = self.n_agents
        fwd: list[list[int]] = [[] for _ in range(n)]
        rev: list[list[int]] = [[] for _ in range(n)]
        for j, i in self.edges:
            fwd[j].append(i)
            rev[i].append(j)
        return _reaches_all(fwd, n) and _reaches_all(rev, n)


def _reaches_all(adj: list[list[int]], n: int) -> bool:
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return bool(seen.all())


@dataclass(frozen=True)
class GraphWeights:
    """Dense doubly-stochastic weight matrix ``a_ij`` with a CSR view of its support.

    The CSR arrays (``indptr``, ``indices``, ``data``) list, for every row
    ``i``, the in-neighbors ``j`` of ``i`` and the weights ``a_ij``. Consensus
    kernels only touch these entries, so an agent never reads state from a
    non-neighbor.
    """

    n_agents: int
    weights: np.ndarray
    indptr: np.ndarray = field(init=False, repr=False)
    indices: np.ndarray = field(init=False, repr=False)
    data: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=np.float64)
        n = self.n_agents
        if w.shape != (n, n):
            raise GraphError(f"weights must be {n}x{n}, got {w.shape}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise GraphError("weights must be finite and nonnegative")
        if np.any(np.abs(w.sum(axis=1) - 1.0) > STOCHASTIC_TOL):
            raise GraphError("weight rows do not sum to one")
        if np.any(np.abs(w.sum(axis=0) - 1.0) > STOCHASTIC_TOL):
            raise GraphError("weight columns do not sum to one")
        if np.any(np.diag(w) <= 0):
            raise GraphError("every agent needs a positive self-weight")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        rows, cols = np.nonzero(w)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        object.__setattr__(self, "indptr", np.cumsum(indptr))
        object.__setattr__(self, "indices", cols.astype(np.int64))
        object.__setattr__(self, "data", w[rows, cols].copy())
        if consensus_contraction_factor(self) >= 1.0:
            raise GraphError("weight matrix does not contract disagreement (graph not connected?)")

    def topology(self) -> GraphTopology:
        rows, cols = np.nonzero(self.weights)
        return GraphTopology(self.n_agents, frozenset(zip(cols.tolist(), rows.tolist())))


def generate_erdos_renyi(n: int, p: float, seed: int) -> GraphTopology:
    """Draw a connected undirected Erdos-Renyi graph.

    Each unordered pair is linked independently with probability ``p``. If
    the draw is disconnected the seed is incremented and the draw repeated,
    at most ``MAX_RETRIES`` times.
    """
    if n < 2:
        raise GraphError(f"need at least 2 agents, got {n}")
    if not 0.0 < p <= 1.0:
        raise GraphError(f"edge probability must lie in (0, 1], got {p}")
    iu, ju = np.triu_indices(n, k=1)
    for attempt in range(MAX_RETRIES):
        rng = np.random.default_rng(seed + attempt)
        keep = rng.random(iu.size) < p
        edges = set(zip(iu[keep].tolist(), ju[keep].tolist()))
        edges |= {(j, i) for i, j in edges}
        topo = GraphTopology(n, frozenset(edges))
        if topo.is_strongly_connected():
            return topo
    raise GraphError(
        f"no connected graph after {MAX_RETRIES} draws; p={p} is too small for n={n}"
    )


def complete_graph(n: int) -> GraphTopology:
    return GraphTopology(n, frozenset((j, i) for i in range(n) for j in range(n)))


def path_graph(n: int) -> GraphTopology:
    edges = {(i, i + 1) for i in range(n - 1)} | {(i + 1, i) for i in range(n - 1)}
    return GraphTopology(n, frozenset(edges))


def metropolis_weights(topo: GraphTopology) -> GraphWeights:
    """Metropolis-Hastings weights ``1 / (1 + max(deg_i, deg_j))`` on an undirected graph."""
    if not topo.is_symmetric():
        raise GraphError("Metropolis weights need a symmetric edge set")
    if not topo.is_strongly_connected():
        raise GraphError("topology is not connected")
    n = topo.n_agents
    deg = topo.degrees()
    w = np.zeros((n, n))
    for j, i in topo.edges:
        if i != j:
            w[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
    w[np.diag_indices(n)] = 1.0 - w.sum(axis=1)
    return GraphWeights(n, w)


def consensus_contraction_factor(w: GraphWeights) -> float:
    """Second-largest singular value of the weight matrix.

    For a doubly-stochastic matrix this is the spectral norm of ``A - 11^T/N``,
    i.e. the worst-case contraction of a zero-mean vector in one mixing step.
    """
    n = w.n_agents
    dev = np.asarray(w.weights) - np.full((n, n), 1.0 / n)
    return float(np.linalg.norm(dev, 2))


def write_edge_list(topo: GraphTopology, path: str | Path) -> None:
    """Write ``i j`` lines (0-indexed, sender first) after an ``# n_agents`` header."""
    lines = [f"# n_agents {topo.n_agents}"]
    lines += [f"{j} {i}" for j, i in sorted(topo.edges) if i != j]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edge_list(path: str | Path) -> GraphTopology:
    n = None
    edges: set[tuple[int, int]] = set()
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "n_agents":
                n = int(parts[1])
            continue
        a, b = line.split()
        edges.add((int(a), int(b)))
    if n is None:
        n = 1 + max((max(e) for e in edges), default=0)
    return GraphTopology(n, frozenset(edges))
