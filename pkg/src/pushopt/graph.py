"""Time-varying strongly connected directed graphs and their mixing matrices.

Edges are stored as (sender, receiver) pairs. The mixing matrix built from a
graph is column-stochastic: column j is owned by sender j and every positive
entry in it equals 1/(out_degree(j) + 1), covering the receivers of j plus j
itself. Schedules are pure functions of (base seed, t) so that replaying a
run reproduces the exact same graph sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import rng


@dataclass(frozen=True)
class DirectedGraph:
    """A simple directed graph on nodes 0..n-1 with no self loops."""

    n: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"node count must be >= 1, got {self.n}")
        object.__setattr__(self, "edges", frozenset((int(i), int(j)) for i, j in self.edges))
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self loop ({i}, {j}) not allowed")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) out of range for n={self.n}")

    def out_degrees(self) -> np.ndarray:
        d = np.zeros(self.n, dtype=np.int64)
        for i, _ in self.edges:
            d[i] += 1
        return d

    def adjacency(self) -> np.ndarray:
        """Dense adjacency A with A[i, j] = 1 iff i sends to j."""
        a = np.zeros((self.n, self.n), dtype=np.int8)
        for i, j in self.edges:
            a[i, j] = 1
        return a

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "edges": sorted(map(list, self.edges))})

    @classmethod
    def from_json(cls, text: str) -> "DirectedGraph":
        obj = json.loads(text)
        return cls(n=obj["n"], edges=frozenset(tuple(e) for e in obj["edges"]))


def directed_ring(n: int) -> DirectedGraph:
    """Ring where node i sends to node (i+1) mod n."""
    if n < 2:
        raise ValueError(f"a directed ring needs at least 2 nodes, got {n}")
    return DirectedGraph(n, frozenset((i, (i + 1) % n) for i in range(n)))


def reversed_ring(n: int) -> DirectedGraph:
    """Ring where node i sends to node (i-1) mod n."""
    if n < 2:
        raise ValueError(f"a directed ring needs at least 2 nodes, got {n}")
    return DirectedGraph(n, frozenset((i, (i - 1) % n) for i in range(n)))


def complete_digraph(n: int) -> DirectedGraph:
    if n < 2:
        raise ValueError(f"a complete digraph needs at least 2 nodes, got {n}")
    return DirectedGraph(n, frozenset((i, j) for i in range(n) for j in range(n) if i != j))


def is_strongly_connected(g: DirectedGraph) -> bool:
    """True iff a single strongly connected component covers all nodes."""
    if g.n == 1:
        return True
    if not g.edges:
        return False
    rows, cols = zip(*g.edges)
    adj = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(g.n, g.n))
    ncomp, _ = connected_components(adj, directed=True, connection="strong")
    return int(ncomp) == 1


def er_directed(n: int, p: float, gen: np.random.Generator) -> DirectedGraph:
    """Erdos-Renyi digraph: each ordered pair kept with probability p.

    If the sample is not strongly connected, the directed ring is overlaid,
    which restores strong connectivity while keeping the graph sparse.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"edge probability must be in (0, 1], got {p}")
    if n < 2:
        raise ValueError(f"need at least 2 nodes, got {n}")
    mask = gen.random((n, n)) < p
    np.fill_diagonal(mask, False)
    edges = set(zip(*np.nonzero(mask)))
    g = DirectedGraph(n, frozenset(edges))
    if not is_strongly_connected(g):
        edges.update(directed_ring(n).edges)
        g = DirectedGraph(n, frozenset(edges))
    return g


def mixing_matrix(g: DirectedGraph) -> np.ndarray:
    """Column-stochastic mixing weights for one round of communication.

    W[i, j] = 1/(out_degree(j) + 1) when j sends to i or i == j, else 0.
    Columns are renormalized by their float sum so each sums to 1 up to a
    few ulps, which keeps long conservation sums tight.
    """
    n = g.n
    w = np.zeros((n, n), dtype=np.float64)
    inv = 1.0 / (g.out_degrees() + 1.0)
    w[np.arange(n), np.arange(n)] = inv
    for j, i in g.edges:
        w[i, j] = inv[j]
    w /= w.sum(axis=0, keepdims=True)
    return w


@dataclass(frozen=True)
class TopologySchedule:
    """Deterministic map t -> (graph, mixing matrix).

    Modes:
      static   -- one fixed graph for all t
      cyclic   -- a fixed list of graphs visited round-robin
      er-random -- a fresh ER graph per step, seeded by mix(seed, t)
    """

    mode: str
    n: int
    graphs: tuple[DirectedGraph, ...] = ()
    p: float = 0.0
    seed: int = 0
    _mats: tuple[np.ndarray, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in ("static", "cyclic", "er-random"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if self.mode in ("static", "cyclic"):
            if not self.graphs:
                raise ValueError(f"{self.mode} schedule needs at least one graph")
            for g in self.graphs:
                if g.n != self.n:
                    raise ValueError("all graphs in a schedule must share n")
                if not is_strongly_connected(g):
                    raise ValueError("every scheduled graph must be strongly connected")
            object.__setattr__(self, "_mats", tuple(mixing_matrix(g) for g in self.graphs))
        else:
            if not 0.0 < self.p <= 1.0:
                raise ValueError(f"edge probability must be in (0, 1], got {self.p}")

    def at(self, t: int) -> tuple[DirectedGraph, np.ndarray]:
        if t < 0:
            raise ValueError(f"iteration index must be >= 0, got {t}")
        if self.mode == "static":
            return self.graphs[0], self._mats[0]
        if self.mode == "cyclic":
            k = t % len(self.graphs)
            return self.graphs[k], self._mats[k]
        gen = rng.spawn_generator(self.seed, rng.STREAM_TOPOLOGY, t)
        g = er_directed(self.n, self.p, gen)
        return g, mixing_matrix(g)

    def mixing_stack(self) -> np.ndarray | None:
        """All mixing matrices as one (cycle, n, n) array, or None for er-random."""
        if self.mode == "er-random":
            return None
        return np.ascontiguousarray(np.stack(self._mats))


def schedule_at(s: TopologySchedule, t: int) -> tuple[DirectedGraph, np.ndarray]:
    return s.at(t)


def static_schedule(g: DirectedGraph) -> TopologySchedule:
    return TopologySchedule(mode="static", n=g.n, graphs=(g,))


def cyclic_schedule(graphs) -> TopologySchedule:
    graphs = tuple(graphs)
    return TopologySchedule(mode="cyclic", n=graphs[0].n, graphs=graphs)


def er_random_schedule(n: int, p: float, seed: int) -> TopologySchedule:
    return TopologySchedule(mode="er-random", n=n, p=p, seed=seed)


def cyclic_er_rings(n: int, p: float = 0.1, seed: int = 7) -> TopologySchedule:
    """The standard experiment topology: one fixed ER digraph, a directed
    ring, and the reversed ring, visited cyclically."""
    gen = rng.spawn_generator(seed, rng.STREAM_TOPOLOGY, 0)
    er = er_directed(n, p, gen)
    return cyclic_schedule([er, directed_ring(n), reversed_ring(n)])
