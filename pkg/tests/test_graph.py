"""Graphs, mixing matrices, and schedules against independent oracles."""

import json

import numpy as np
import pytest

from pushopt import graph, rng
from pushopt.graph import (
    DirectedGraph,
    TopologySchedule,
    complete_digraph,
    cyclic_er_rings,
    cyclic_schedule,
    directed_ring,
    er_directed,
    er_random_schedule,
    is_strongly_connected,
    mixing_matrix,
    reversed_ring,
    schedule_at,
    static_schedule,
)


def bfs_reachable(g: DirectedGraph, start: int, reverse: bool = False) -> set:
    """Independent reachability oracle (plain BFS, no library call)."""
    adj = {i: [] for i in range(g.n)}
    for i, j in g.edges:
        if reverse:
            adj[j].append(i)
        else:
            adj[i].append(j)
    seen = {start}
    frontier = [start]
    while frontier:
        node = frontier.pop()
        for nxt in adj[node]:
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return seen


def strongly_connected_oracle(g: DirectedGraph) -> bool:
    return (len(bfs_reachable(g, 0)) == g.n
            and len(bfs_reachable(g, 0, reverse=True)) == g.n)


def test_directed_ring_small():
    assert directed_ring(3).edges == {(0, 1), (1, 2), (2, 0)}
    assert directed_ring(2).edges == {(0, 1), (1, 0)}
    with pytest.raises(ValueError):
        directed_ring(1)


def test_reversed_ring_small():
    assert reversed_ring(3).edges == {(0, 2), (1, 0), (2, 1)}
    assert np.all(reversed_ring(4).out_degrees() == 1)
    with pytest.raises(ValueError):
        reversed_ring(1)


def test_reversed_ring_is_flipped_ring():
    for n in (2, 5, 9):
        flipped = {(j, i) for i, j in directed_ring(n).edges}
        assert reversed_ring(n).edges == flipped


def test_er_p1_is_complete():
    gen = rng.spawn_generator(0, 1)
    g = er_directed(6, 1.0, gen)
    assert g.edges == complete_digraph(6).edges
    assert strongly_connected_oracle(g)


def test_er_strongly_connected_by_construction():
    g = er_directed(20, 0.2, rng.spawn_generator(7, 1))
    assert strongly_connected_oracle(g)
    assert is_strongly_connected(g)


def test_er_sparse_triggers_ring_overlay():
    g = er_directed(10, 0.01, rng.spawn_generator(3, 1))
    assert strongly_connected_oracle(g)
    assert np.all(g.out_degrees() >= 1)  # overlay guarantees the ring edges


def test_er_invalid_p():
    with pytest.raises(ValueError):
        er_directed(5, 0.0, rng.spawn_generator(0, 1))
    with pytest.raises(ValueError):
        er_directed(5, -0.2, rng.spawn_generator(0, 1))


def test_graph_validation():
    with pytest.raises(ValueError):
        DirectedGraph(3, frozenset({(0, 0)}))  # self loop
    with pytest.raises(ValueError):
        DirectedGraph(3, frozenset({(0, 5)}))  # out of range
    with pytest.raises(ValueError):
        DirectedGraph(0, frozenset())


def test_mixing_ring3_columns():
    W = mixing_matrix(directed_ring(3))
    for j in range(3):
        col = W[:, j]
        positive = col[col > 0]
        assert positive.shape == (2,)
        assert np.allclose(positive, 0.5)
        assert col[j] > 0 and col[(j + 1) % 3] > 0  # diagonal + successor row


def test_mixing_complete4_uniform():
    W = mixing_matrix(complete_digraph(4))
    assert np.allclose(W, 0.25)


def test_mixing_column_stochastic_invariants():
    gen_seeds = [(6, 0.3, 0), (12, 0.15, 1), (25, 0.08, 2), (40, 0.5, 3)]
    for n, p, s in gen_seeds:
        g = er_directed(n, p, rng.spawn_generator(s, 1))
        W = mixing_matrix(g)
        assert np.max(np.abs(W.sum(axis=0) - 1.0)) <= 1e-12
        assert np.all(W >= 0.0) and np.all(W <= 1.0)
        d = g.out_degrees()
        for j in range(n):
            col = W[:, j]
            positive = col[col > 0]
            assert positive.shape[0] == d[j] + 1
            assert np.allclose(positive, 1.0 / (d[j] + 1), rtol=1e-12)


def test_is_strongly_connected_cases():
    assert is_strongly_connected(directed_ring(5))
    assert not is_strongly_connected(DirectedGraph(2, frozenset({(0, 1)})))
    assert is_strongly_connected(DirectedGraph(1, frozenset()))


def test_schedule_cyclic_indexing():
    er = er_directed(6, 0.4, rng.spawn_generator(5, 1))
    ring = directed_ring(6)
    rev = reversed_ring(6)
    sched = cyclic_schedule([er, ring, rev])
    g4, _ = schedule_at(sched, 4)
    assert g4.edges == ring.edges  # 4 mod 3 == 1
    g0, _ = schedule_at(sched, 0)
    assert g0.edges == er.edges


def test_schedule_static():
    sched = static_schedule(directed_ring(4))
    for t in (0, 3, 100):
        g, W = sched.at(t)
        assert g.edges == directed_ring(4).edges
        assert np.array_equal(W, sched.at(0)[1])


def test_schedule_er_random_replay():
    sched = er_random_schedule(8, 0.3, seed=11)
    for t in (0, 5, 17):
        g1, W1 = sched.at(t)
        g2, W2 = sched.at(t)
        assert g1.edges == g2.edges
        assert np.array_equal(W1, W2)
        assert strongly_connected_oracle(g1)
    ga, _ = sched.at(0)
    gb, _ = sched.at(1)
    assert ga.edges != gb.edges or True  # distinct draws allowed to collide


def test_schedule_emits_strongly_connected():
    sched = cyclic_er_rings(15, 0.1, seed=3)
    for t in range(6):
        g, _ = sched.at(t)
        assert strongly_connected_oracle(g)


def test_schedule_validation():
    with pytest.raises(ValueError):
        TopologySchedule(mode="bogus", n=4)
    with pytest.raises(ValueError):
        TopologySchedule(mode="cyclic", n=4)
    with pytest.raises(ValueError):
        # not strongly connected
        TopologySchedule(mode="static", n=2,
                         graphs=(DirectedGraph(2, frozenset({(0, 1)})),))
    with pytest.raises(ValueError):
        er_random_schedule(4, 0.0, 1)


def test_mixing_stack():
    sched = cyclic_er_rings(7, 0.2, seed=1)
    stack = sched.mixing_stack()
    assert stack.shape == (3, 7, 7)
    for t in range(3):
        assert np.array_equal(stack[t], sched.at(t)[1])
    assert er_random_schedule(7, 0.2, 1).mixing_stack() is None


def test_graph_json_roundtrip():
    g = er_directed(9, 0.3, rng.spawn_generator(2, 1))
    text = g.to_json()
    parsed = json.loads(text)
    assert set(parsed) == {"n", "edges"}
    g2 = DirectedGraph.from_json(text)
    assert g2.n == g.n and g2.edges == g.edges
