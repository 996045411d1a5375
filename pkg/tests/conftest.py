"""Shared independent oracles used across the suite.

Everything here is deliberately written against the naive definition (DFS
cycle checks, Floyd-Warshall closures, O(J^2) attention) so that module
implementations are checked against code that shares none of their logic.
"""
from __future__ import annotations

import numpy as np


def closure_oracle(adjacency: np.ndarray) -> np.ndarray:
    """Reflexive-transitive closure via Floyd-Warshall (row-vectorized)."""
    d = adjacency.shape[0]
    reach = adjacency.astype(bool) | np.eye(d, dtype=bool)
    for k in range(d):
        reach |= reach[:, k : k + 1] & reach[k : k + 1, :]
    return reach


def has_cycle_dfs(adjacency: np.ndarray) -> bool:
    """Recursive three-color DFS cycle check."""
    d = adjacency.shape[0]
    color = [0] * d  # 0 white, 1 gray, 2 black

    def visit(u: int) -> bool:
        color[u] = 1
        for v in np.flatnonzero(adjacency[u]):
            if color[v] == 1:
                return True
            if color[v] == 0 and visit(int(v)):
                return True
        color[u] = 2
        return False

    return any(color[u] == 0 and visit(u) for u in range(d))


def scratch_mask(adjacency: np.ndarray) -> np.ndarray:
    """Invalid-action mask rebuilt from scratch: adjacency OR closure of
    transpose OR identity."""
    return adjacency.astype(bool) | closure_oracle(adjacency.T.astype(bool))


def random_dag_adjacency(d: int, rng: np.random.Generator, p: float = 0.4) -> np.ndarray:
    """Random DAG by ordering nodes with a random permutation."""
    order = rng.permutation(d)
    adj = np.zeros((d, d), dtype=bool)
    for a in range(d):
        for b in range(a + 1, d):
            if rng.random() < p:
                adj[order[a], order[b]] = True
    return adj


def random_trajectory(d: int, rng: np.random.Generator, max_steps: int | None = None):
    """Roll a uniformly random valid edge-addition trajectory; yields states."""
    from dagflow import graph

    state = graph.new_empty(d)
    steps = 0
    while max_steps is None or steps < max_steps:
        valid = np.argwhere(~graph.action_mask(state))
        if len(valid) == 0:
            return
        i, j = valid[rng.integers(len(valid))]
        state = graph.add_edge(state, graph.EdgeAction(int(i), int(j)))
        steps += 1
        yield state
