"""DAG states of the edge-by-edge sampler.

A state bundles the adjacency matrix of a DAG over ``d`` labeled nodes with
the transitive closure of its transpose graph.  The closure (diagonal forced
to 1 by convention) is what makes the action mask cheap: the OR of adjacency
and closure marks every edge addition that is illegal, either because the
edge already exists, is a self-loop, or would close a cycle.  Adding an edge
updates the closure in O(d^2) with a single outer-product OR, so no cycle
check is ever run during sampling.

States are immutable: ``add_edge`` returns a new state and the backing
arrays are write-protected, so states can be shared freely across threads.
Node identity is the column index of the dataset; names live elsewhere.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np


class EdgeAction(NamedTuple):
    """A candidate edge addition ``source -> target``."""

    source: int
    target: int


class InvalidActionError(ValueError):
    """Raised when an edge addition is masked.

    ``reason`` is one of ``"edge-exists"``, ``"self-loop"``, ``"cycle"``.
    """

    def __init__(self, action: EdgeAction, reason: str):
        self.action = action
        self.reason = reason
        super().__init__(f"action {action.source}->{action.target} invalid: {reason}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DagState:
    """A DAG plus the incrementally maintained action-mask components.

    ``closure_transpose[i, j]`` is 1 iff node j reaches node i in the graph
    (diagonal fixed to 1), i.e. it is the transitive closure of the transpose
    graph.  ``adjacency | closure_transpose`` is the invalid-action mask.
    """

    n_nodes: int
    adjacency: np.ndarray
    closure_transpose: np.ndarray
    num_edges: int = field(default=0)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DagState):
            return NotImplemented
        return self.n_nodes == other.n_nodes and self.key() == other.key()

    def __hash__(self) -> int:
        return hash((self.n_nodes, self.key()))

    def key(self) -> bytes:
        """Canonical byte encoding of the adjacency matrix."""
        return self.adjacency.tobytes()

    def parents(self, node: int) -> tuple[int, ...]:
        """Parent indices of ``node``, sorted ascending."""
        return tuple(int(i) for i in np.flatnonzero(self.adjacency[:, node]))

    def edges(self) -> list[tuple[int, int]]:
        """Edge list ``(source, target)``, sorted lexicographically."""
        return [(int(i), int(j)) for i, j in np.argwhere(self.adjacency)]


def new_empty(d: int) -> DagState:
    """The fully disconnected graph over ``d`` nodes (the sampler's start state)."""
    if d < 1:
        raise ValueError(f"number of nodes must be >= 1, got {d}")
    adjacency = np.zeros((d, d), dtype=bool)
    closure = np.eye(d, dtype=bool)
    return DagState(d, _frozen(adjacency), _frozen(closure), 0)


def action_mask(state: DagState) -> np.ndarray:
    """d x d boolean mask; True marks an INVALID edge addition.

    Consumers that need a softmax mask over the d^2 action cells should
    invert (valid = ~mask).
    """
    return state.adjacency | state.closure_transpose


def num_valid_actions(state: DagState) -> int:
    return state.n_nodes**2 - int(np.count_nonzero(action_mask(state)))


def add_edge(state: DagState, action: EdgeAction) -> DagState:
    """Return the state with ``action`` applied; O(d^2).

    The closure of the transpose gains the outer product of its target
    column with its source row, which accounts for every new path created
    by the edge.
    """
    s, t = action
    d = state.n_nodes
    if not (0 <= s < d and 0 <= t < d):
        raise ValueError(f"action {action} out of range for d={d}")
    if s == t:
        raise InvalidActionError(action, "self-loop")
    if state.adjacency[s, t]:
        raise InvalidActionError(action, "edge-exists")
    if state.closure_transpose[s, t]:
        raise InvalidActionError(action, "cycle")

    adjacency = state.adjacency.copy()
    adjacency[s, t] = True
    closure = state.closure_transpose.copy()
    closure |= np.outer(closure[:, t], closure[s, :])
    return DagState(d, _frozen(adjacency), _frozen(closure), state.num_edges + 1)


def count_parent_states(state: DagState) -> int:
    """Number of predecessor states in the sampler's lattice.

    Deleting any edge of a DAG yields a DAG, so this is exactly the edge
    count; it is the support size of the uniform backward policy.
    """
    return state.num_edges


def transitive_closure(adjacency: np.ndarray) -> np.ndarray:
    """Reflexive-transitive closure by repeated boolean squaring."""
    d = adjacency.shape[0]
    reach = adjacency.astype(bool) | np.eye(d, dtype=bool)
    while True:
        nxt = reach | (reach @ reach)
        if np.array_equal(nxt, reach):
            return reach
        reach = nxt


def is_acyclic(adjacency: np.ndarray) -> bool:
    adjacency = adjacency.astype(bool)
    reach = transitive_closure(adjacency)
    # a cycle exists iff some node starts a length>=1 path back to itself
    return not (adjacency @ reach).diagonal().any()


def dag_from_adjacency(adjacency: np.ndarray) -> DagState:
    """Build a state from a full adjacency matrix, recomputing the closure.

    Used when graphs come from outside the sampler (files, generators).
    """
    adjacency = np.asarray(adjacency).astype(bool)
    d = adjacency.shape[0]
    if adjacency.shape != (d, d):
        raise ValueError(f"adjacency must be square, got {adjacency.shape}")
    if adjacency.diagonal().any():
        raise ValueError("adjacency has a self-loop")
    if not is_acyclic(adjacency):
        raise ValueError("adjacency contains a cycle")
    closure = transitive_closure(adjacency.T)
    return DagState(d, _frozen(adjacency.copy()), _frozen(closure), int(adjacency.sum()))


def dag_from_edges(d: int, edges: Iterable[tuple[int, int]]) -> DagState:
    adjacency = np.zeros((d, d), dtype=bool)
    for i, j in edges:
        adjacency[i, j] = True
    return dag_from_adjacency(adjacency)


def graph_to_json(state: DagState) -> dict:
    """Canonical JSON form: ``{"n": d, "edges": [[i, j], ...]}`` sorted."""
    return {"n": state.n_nodes, "edges": [list(e) for e in state.edges()]}


def graph_from_json(obj: dict) -> DagState:
    return dag_from_edges(int(obj["n"]), [(int(i), int(j)) for i, j in obj["edges"]])
