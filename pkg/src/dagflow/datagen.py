"""Synthetic ground-truth networks and samplers.

Ground-truth graphs are Erdos-Renyi DAGs drawn by ordering the nodes with a
random permutation and keeping each forward edge independently, so the
expected edge count is controlled directly (2d edges gives the usual "ER2"
regime).  Mechanisms are linear-Gaussian (weights uniform on +-[0.5, 2],
unit noise by default) or tabular-discrete (Dirichlet(1) rows).  Perfect
interventions replace a node's mechanism with a forced distribution and are
recorded in a per-entry intervention mask.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import graph
from .graph import DagState
from .scores import CONTINUOUS, DISCRETE, Dataset


@dataclass
class LinearGaussianMechanism:
    weights: np.ndarray  # (d, d), nonzero only on graph edges; w[i, j] on i -> j
    noise_vars: np.ndarray  # (d,), all > 0

    kind = CONTINUOUS


@dataclass
class DiscreteMechanism:
    arities: np.ndarray  # (d,)
    cpts: list[np.ndarray]  # per node: (prod of parent arities, arity) rows summing to 1

    kind = DISCRETE


@dataclass
class GroundTruth:
    graph: DagState
    mechanism: LinearGaussianMechanism | DiscreteMechanism

    def __post_init__(self):
        adj = self.graph.adjacency
        if isinstance(self.mechanism, LinearGaussianMechanism):
            m = self.mechanism
            if (np.asarray(m.weights)[~adj] != 0).any():
                raise ValueError("mechanism weights off the graph's edges")
            if (np.asarray(m.noise_vars) <= 0).any():
                raise ValueError("noise variances must be positive")
        else:
            for j, cpt in enumerate(self.mechanism.cpts):
                if not np.allclose(cpt.sum(axis=1), 1.0, atol=1e-9):
                    raise ValueError(f"CPT rows of node {j} do not sum to 1")


def sample_er_dag(d: int, expected_edges: float | None = None,
                  rng: np.random.Generator | None = None) -> DagState:
    """Random DAG: random topological order, forward edges kept with
    probability expected_edges / C(d, 2)."""
    rng = np.random.default_rng() if rng is None else rng
    if expected_edges is None:
        expected_edges = 2.0 * d
    max_edges = d * (d - 1) / 2
    if not 0 <= expected_edges <= max_edges:
        raise ValueError(f"expected_edges must be in [0, {max_edges}]")
    p = expected_edges / max_edges if max_edges else 0.0
    order = rng.permutation(d)
    adj = np.zeros((d, d), dtype=bool)
    for a in range(d):
        keep = rng.random(d - a - 1) < p
        adj[order[a], order[a + 1:][keep]] = True
    return graph.dag_from_adjacency(adj)


def make_linear_gaussian(g: DagState, rng: np.random.Generator,
                         weight_low: float = 0.5, weight_high: float = 2.0,
                         noise_var: float = 1.0) -> GroundTruth:
    d = g.n_nodes
    mag = rng.uniform(weight_low, weight_high, size=(d, d))
    sign = np.where(rng.random((d, d)) < 0.5, -1.0, 1.0)
    weights = np.where(g.adjacency, mag * sign, 0.0)
    return GroundTruth(g, LinearGaussianMechanism(weights, np.full(d, noise_var)))


def make_discrete(g: DagState, rng: np.random.Generator, arity: int = 2) -> GroundTruth:
    d = g.n_nodes
    arities = np.full(d, arity, dtype=np.int64)
    cpts = []
    for j in range(d):
        q = int(np.prod(arities[list(g.parents(j))], dtype=np.int64)) if g.parents(j) else 1
        cpts.append(rng.dirichlet(np.ones(arity), size=q))
    return GroundTruth(g, DiscreteMechanism(arities, cpts))


def _topological_order(g: DagState) -> list[int]:
    indeg = g.adjacency.sum(axis=0).astype(int)
    ready = [int(i) for i in np.flatnonzero(indeg == 0)]
    order = []
    while ready:
        u = ready.pop()
        order.append(u)
        for v in np.flatnonzero(g.adjacency[u]):
            indeg[v] -= 1
            if indeg[v] == 0:
                ready.append(int(v))
    return order


def _parent_config_index(codes: np.ndarray, parents: tuple[int, ...],
                         arities: np.ndarray) -> np.ndarray:
    idx = np.zeros(codes.shape[0], dtype=np.int64)
    stride = 1
    for par in parents:
        idx += codes[:, par] * stride
        stride *= int(arities[par])
    return idx


@dataclass
class Regime:
    """One experimental condition: which nodes are clamped and how.

    ``forced`` maps each target node to a forced marginal: a probability
    vector over categories (discrete) or a (mean, std) pair (continuous).
    An empty ``forced`` is plain observational sampling.
    """

    n_samples: int
    forced: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("regime must have n_samples >= 1")


def _ancestral_sample(gt: GroundTruth, n: int, rng: np.random.Generator,
                      forced: dict) -> np.ndarray:
    g, mech = gt.graph, gt.mechanism
    d = g.n_nodes
    if isinstance(mech, LinearGaussianMechanism):
        values = np.zeros((n, d))
        for j in _topological_order(g):
            if j in forced:
                mean, std = forced[j]
                if std < 0:
                    raise ValueError(f"forced std for node {j} must be >= 0")
                values[:, j] = mean + std * rng.standard_normal(n)
            else:
                mean = values @ mech.weights[:, j]
                values[:, j] = mean + np.sqrt(mech.noise_vars[j]) * rng.standard_normal(n)
        return values
    codes = np.zeros((n, d), dtype=np.int64)
    for j in _topological_order(g):
        r = int(mech.arities[j])
        if j in forced:
            probs = np.asarray(forced[j], dtype=np.float64)
            if probs.shape != (r,) or (probs < 0).any() or abs(probs.sum() - 1) > 1e-9:
                raise ValueError(f"forced distribution for node {j} is not a length-{r} simplex point")
            cdf = np.cumsum(probs)
        else:
            rows = _parent_config_index(codes, g.parents(j), mech.arities)
            cdf = np.cumsum(mech.cpts[j][rows], axis=1)
        u = rng.random(n)
        if cdf.ndim == 1:
            codes[:, j] = np.searchsorted(cdf, u, side="right").clip(0, r - 1)
        else:
            codes[:, j] = (u[:, None] >= cdf).sum(axis=1).clip(0, r - 1)
    return codes


def _names(d: int) -> list[str]:
    return [f"x{i}" for i in range(d)]


def sample_linear_gaussian(gt: GroundTruth, n: int, rng: np.random.Generator) -> Dataset:
    if not isinstance(gt.mechanism, LinearGaussianMechanism):
        raise ValueError("ground truth does not have a linear-Gaussian mechanism")
    return Dataset(_ancestral_sample(gt, n, rng, {}), _names(gt.graph.n_nodes), CONTINUOUS)


def sample_discrete(gt: GroundTruth, n: int, rng: np.random.Generator) -> Dataset:
    if not isinstance(gt.mechanism, DiscreteMechanism):
        raise ValueError("ground truth does not have a discrete mechanism")
    return Dataset(_ancestral_sample(gt, n, rng, {}), _names(gt.graph.n_nodes), DISCRETE)


def sample_interventional(gt: GroundTruth, regimes: list[Regime],
                          rng: np.random.Generator) -> Dataset:
    """Concatenate per-regime samples; the mask flags clamped entries."""
    d = gt.graph.n_nodes
    if not regimes:
        raise ValueError("at least one regime is required (use forced={} for observational)")
    blocks, masks = [], []
    for regime in regimes:
        for j in regime.forced:
            if not 0 <= j < d:
                raise ValueError(f"intervention target {j} out of range")
        block = _ancestral_sample(gt, regime.n_samples, rng, regime.forced)
        mask = np.zeros((regime.n_samples, d), dtype=np.int8)
        for j in regime.forced:
            mask[:, j] = 1
        blocks.append(block)
        masks.append(mask)
    kind = gt.mechanism.kind
    return Dataset(np.concatenate(blocks), _names(d), kind, np.concatenate(masks))


def standardize(data: Dataset) -> Dataset:
    """Column-wise (x - mean) / sample sd; refuses constant columns."""
    if data.kind != CONTINUOUS:
        raise ValueError("standardize applies to continuous data")
    sd = data.values.std(axis=0, ddof=1)
    if (sd == 0).any():
        bad = [data.variable_names[i] for i in np.flatnonzero(sd == 0)]
        raise ValueError(f"zero-variance columns: {bad}")
    values = (data.values - data.values.mean(axis=0)) / sd
    return Dataset(values, list(data.variable_names), CONTINUOUS, data.intervention_mask)


# -- ground-truth files ----------------------------------------------------


def ground_truth_to_json(gt: GroundTruth) -> dict:
    obj = {"graph": graph.graph_to_json(gt.graph)}
    mech = gt.mechanism
    if isinstance(mech, LinearGaussianMechanism):
        obj["mechanism"] = {
            "kind": "linear-gaussian",
            "weights": mech.weights.tolist(),
            "noise_vars": mech.noise_vars.tolist(),
        }
    else:
        obj["mechanism"] = {
            "kind": "discrete",
            "arities": mech.arities.tolist(),
            "cpts": [c.tolist() for c in mech.cpts],
        }
    return obj


def ground_truth_from_json(obj: dict) -> GroundTruth:
    g = graph.graph_from_json(obj["graph"])
    mech = obj["mechanism"]
    if mech["kind"] == "linear-gaussian":
        return GroundTruth(g, LinearGaussianMechanism(
            np.asarray(mech["weights"], dtype=np.float64),
            np.asarray(mech["noise_vars"], dtype=np.float64)))
    if mech["kind"] == "discrete":
        return GroundTruth(g, DiscreteMechanism(
            np.asarray(mech["arities"], dtype=np.int64),
            [np.asarray(c, dtype=np.float64) for c in mech["cpts"]]))
    raise ValueError(f"unknown mechanism kind {mech['kind']!r}")


def save_ground_truth(gt: GroundTruth, path: str | Path) -> None:
    Path(path).write_text(json.dumps(ground_truth_to_json(gt), indent=2) + "\n")


def load_ground_truth(path: str | Path) -> GroundTruth:
    return ground_truth_from_json(json.loads(Path(path).read_text()))
