"""Modular Bayesian scores over DAG structures.

The unnormalized log-posterior of a graph G decomposes into one local term
per node given its parent set, plus a structure-prior term.  Adding an edge
i -> j therefore changes only node j's local term, which is the delta score
the trainer consumes.  Scorers bind a dataset at construction and memoize
local terms by (node, parents), so delta scores are cheap across a whole
training run.

Two closed-form marginal likelihoods are provided: BGe for continuous data
(normal-Wishart prior) and BDe for discrete data (Dirichlet prior), plus a
BDe variant for mixed observational/interventional data that drops perfectly
intervened samples from the intervened node's own counts.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln

from .graph import DagState, EdgeAction, InvalidActionError, action_mask

CONTINUOUS = "continuous"
DISCRETE = "discrete"

VARIANT_BGE = "bge"
VARIANT_BDE = "bde"
VARIANT_BDE_INT = "bde-int"


class ConfigError(ValueError):
    """Invalid scorer hyperparameters."""


class ScoreDegeneracyError(ArithmeticError):
    """Sufficient statistics too degenerate for the score to be defined."""


class LocalScoreKey(NamedTuple):
    node: int
    parents: tuple[int, ...]


@dataclass
class Dataset:
    """An N x d data matrix with column names.

    ``values`` holds reals for continuous data and small nonnegative integer
    category codes for discrete data.  ``intervention_mask`` (same shape,
    optional) flags entries (n, j) where variable j was set by a perfect
    intervention in sample n.
    """

    values: np.ndarray
    variable_names: list[str]
    kind: str
    intervention_mask: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ValueError(f"values must be a nonempty N x d matrix, got {self.values.shape}")
        if len(self.variable_names) != self.values.shape[1]:
            raise ValueError("variable_names length must match the number of columns")
        if self.kind not in (CONTINUOUS, DISCRETE):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.kind == DISCRETE:
            self.values = self.values.astype(np.int64)
            if (self.values < 0).any():
                raise ValueError("discrete category codes must be nonnegative")
        else:
            self.values = self.values.astype(np.float64)
        if self.intervention_mask is not None:
            self.intervention_mask = np.asarray(self.intervention_mask).astype(np.int8)
            if self.intervention_mask.shape != self.values.shape:
                raise ValueError("intervention_mask shape must match values")
            if not np.isin(self.intervention_mask, (0, 1)).all():
                raise ValueError("intervention_mask entries must be 0/1")

    @property
    def num_samples(self) -> int:
        return self.values.shape[0]

    @property
    def num_variables(self) -> int:
        return self.values.shape[1]


def concat_datasets(a: Dataset, b: Dataset) -> Dataset:
    """Row-concatenate two datasets with identical schema."""
    if a.kind != b.kind or a.variable_names != b.variable_names:
        raise ValueError("datasets have different schemas")
    if (a.intervention_mask is None) != (b.intervention_mask is None):
        raise ValueError("datasets disagree on intervention masks")
    mask = None
    if a.intervention_mask is not None:
        mask = np.concatenate([a.intervention_mask, b.intervention_mask], axis=0)
    return Dataset(
        np.concatenate([a.values, b.values], axis=0),
        list(a.variable_names),
        a.kind,
        mask,
    )


def save_dataset_csv(data: Dataset, path: str | Path, mask_path: str | Path | None = None) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(data.variable_names)
        fmt = (lambda v: f"{int(v)}") if data.kind == DISCRETE else (lambda v: repr(float(v)))
        for row in data.values:
            writer.writerow([fmt(v) for v in row])
    if data.intervention_mask is not None:
        if mask_path is None:
            raise ValueError("dataset has an intervention mask but no mask_path was given")
        with Path(mask_path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(data.variable_names)
            for row in data.intervention_mask:
                writer.writerow([int(v) for v in row])


def load_dataset_csv(path: str | Path, kind: str, mask_path: str | Path | None = None) -> Dataset:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        names = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    values = np.asarray(rows, dtype=np.float64)
    mask = None
    if mask_path is not None:
        with Path(mask_path).open(newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            mask = np.asarray([[int(float(v)) for v in row] for row in reader if row])
    return Dataset(values, names, kind, mask)


@dataclass
class ScorerConfig:
    """Scorer variant and hyperparameters.

    BGe defaults follow the common reference parametrization: alpha_mu = 1,
    alpha_w = d + 2 and prior scale T = alpha_mu (alpha_w - d - 1) /
    (alpha_mu + 1) * I with zero prior mean.  BDe defaults to an equivalent
    sample size of 1 split uniformly across parent configurations (BDeu).
    The structure prior is uniform over DAGs unless a per-edge penalty
    exp(-beta |E|) is selected.
    """

    variant: str = VARIANT_BGE
    structure_prior: str = "uniform"  # "uniform" | "edge-penalty"
    edge_beta: float = 0.1
    alpha_mu: float = 1.0
    alpha_w: float | None = None
    prior_scale: object | None = None  # scalar or d x d SPD matrix
    prior_mean: object | None = None
    ess: float = 1.0

    def __post_init__(self):
        if self.variant not in (VARIANT_BGE, VARIANT_BDE, VARIANT_BDE_INT):
            raise ConfigError(f"unknown scorer variant {self.variant!r}")
        if self.structure_prior not in ("uniform", "edge-penalty"):
            raise ConfigError(f"unknown structure prior {self.structure_prior!r}")
        if self.alpha_mu <= 0:
            raise ConfigError("alpha_mu must be > 0")
        if self.ess <= 0:
            raise ConfigError("ess must be > 0")


class _ScorerBase:
    """Cache and graph-level plumbing shared by the concrete scorers."""

    def __init__(self, data: Dataset, config: ScorerConfig):
        self.data = data
        self.config = config
        self._cache: dict[LocalScoreKey, float] = {}
        self.num_computes = 0  # cache misses, for tests and diagnostics

    # -- per-node terms ------------------------------------------------

    def local_score(self, node: int, parents: tuple[int, ...]) -> float:
        """Cached log marginal-likelihood contribution of ``node`` given
        ``parents`` (a sorted, duplicate-free tuple excluding ``node``)."""
        key = LocalScoreKey(node, tuple(parents))
        value = self._cache.get(key)
        if value is None:
            d = self.data.num_variables
            if not 0 <= node < d:
                raise ValueError(f"node {node} out of range")
            if node in key.parents or list(key.parents) != sorted(set(key.parents)):
                raise ValueError(f"bad parent set {key.parents} for node {node}")
            value = self._compute_local_score(node, key.parents)
            self.num_computes += 1
            self._cache[key] = value
        return value

    def _compute_local_score(self, node: int, parents: tuple[int, ...]) -> float:
        raise NotImplementedError

    # -- graph-level scores ---------------------------------------------

    def structure_log_prior(self, num_edges: int) -> float:
        if self.config.structure_prior == "edge-penalty":
            return -self.config.edge_beta * num_edges
        return 0.0  # uniform: the shared normalizing constant is dropped

    def log_reward(self, state: DagState) -> float:
        """log of (structure prior x marginal likelihood), up to the shared
        normalizer; a function of the adjacency only."""
        if state.n_nodes != self.data.num_variables:
            raise ValueError("graph and dataset dimensions differ")
        total = self.structure_log_prior(state.num_edges)
        for j in range(state.n_nodes):
            total += self.local_score(j, state.parents(j))
        return total

    def delta_score(self, state: DagState, action: EdgeAction) -> float:
        """Change in log reward from adding ``action``; touches only the
        target node's local term (plus -beta under the edge penalty)."""
        s, t = action
        mask = action_mask(state)
        if mask[s, t]:
            if s == t:
                raise InvalidActionError(action, "self-loop")
            if state.adjacency[s, t]:
                raise InvalidActionError(action, "edge-exists")
            raise InvalidActionError(action, "cycle")
        old_parents = state.parents(t)
        new_parents = tuple(sorted(old_parents + (s,)))
        delta = self.local_score(t, new_parents) - self.local_score(t, old_parents)
        if self.config.structure_prior == "edge-penalty":
            delta -= self.config.edge_beta
        return delta

    def with_data(self, data: Dataset) -> "_ScorerBase":
        """A fresh scorer of the same kind and hyperparameters over ``data``."""
        return make_scorer(data, self.config)


class BGeScorer(_ScorerBase):
    """Closed-form marginal likelihood for linear-Gaussian networks under a
    normal-Wishart prior (mean nu, precision-scale T, dof alpha_w)."""

    def __init__(self, data: Dataset, config: ScorerConfig):
        if data.kind != CONTINUOUS:
            raise ConfigError("BGe requires continuous data")
        super().__init__(data, config)
        x = data.values
        n, d = x.shape
        self.alpha_mu = float(config.alpha_mu)
        self.alpha_w = float(config.alpha_w) if config.alpha_w is not None else d + 2.0
        if self.alpha_w <= d - 1:
            raise ConfigError(f"alpha_w must exceed d - 1 = {d - 1}")

        scale = config.prior_scale
        if scale is None:
            scale = self.alpha_mu * (self.alpha_w - d - 1) / (self.alpha_mu + 1)
        if np.isscalar(scale):
            if scale <= 0:
                raise ConfigError("prior scale must be positive")
            t_mat = float(scale) * np.eye(d)
        else:
            t_mat = np.asarray(scale, dtype=np.float64)
            if t_mat.shape != (d, d):
                raise ConfigError(f"prior scale matrix must be {d} x {d}")
            try:
                np.linalg.cholesky((t_mat + t_mat.T) / 2)
            except np.linalg.LinAlgError as e:
                raise ConfigError("prior scale matrix is not SPD") from e
            if not np.allclose(t_mat, t_mat.T):
                raise ConfigError("prior scale matrix is not symmetric")

        nu = np.zeros(d) if config.prior_mean is None else np.asarray(config.prior_mean, dtype=np.float64)
        if nu.shape != (d,):
            raise ConfigError(f"prior mean must have length {d}")

        xbar = x.mean(axis=0)
        centered = x - xbar
        scatter = centered.T @ centered
        shift = (n * self.alpha_mu) / (n + self.alpha_mu)
        self._t_mat = t_mat
        self._r_mat = t_mat + scatter + shift * np.outer(nu - xbar, nu - xbar)
        self._logdet_t: dict[tuple[int, ...], float] = {(): 0.0}
        self._logdet_r: dict[tuple[int, ...], float] = {(): 0.0}

    def _logdet(self, mat: np.ndarray, cache: dict, subset: tuple[int, ...]) -> float:
        value = cache.get(subset)
        if value is None:
            sign, value = np.linalg.slogdet(mat[np.ix_(subset, subset)])
            if sign <= 0:
                raise ScoreDegeneracyError(
                    f"non-positive-definite statistics on columns {subset}"
                )
            cache[subset] = value
        return value

    def _compute_local_score(self, node: int, parents: tuple[int, ...]) -> float:
        n, d = self.data.values.shape
        p = len(parents)
        family = tuple(sorted(parents + (node,)))
        shift = self.alpha_w - d + p  # dof left after projecting onto the family
        out = (
            -0.5 * n * math.log(math.pi)
            + 0.5 * (math.log(self.alpha_mu) - math.log(n + self.alpha_mu))
            + gammaln((n + shift + 1) / 2)
            - gammaln((shift + 1) / 2)
            + 0.5 * (shift + 1) * self._logdet(self._t_mat, self._logdet_t, family)
            - 0.5 * (n + shift + 1) * self._logdet(self._r_mat, self._logdet_r, family)
        )
        if p:
            out -= 0.5 * shift * self._logdet(self._t_mat, self._logdet_t, parents)
            out += 0.5 * (n + shift) * self._logdet(self._r_mat, self._logdet_r, parents)
        return float(out)


class BDeScorer(_ScorerBase):
    """Dirichlet-multinomial marginal likelihood with a uniform split of the
    equivalent sample size (BDeu).  With ``interventional=True``, samples in
    which a node was perfectly intervened on are excluded from that node's
    own counts (they still inform every other node)."""

    def __init__(self, data: Dataset, config: ScorerConfig, interventional: bool = False):
        if data.kind != DISCRETE:
            raise ConfigError("BDe requires discrete data")
        if interventional and data.intervention_mask is None:
            raise ConfigError("interventional BDe requires an intervention mask")
        super().__init__(data, config)
        self.interventional = interventional
        codes = data.values
        self.arities = np.maximum(codes.max(axis=0) + 1, 2).astype(np.int64)
        if interventional:
            self._keep_rows = [np.flatnonzero(data.intervention_mask[:, j] == 0) for j in range(codes.shape[1])]
        else:
            self._keep_rows = None

    def _compute_local_score(self, node: int, parents: tuple[int, ...]) -> float:
        codes = self.data.values
        rows = self._keep_rows[node] if self.interventional else slice(None)
        child = codes[rows, node]
        r = int(self.arities[node])
        if child.size == 0:
            return 0.0  # every sample intervened on this node: no data term
        if parents:
            cfg = np.zeros(child.shape[0], dtype=np.int64)
            stride = 1
            for par in parents:
                cfg += codes[rows, par] * stride
                stride *= int(self.arities[par])
            _, cfg_idx = np.unique(cfg, return_inverse=True)
            n_cfg = cfg_idx.max() + 1
            q = float(np.prod(self.arities[list(parents)], dtype=np.float64))
        else:
            cfg_idx = np.zeros(child.shape[0], dtype=np.int64)
            n_cfg = 1
            q = 1.0
        counts = np.bincount(cfg_idx * r + child, minlength=n_cfg * r).reshape(n_cfg, r)
        a_cell = self.config.ess / (q * r)
        a_row = self.config.ess / q
        out = n_cfg * gammaln(a_row) - gammaln(a_row + counts.sum(axis=1)).sum()
        out += gammaln(a_cell + counts).sum() - counts.size * gammaln(a_cell)
        return float(out)


def make_scorer(data: Dataset, config: ScorerConfig) -> _ScorerBase:
    if config.variant == VARIANT_BGE:
        return BGeScorer(data, config)
    if config.variant == VARIANT_BDE:
        return BDeScorer(data, config, interventional=False)
    if config.variant == VARIANT_BDE_INT:
        return BDeScorer(data, config, interventional=True)
    raise ConfigError(f"unknown scorer variant {config.variant!r}")
