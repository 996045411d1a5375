"""Evaluation of sampled graph collections.

Distances to a reference graph (SHD, with a reversal counting as a single
change), ranking quality of edge marginals (AUROC with midrank ties), joint
predictive scores on held-out data, and Markov-equivalence-class summaries
showing how the sampled mass spreads over equivalent DAGs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .exact import estimate_feature_marginals
from .graph import DagState
from .scores import Dataset, concat_datasets


def shd(g: DagState, g_star: DagState) -> int:
    """Edge changes (add / remove / reverse, one each) between two DAGs."""
    if g.n_nodes != g_star.n_nodes:
        raise ValueError("graphs have different node counts")
    diff = g.adjacency != g_star.adjacency
    # an unordered pair counts once, whether one or both directions differ
    return int(np.triu(diff | diff.T, k=1).sum())


@dataclass
class BootstrapMean:
    mean: float
    ci_low: float
    ci_high: float

    def as_tuple(self):
        return (self.mean, self.ci_low, self.ci_high)


def _bootstrap_mean(values: np.ndarray, num_bootstrap: int, seed: int) -> BootstrapMean:
    rng = np.random.default_rng(seed)
    n = len(values)
    idx = rng.integers(0, n, size=(num_bootstrap, n))
    means = values[idx].mean(axis=1)
    lo, hi = np.percentile(means, [2.5, 97.5])
    return BootstrapMean(float(values.mean()), float(lo), float(hi))


def expected_shd(samples: list[DagState], g_star: DagState,
                 num_bootstrap: int = 1000, seed: int = 0) -> BootstrapMean:
    """Mean SHD to the reference graph with a percentile bootstrap 95% CI."""
    if not samples:
        raise ValueError("expected_shd needs at least one sample")
    values = np.array([shd(g, g_star) for g in samples], dtype=np.float64)
    return _bootstrap_mean(values, num_bootstrap, seed)


def expected_num_edges(samples: list[DagState],
                       num_bootstrap: int = 1000, seed: int = 0) -> BootstrapMean:
    if not samples:
        raise ValueError("expected_num_edges needs at least one sample")
    values = np.array([g.num_edges for g in samples], dtype=np.float64)
    return _bootstrap_mean(values, num_bootstrap, seed)


def auroc_from_marginals(marginals: np.ndarray, g_star: DagState) -> float:
    """AUROC of per-cell edge marginals against the reference adjacency,
    over off-diagonal cells, via the rank-sum formulation with midranks."""
    d = g_star.n_nodes
    off = ~np.eye(d, dtype=bool)
    labels = g_star.adjacency[off]
    scores_ = np.asarray(marginals, dtype=np.float64)[off]
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("reference graph must have both present and absent edges")
    ranks = rankdata(scores_)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auroc_edges(samples: list[DagState], g_star: DagState) -> float:
    marginals = estimate_feature_marginals(samples, "edge").values
    return auroc_from_marginals(marginals, g_star)


def heldout_joint_loglik(samples: list[DagState], scorer,
                         heldout: Dataset | None) -> list[float]:
    """Per-sample log P(G, D' | D) up to the shared log-evidence constant.

    The joint factors as P(G) P(D, D' | G) / P(D); dropping the shared
    P(D) leaves the reward of G scored on the concatenated data.  With no
    held-out data the predictive term is zero and this is just the reward
    on the training data.
    """
    if heldout is None:
        combined_scorer = scorer
    else:
        combined_scorer = scorer.with_data(concat_datasets(scorer.data, heldout))
    return [float(combined_scorer.log_reward(g)) for g in samples]


# -- Markov equivalence --------------------------------------------------


def mec_key(g: DagState):
    """Canonical (skeleton, v-structures) key; equal keys iff same MEC.

    V-structures are colliders i -> k <- j with i and j non-adjacent,
    recorded as (i, k, j) with i < j.
    """
    adj = g.adjacency
    skeleton = tuple(sorted((int(i), int(j)) for i, j in np.argwhere(adj | adj.T) if i < j))
    vstructs = []
    for k in range(g.n_nodes):
        parents = np.flatnonzero(adj[:, k])
        for a in range(len(parents)):
            for b in range(a + 1, len(parents)):
                i, j = int(parents[a]), int(parents[b])
                if not (adj[i, j] or adj[j, i]):
                    vstructs.append((i, int(k), j))
    return (skeleton, tuple(sorted(vstructs)))


@dataclass
class MecGroup:
    key: tuple
    num_distinct_dags: int
    num_samples: int
    best_log_reward: float


def mec_coverage(samples: list[DagState], scorer) -> list[MecGroup]:
    """Group samples by MEC; report distinct-DAG counts and the best log
    reward per class, sorted by score descending."""
    if not samples:
        raise ValueError("mec_coverage needs at least one sample")
    groups: dict = {}
    for g in samples:
        key = mec_key(g)
        distinct, stats = groups.setdefault(key, (set(), [0, -np.inf]))
        distinct.add(g.key())
        stats[0] += 1
        stats[1] = max(stats[1], scorer.log_reward(g))
    out = [MecGroup(key, len(distinct), stats[0], float(stats[1]))
           for key, (distinct, stats) in groups.items()]
    out.sort(key=lambda grp: grp.best_log_reward, reverse=True)
    return out


# -- report ----------------------------------------------------------------


@dataclass
class EvalReport:
    expected_shd: BootstrapMean
    auroc: float
    expected_num_edges: BootstrapMean
    heldout_joint_loglik: list[float] | None
    mec_summary: list[MecGroup]

    def to_json(self) -> dict:
        return {
            "expected_shd": self.expected_shd.mean,
            "expected_shd_ci95": [self.expected_shd.ci_low, self.expected_shd.ci_high],
            "auroc": self.auroc,
            "expected_num_edges": self.expected_num_edges.mean,
            "expected_num_edges_ci95": [self.expected_num_edges.ci_low,
                                        self.expected_num_edges.ci_high],
            "heldout_joint_loglik": self.heldout_joint_loglik,
            "heldout_constant": "shared log-evidence omitted",
            "mec_summary": [
                {"mec_key": repr(grp.key), "num_distinct_dags": grp.num_distinct_dags,
                 "num_samples": grp.num_samples, "best_log_reward": grp.best_log_reward}
                for grp in self.mec_summary
            ],
        }


def evaluate_samples(samples: list[DagState], g_star: DagState, scorer,
                     heldout: Dataset | None = None, num_bootstrap: int = 1000,
                     seed: int = 0) -> EvalReport:
    return EvalReport(
        expected_shd=expected_shd(samples, g_star, num_bootstrap, seed),
        auroc=auroc_edges(samples, g_star),
        expected_num_edges=expected_num_edges(samples, num_bootstrap, seed),
        heldout_joint_loglik=(None if heldout is None
                              else heldout_joint_loglik(samples, scorer, heldout)),
        mec_summary=mec_coverage(samples, scorer),
    )


def save_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_json(), indent=2) + "\n")


def mec_summary_to_csv(groups: list[MecGroup], path: str | Path) -> None:
    with Path(path).open("w") as fh:
        fh.write("rank,num_distinct_dags,num_samples,best_log_reward,mec_key\n")
        for rank, grp in enumerate(groups):
            fh.write(f"{rank},{grp.num_distinct_dags},{grp.num_samples},"
                     f"{grp.best_log_reward!r},\"{grp.key}\"\n")
