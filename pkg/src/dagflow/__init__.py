"""Posterior inference over Bayesian-network structures.

A sequential sampler builds DAGs one edge at a time behind an acyclicity
mask, and is trained so that its terminating distribution matches the
Bayesian posterior defined by a modular score (BGe for continuous data, BDe
for discrete, with an interventional variant).  Exact enumeration up to five
nodes provides ground truth for verifying the approximation.
"""

from .graph import DagState, EdgeAction, action_mask, add_edge, new_empty
from .scores import Dataset, ScorerConfig, make_scorer
from .policy import PolicyConfig, init_params, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, sample_posterior, train

__version__ = "0.1.0"

__all__ = [
    "DagState", "EdgeAction", "action_mask", "add_edge", "new_empty",
    "Dataset", "ScorerConfig", "make_scorer",
    "PolicyConfig", "init_params", "load_checkpoint", "save_checkpoint",
    "TrainConfig", "sample_posterior", "train",
    "__version__",
]
