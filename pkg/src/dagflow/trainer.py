"""Off-policy training of the edge-addition sampler.

Transitions are collected from parallel environments following the current
policy with epsilon-uniform exploration, stored with their delta scores in a
FIFO replay buffer, and replayed in minibatches against the detailed-balance
objective: for a transition G -> G' the squared residual of

    delta_score + log P_B(G | G') + log P(stop | G)
        - log P(G' | G) - log P_target(stop | G')

where the backward policy P_B is uniform over G' minus one edge (so the term
is -log num_edges(G')) and the termination probability at G' comes from a
periodically synchronized target copy of the parameters.  Driving every
residual to zero makes the sampler's terminating distribution proportional
to the reward.  Stop actions reset their environment and are not stored;
both termination terms of the loss are evaluated at the stored endpoints.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import exact, policy
from .graph import DagState, EdgeAction, action_mask, add_edge, new_empty
from .policy import STOP, PolicyConfig


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, loss: float):
        self.step = step
        super().__init__(f"non-finite loss {loss!r} at step {step}")


@dataclass
class Transition:
    """One stored edge addition with everything the loss needs."""

    state: DagState
    action: EdgeAction
    next_state: DagState
    delta_score: float
    num_edges_next: int


class ReplayBuffer:
    """Bounded FIFO ring buffer with uniform sampling (with replacement)."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._write = 0

    def __len__(self) -> int:
        return len(self._items)

    def add(self, item: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._write] = item
            self._write = (self._write + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        if not self._items:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]


@dataclass
class TrainConfig:
    steps: int
    batch_size: int = 256
    learning_rate: float = 1e-4
    lr_schedule: str = "constant"  # "constant" | "cosine"
    epsilon: float = 0.1
    target_update_period: int = 1000
    buffer_capacity: int = 100_000
    num_envs: int = 8
    min_buffer: int | None = None  # update once this many transitions stored
    residual_clip: float | None = 20.0
    log_every: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        for name in ("batch_size", "target_update_period", "buffer_capacity",
                     "num_envs", "log_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")


# -- collection ----------------------------------------------------------------


def _mixed_action(output: policy.PolicyOutput, mask_flat: np.ndarray, epsilon: float,
                  rng: np.random.Generator):
    """Epsilon-uniform over legal actions (stop included), else the policy."""
    if epsilon > 0.0 and rng.random() < epsilon:
        valid = np.flatnonzero(~mask_flat)
        pick = int(rng.integers(len(valid) + 1))
        if pick == len(valid):
            return STOP
        d = int(np.sqrt(mask_flat.shape[0]))
        return EdgeAction(int(valid[pick]) // d, int(valid[pick]) % d)
    return policy.sample_action(output, rng)


def collect_step(params: dict, config: PolicyConfig, scorer, env_state: DagState,
                 epsilon: float, rng: np.random.Generator):
    """Advance one environment by one action.

    Returns (Transition, next_state) for an edge addition and (None, G0) for
    a stop, which terminates the trajectory and resets the environment.
    """
    output = policy.forward_one(params, config, env_state)
    mask_flat = action_mask(env_state).reshape(-1)
    action = _mixed_action(output, mask_flat, epsilon, rng)
    if action == STOP:
        return None, new_empty(config.n_nodes)
    delta = scorer.delta_score(env_state, action)
    nxt = add_edge(env_state, action)
    return Transition(env_state, action, nxt, delta, nxt.num_edges), nxt


# -- detailed-balance loss -------------------------------------------------------


def db_residuals(delta_scores, num_edges_next, stop_lp, forward_lp, stop_lp_next):
    """Per-transition detailed-balance residuals from log-probabilities."""
    num_edges_next = np.asarray(num_edges_next, dtype=np.float64)
    if (num_edges_next < 1).any():
        raise AssertionError("a stored next state must have at least one edge")
    log_pb = -np.log(num_edges_next)
    return (np.asarray(delta_scores, dtype=np.float64) + log_pb
            + np.asarray(stop_lp) - np.asarray(forward_lp) - np.asarray(stop_lp_next))


def db_loss(batch: list[Transition], params: dict, target_params: dict,
            config: PolicyConfig, residual_clip: float | None = None):
    """Mean squared residual over a batch, with gradients.

    Gradients flow only through the two current-parameter terms at G; the
    target-network termination term at G' is a constant.  When
    ``residual_clip`` is set, the residual factor in the gradient is clamped
    to +-clip (the reported loss stays unclipped).
    """
    if not batch:
        raise ValueError("db_loss needs a nonempty batch")
    d = config.n_nodes
    elp, slp, clp, tape = policy.forward(params, config, [t.state for t in batch])
    _, slp_next, _, _ = policy.forward(target_params, config,
                                       [t.next_state for t in batch], need_tape=False)
    rows = np.arange(len(batch))
    cells = np.array([t.action.source * d + t.action.target for t in batch])
    edge_lp = elp[rows, cells]
    if not np.isfinite(edge_lp).all():
        raise AssertionError("a stored transition's action is masked at its own state")
    forward_lp = clp + edge_lp
    residuals = db_residuals([t.delta_score for t in batch],
                             [t.num_edges_next for t in batch],
                             slp, forward_lp, slp_next)
    loss = float(np.mean(residuals**2))

    r_eff = residuals if residual_clip is None else np.clip(residuals, -residual_clip,
                                                            residual_clip)
    dres = 2.0 * r_eff / len(batch)
    d_elp = np.zeros_like(elp)
    d_elp[rows, cells] = -dres
    grads = policy.backward(tape, d_elp, dres, -dres)
    return loss, grads


# -- optimizer -------------------------------------------------------------------


class Adam:
    """Standard bias-corrected Adam, updating parameter dicts in place."""

    def __init__(self, params: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = policy.zeros_like_params(params)
        self.v = policy.zeros_like_params(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        scale = lr * math.sqrt(1 - b2**self.t) / (1 - b1**self.t)
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[k] -= scale * m / (np.sqrt(v) + self.eps)


def _lr_at(config: TrainConfig, step: int) -> float:
    if config.lr_schedule == "cosine":
        frac = step / max(1, config.steps)
        return config.learning_rate * 0.5 * (1.0 + math.cos(math.pi * frac))
    return config.learning_rate


# -- training loop ----------------------------------------------------------------


@dataclass
class TrainResult:
    params: dict
    policy_config: PolicyConfig
    records: list[dict] = field(default_factory=list)


def train(scorer, policy_config: PolicyConfig, config: TrainConfig) -> TrainResult:
    """Collect/update loop; fully reproducible for a fixed config seed.

    Every iteration advances each parallel environment by one action (merged
    into the buffer in environment order), then takes one Adam step on a
    uniformly replayed minibatch once ``min_buffer`` transitions are stored.
    The target copy is refreshed every ``target_update_period`` steps.
    """
    if scorer.data.num_variables != policy_config.n_nodes:
        raise ValueError("policy and dataset disagree on the number of variables")
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    rng_init = np.random.default_rng(seeds[0])
    rng_collect = np.random.default_rng(seeds[1])
    rng_replay = np.random.default_rng(seeds[2])

    params = policy.init_params(policy_config, rng_init)
    target_params = {k: v.copy() for k, v in params.items()}
    optimizer = Adam(params)
    buffer = ReplayBuffer(config.buffer_capacity)
    min_buffer = config.batch_size if config.min_buffer is None else config.min_buffer

    d = policy_config.n_nodes
    envs = [new_empty(d) for _ in range(config.num_envs)]
    env_steps = [0] * config.num_envs
    finished_lengths: list[int] = []
    records: list[dict] = []
    start = time.monotonic()
    loss = float("nan")

    for step in range(1, config.steps + 1):
        elp, slp, clp, _ = policy.forward(params, policy_config, envs, need_tape=False)
        for e in range(config.num_envs):
            out = policy.PolicyOutput(elp[e], float(slp[e]), float(clp[e]))
            mask_flat = action_mask(envs[e]).reshape(-1)
            action = _mixed_action(out, mask_flat, config.epsilon, rng_collect)
            if action == STOP:
                finished_lengths.append(env_steps[e])
                envs[e] = new_empty(d)
                env_steps[e] = 0
            else:
                delta = scorer.delta_score(envs[e], action)
                nxt = add_edge(envs[e], action)
                buffer.add(Transition(envs[e], action, nxt, delta, nxt.num_edges))
                envs[e] = nxt
                env_steps[e] += 1

        if len(buffer) >= max(1, min_buffer):
            batch = buffer.sample(config.batch_size, rng_replay)
            loss, grads = db_loss(batch, params, target_params, policy_config,
                                  config.residual_clip)
            if not math.isfinite(loss):
                raise TrainingDivergedError(step, loss)
            optimizer.step(params, grads, _lr_at(config, step))

        if step % config.target_update_period == 0:
            target_params = {k: v.copy() for k, v in params.items()}

        if step % config.log_every == 0 or step == config.steps:
            mean_len = (float(np.mean(finished_lengths)) if finished_lengths else None)
            records.append({
                "step": step,
                "loss": None if math.isnan(loss) else loss,
                "epsilon": config.epsilon,
                "buffer_size": len(buffer),
                "mean_trajectory_length": mean_len,
                "wall_ms": (time.monotonic() - start) * 1000.0,
            })
            finished_lengths.clear()

    return TrainResult(params, policy_config, records)


# -- using a trained policy --------------------------------------------------------


def sample_posterior(params: dict, config: PolicyConfig, n: int,
                     rng: np.random.Generator, chunk: int = 2048) -> list[DagState]:
    """n independent rollouts from the empty graph until stop."""
    if n < 0:
        raise ValueError("n must be >= 0")
    d = config.n_nodes
    max_steps = d * (d - 1) // 2
    out: list[DagState] = []
    for lo in range(0, n, chunk):
        size = min(chunk, n - lo)
        states = [new_empty(d) for _ in range(size)]
        active = list(range(size))
        steps = 0
        while active:
            if steps > max_steps:
                raise AssertionError("rollout exceeded the maximum trajectory length")
            batch = [states[i] for i in active]
            elp, slp, clp, _ = policy.forward(params, config, batch, need_tape=False)
            still = []
            for pos, i in enumerate(active):
                output = policy.PolicyOutput(elp[pos], float(slp[pos]), float(clp[pos]))
                action = policy.sample_action(output, rng)
                if action != STOP:
                    states[i] = add_edge(states[i], action)
                    still.append(i)
            active = still
            steps += 1
        out.extend(states)
    return out


def evaluate_exact_policy(params: dict, config: PolicyConfig):
    """Exact terminating distribution of a fixed policy by dynamic
    programming over the full DAG lattice (d <= 5 only).

    Returns (states, probs) with states in enumeration order; probs sums
    to 1 up to float arithmetic.
    """
    d = config.n_nodes
    if d > exact.MAX_EXACT_NODES:
        raise ValueError(f"exact policy evaluation supports d <= {exact.MAX_EXACT_NODES}")
    states = exact.enumerate_dags(d)
    index = {s.key(): i for i, s in enumerate(states)}
    flow = np.zeros(len(states))
    flow[index[new_empty(d).key()]] = 1.0
    probs = np.zeros(len(states))

    by_edges: dict[int, list[int]] = {}
    for i, s in enumerate(states):
        by_edges.setdefault(s.num_edges, []).append(i)

    for k in sorted(by_edges):
        level = by_edges[k]
        batch = [states[i] for i in level]
        elp, slp, clp, _ = policy.forward(params, config, batch, need_tape=False)
        for pos, i in enumerate(level):
            if flow[i] == 0.0:
                continue
            probs[i] = flow[i] * np.exp(slp[pos])
            state = batch[pos]
            valid = np.flatnonzero(np.isfinite(elp[pos]))
            if len(valid) == 0:
                continue
            step_probs = np.exp(clp[pos] + elp[pos][valid])
            for cell, p in zip(valid, step_probs):
                child = add_edge(state, EdgeAction(int(cell) // d, int(cell) % d))
                flow[index[child.key()]] += flow[i] * p
    return states, probs
