"""Learned forward-transition model over edge additions.

A graph is encoded as d^2 tokens, one per ordered node pair (self-loops
included for uniformity), each the sum of a source embedding, a target
embedding, and a presence embedding.  A stack of pre-layernorm transformer
blocks with linearized attention (feature map elu+1, cost O(J h^2) in the
token count J = d^2) feeds two heads: per-token edge logits, masked and
log-softmaxed over the currently addable edges, and a pooled Bernoulli stop
logit.  The transition probability factors as
stop, or (1 - stop) x edge choice.

Everything is float64 numpy.  Gradients are explicit reverse-mode over this
fixed architecture: ``forward`` records a tape of intermediates and
``backward`` propagates cotangents of the two heads' outputs to every
parameter.  Finite differences gate correctness in the tests.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import erf, expit

from .graph import DagState, EdgeAction, action_mask

CHECKPOINT_VERSION = "dagflow-checkpoint-1"

STOP = "stop"  # terminal action sentinel; edge actions are EdgeAction tuples

MASK_FILL = -1e30  # additive pre-softmax penalty on invalid cells

_SQRT2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class PolicyConfig:
    """Architecture shape; the feed-forward width is fixed at 4x hidden."""

    n_nodes: int
    hidden_dim: int = 128
    num_layers: int = 3
    denom_eps: float = 1e-6
    ln_eps: float = 1e-5

    @property
    def num_tokens(self) -> int:
        return self.n_nodes * self.n_nodes


@dataclass
class PolicyOutput:
    """Masked log-probabilities for one state.

    ``edge_log_probs`` has one entry per ordered pair (row-major), exactly
    -inf at masked cells and normalized over the rest; exp(stop_log_prob) +
    exp(continue_log_prob) = 1.  When no edge can be added the stop
    probability is 1 regardless of the stop head.
    """

    edge_log_probs: np.ndarray
    stop_log_prob: float
    continue_log_prob: float


def init_params(config: PolicyConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Scaled-normal projections, unit layernorm gains, zero head biases."""
    d, h = config.n_nodes, config.hidden_dim
    f = 4 * h
    p: dict[str, np.ndarray] = {
        "emb_src": rng.normal(0.0, 1.0, (d, h)),
        "emb_tgt": rng.normal(0.0, 1.0, (d, h)),
        "emb_pres": rng.normal(0.0, 1.0, (2, h)),
    }
    for l in range(config.num_layers):
        p[f"layer{l}_ln1_g"] = np.ones(h)
        p[f"layer{l}_ln1_b"] = np.zeros(h)
        for name in ("wq", "wk", "wv"):
            p[f"layer{l}_{name}"] = rng.normal(0.0, h**-0.5, (h, h))
        p[f"layer{l}_ln2_g"] = np.ones(h)
        p[f"layer{l}_ln2_b"] = np.zeros(h)
        p[f"layer{l}_ff_w1"] = rng.normal(0.0, h**-0.5, (h, f))
        p[f"layer{l}_ff_b1"] = np.zeros(f)
        p[f"layer{l}_ff_w2"] = rng.normal(0.0, f**-0.5, (f, h))
        p[f"layer{l}_ff_b2"] = np.zeros(h)
    p["final_ln_g"] = np.ones(h)
    p["final_ln_b"] = np.zeros(h)
    p["edge_w"] = rng.normal(0.0, h**-0.5, h)
    p["edge_b"] = np.zeros(())
    p["stop_w"] = rng.normal(0.0, h**-0.5, h)
    p["stop_b"] = np.zeros(())
    return p


def zeros_like_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


# -- primitive forward/backward pieces ---------------------------------------


def _phi(x):
    """elu(x) + 1: strictly positive attention feature map."""
    return np.where(x > 0, x + 1.0, np.exp(np.minimum(x, 0.0)))


def _phi_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def _gelu_cdf(x):
    return 0.5 * (1.0 + erf(x / np.sqrt(2.0)))


def _gelu(x):
    return x * _gelu_cdf(x)


def _gelu_grad(x, cdf):
    return cdf + x * np.exp(-0.5 * x * x) / _SQRT2PI


def _layernorm(x, g, b, eps):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv
    return xhat * g + b, xhat, inv


def _layernorm_backward(dy, xhat, inv, g):
    lead = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axis=lead)
    db = dy.sum(axis=lead)
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def linear_attention(x: np.ndarray, wq: np.ndarray, wk: np.ndarray, wv: np.ndarray,
                     denom_eps: float = 1e-6) -> np.ndarray:
    """Kernelized attention over a token set.

    out_k = sum_j (phi(Q_k) . phi(K_j)) V_j / (sum_j phi(Q_k) . phi(K_j)),
    evaluated in O(J h^2) by accumulating sum_j phi(K_j) V_j^T and
    sum_j phi(K_j) once.  Accepts (J, h) or batched (B, J, h) input.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    out = _attention_forward(x, wq, wk, wv, denom_eps)[0]
    return out[0] if squeeze else out


def _project(x, w):
    """(B, J, h) @ (h, k) as one flat GEMM."""
    b, j, h = x.shape
    return (x.reshape(b * j, h) @ w).reshape(b, j, -1)


def _attention_forward(u, wq, wk, wv, eps):
    q = _project(u, wq)
    k = _project(u, wk)
    v = _project(u, wv)
    p = _phi(q)
    m = _phi(k)
    s = m.transpose(0, 2, 1) @ v  # sum_j phi(K_j) V_j^T
    z = m.sum(axis=1)
    num = p @ s
    den = (p @ z[..., None])[..., 0] + eps
    out = num / den[..., None]
    return out, (u, q, k, v, s, z, den, out)


def _attention_backward(dout, cache, wq, wk, wv):
    u, q, k, v, s, z, den, out = cache
    dnum = dout / den[..., None]
    dden = -(dout * out).sum(axis=-1) / den
    p = _phi(q)
    m = _phi(k)
    dp = dnum @ s.transpose(0, 2, 1) + dden[..., None] * z[:, None, :]
    ds = p.transpose(0, 2, 1) @ dnum
    dz = (dden[:, None, :] @ p)[:, 0, :]
    dm = v @ ds.transpose(0, 2, 1) + dz[:, None, :]
    dv = m @ ds
    dq = dp * _phi_grad(q)
    dk = dm * _phi_grad(k)
    flat = lambda a: a.reshape(-1, a.shape[-1])
    du = (flat(dq) @ wq.T + flat(dk) @ wk.T + flat(dv) @ wv.T).reshape(u.shape)
    dwq = flat(u).T @ flat(dq)
    dwk = flat(u).T @ flat(dk)
    dwv = flat(u).T @ flat(dv)
    return du, dwq, dwk, dwv


# -- full network -------------------------------------------------------------


def _encode_tokens(params, config, adjacencies):
    d = config.n_nodes
    pres = adjacencies.reshape(adjacencies.shape[0], -1).astype(np.int64)
    src_idx = np.repeat(np.arange(d), d)
    tgt_idx = np.tile(np.arange(d), d)
    x = params["emb_src"][src_idx][None] + params["emb_tgt"][tgt_idx][None]
    x = x + params["emb_pres"][pres]
    return x, pres


def forward(params: dict, config: PolicyConfig, states: list[DagState],
            need_tape: bool = True):
    """Batched forward pass; returns (edge_log_probs (B, J), stop_log_prob
    (B,), continue_log_prob (B,)) and the tape for ``backward`` (None when
    ``need_tape`` is off, sparing the caches on inference-only calls)."""
    batch = len(states)
    d = config.n_nodes
    adjacencies = np.stack([s.adjacency for s in states])
    masks = np.stack([action_mask(s) for s in states]).reshape(batch, -1)

    x, pres = _encode_tokens(params, config, adjacencies)
    layer_caches = []
    for l in range(config.num_layers):
        u, xhat1, inv1 = _layernorm(x, params[f"layer{l}_ln1_g"], params[f"layer{l}_ln1_b"],
                                    config.ln_eps)
        attn, attn_cache = _attention_forward(u, params[f"layer{l}_wq"],
                                              params[f"layer{l}_wk"], params[f"layer{l}_wv"],
                                              config.denom_eps)
        x_mid = x + attn
        vln, xhat2, inv2 = _layernorm(x_mid, params[f"layer{l}_ln2_g"],
                                      params[f"layer{l}_ln2_b"], config.ln_eps)
        hpre = _project(vln, params[f"layer{l}_ff_w1"]) + params[f"layer{l}_ff_b1"]
        cdf = _gelu_cdf(hpre)
        act = hpre * cdf
        x = x_mid + _project(act, params[f"layer{l}_ff_w2"]) + params[f"layer{l}_ff_b2"]
        if not np.isfinite(x).all():
            raise FloatingPointError(f"non-finite activations after layer {l}")
        if need_tape:
            layer_caches.append((xhat1, inv1, attn_cache, xhat2, inv2, vln, hpre, cdf, act))

    y, xhat_f, inv_f = _layernorm(x, params["final_ln_g"], params["final_ln_b"], config.ln_eps)
    edge_logits = y @ params["edge_w"] + params["edge_b"]
    pooled = y.mean(axis=1)
    stop_logit = pooled @ params["stop_w"] + params["stop_b"]

    if not np.isfinite(edge_logits).all() or not np.isfinite(stop_logit).all():
        raise FloatingPointError("non-finite activations in policy output heads")

    # masked log-softmax over addable edges
    shifted = edge_logits + MASK_FILL * masks
    max_logit = shifted.max(axis=1)
    forced = ~(~masks).any(axis=1)  # no valid action: stop with probability 1
    safe_max = np.where(forced, 0.0, max_logit)
    expw = np.exp(shifted - safe_max[:, None])
    lse = safe_max + np.log(expw.sum(axis=1) + forced)  # forced rows are overwritten
    edge_log_probs = np.where(masks, -np.inf, shifted - lse[:, None])

    stop_log_prob = -np.logaddexp(0.0, -stop_logit)      # log sigmoid
    continue_log_prob = -np.logaddexp(0.0, stop_logit)   # log (1 - sigmoid)
    stop_log_prob = np.where(forced, 0.0, stop_log_prob)
    continue_log_prob = np.where(forced, -np.inf, continue_log_prob)
    edge_log_probs = np.where(forced[:, None], -np.inf, edge_log_probs)

    tape = None
    if need_tape:
        softmax = np.where(masks | forced[:, None], 0.0, np.exp(edge_log_probs))
        tape = {
            "config": config, "pres": pres, "masks": masks, "forced": forced,
            "layers": layer_caches, "xhat_f": xhat_f, "inv_f": inv_f, "y": y,
            "pooled": pooled, "stop_logit": stop_logit, "softmax": softmax,
            "params": params,
        }
    return edge_log_probs, stop_log_prob, continue_log_prob, tape


def backward(tape: dict, d_edge_log_probs: np.ndarray, d_stop_log_prob: np.ndarray,
             d_continue_log_prob: np.ndarray) -> dict[str, np.ndarray]:
    """Cotangents of the heads' outputs -> gradients for every parameter.

    Masked cells and forced-stop rows carry no gradient by construction.
    """
    params = tape["params"]
    config: PolicyConfig = tape["config"]
    masks, forced = tape["masks"], tape["forced"]
    softmax = tape["softmax"]
    batch, j_tokens = masks.shape
    grads = zeros_like_params(params)

    live = ~forced
    d_elp = np.where(masks | ~live[:, None], 0.0, d_edge_log_probs)
    d_slp = np.where(live, d_stop_log_prob, 0.0)
    d_clp = np.where(live, d_continue_log_prob, 0.0)

    # log-softmax over valid cells
    total = d_elp.sum(axis=1, keepdims=True)
    d_edge_logits = d_elp - softmax * total

    # Bernoulli stop head in log space
    sig = expit(tape["stop_logit"])
    d_stop_logit = d_slp * (1.0 - sig) - d_clp * sig

    y = tape["y"]
    grads["edge_w"] = y.reshape(-1, y.shape[-1]).T @ d_edge_logits.reshape(-1)
    grads["edge_b"] = d_edge_logits.sum()
    grads["stop_w"] = tape["pooled"].T @ d_stop_logit
    grads["stop_b"] = d_stop_logit.sum()
    dy = d_edge_logits[..., None] * params["edge_w"]
    dy = dy + (d_stop_logit[:, None] / j_tokens)[..., None] * params["stop_w"]

    dx, dg, db = _layernorm_backward(dy, tape["xhat_f"], tape["inv_f"], params["final_ln_g"])
    grads["final_ln_g"], grads["final_ln_b"] = dg, db

    flat = lambda a: a.reshape(-1, a.shape[-1])
    for l in reversed(range(config.num_layers)):
        xhat1, inv1, attn_cache, xhat2, inv2, vln, hpre, cdf, act = tape["layers"][l]
        # feed-forward block
        grads[f"layer{l}_ff_w2"] = flat(act).T @ flat(dx)
        grads[f"layer{l}_ff_b2"] = dx.sum(axis=(0, 1))
        dact = (flat(dx) @ params[f"layer{l}_ff_w2"].T).reshape(hpre.shape)
        dhpre = dact * _gelu_grad(hpre, cdf)
        grads[f"layer{l}_ff_w1"] = flat(vln).T @ flat(dhpre)
        grads[f"layer{l}_ff_b1"] = dhpre.sum(axis=(0, 1))
        dvln = (flat(dhpre) @ params[f"layer{l}_ff_w1"].T).reshape(vln.shape)
        dx_mid, dg, db = _layernorm_backward(dvln, xhat2, inv2, params[f"layer{l}_ln2_g"])
        grads[f"layer{l}_ln2_g"], grads[f"layer{l}_ln2_b"] = dg, db
        dx_mid = dx_mid + dx
        # attention block
        du, dwq, dwk, dwv = _attention_backward(dx_mid, attn_cache, params[f"layer{l}_wq"],
                                                params[f"layer{l}_wk"], params[f"layer{l}_wv"])
        grads[f"layer{l}_wq"], grads[f"layer{l}_wk"], grads[f"layer{l}_wv"] = dwq, dwk, dwv
        dx_in, dg, db = _layernorm_backward(du, xhat1, inv1, params[f"layer{l}_ln1_g"])
        grads[f"layer{l}_ln1_g"], grads[f"layer{l}_ln1_b"] = dg, db
        dx = dx_mid + dx_in

    d = config.n_nodes
    dx_grid = dx.reshape(batch, d, d, -1)
    grads["emb_src"] = dx_grid.sum(axis=(0, 2))
    grads["emb_tgt"] = dx_grid.sum(axis=(0, 1))
    pres = tape["pres"].reshape(batch * j_tokens, 1).astype(np.float64)
    dx_flat = dx.reshape(batch * j_tokens, -1)
    present = (pres * dx_flat).sum(axis=0)
    grads["emb_pres"] = np.stack([dx_flat.sum(axis=0) - present, present])
    return grads


# -- single-state conveniences -----------------------------------------------


def forward_one(params: dict, config: PolicyConfig, state: DagState) -> PolicyOutput:
    elp, slp, clp, _ = forward(params, config, [state])
    return PolicyOutput(elp[0], float(slp[0]), float(clp[0]))


def forward_with_gradients(params: dict, config: PolicyConfig, state: DagState,
                           d_edge_log_probs: np.ndarray, d_stop_log_prob: float,
                           d_continue_log_prob: float):
    """Single-state forward plus reverse-mode gradients for the given
    cotangent of (edge_log_probs, stop_log_prob, continue_log_prob)."""
    elp, slp, clp, tape = forward(params, config, [state])
    grads = backward(tape, np.asarray(d_edge_log_probs)[None],
                     np.array([d_stop_log_prob]), np.array([d_continue_log_prob]))
    return PolicyOutput(elp[0], float(slp[0]), float(clp[0])), grads


def log_prob(output: PolicyOutput, action) -> float:
    """log P(action | state) under the hierarchical factorization."""
    if action == STOP:
        return output.stop_log_prob
    if not isinstance(action, EdgeAction):
        raise TypeError(f"action must be STOP or EdgeAction, got {action!r}")
    d = int(np.sqrt(output.edge_log_probs.shape[0]))
    cell = output.edge_log_probs[action.source * d + action.target]
    if cell == -np.inf:
        raise ValueError(f"action {action} is masked")
    return output.continue_log_prob + float(cell)


def sample_action(output: PolicyOutput, rng: np.random.Generator):
    """Draw STOP or an edge with the output's exact probabilities."""
    d = int(np.sqrt(output.edge_log_probs.shape[0]))
    p_stop = np.exp(output.stop_log_prob)
    u = rng.random()
    if u < p_stop:
        return STOP
    valid = np.flatnonzero(output.edge_log_probs > -np.inf)
    probs = np.exp(output.continue_log_prob + output.edge_log_probs[valid])
    cum = p_stop + np.cumsum(probs)
    idx = int(np.searchsorted(cum, u, side="right"))
    idx = min(idx, len(valid) - 1)
    cell = int(valid[idx])
    return EdgeAction(cell // d, cell % d)


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path: str | Path, params: dict, config: PolicyConfig) -> None:
    meta = {"version": CHECKPOINT_VERSION, "config": asdict(config)}
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **params)


def load_checkpoint(path: str | Path):
    with np.load(path) as blob:
        meta = json.loads(bytes(blob["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
        params = {k: blob[k].copy() for k in blob.files if k != "__meta__"}
    config = PolicyConfig(**meta["config"])
    return params, config
