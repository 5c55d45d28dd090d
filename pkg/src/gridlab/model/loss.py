"""Unrolled training loss and its exact gradient."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import mlp
from .network import split_heads
from .policy import LOGSTD_MAX, LOGSTD_MIN, log_softmax

_LOG_2PI = math.log(2.0 * math.pi)
_EDGE = 1.0 - 1e-6


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class LossConfig:
    policy: float = 1.0
    value: float = 0.5
    reward: float = 1.0
    consistency: float = 2.0
    entropy: float = 0.01


@dataclass
class TrainBatch:
    """Targets for B sampled positions unrolled K steps.

    Index k = 0 is the sampled position itself; `actions[:, k]` leads from
    step k to k + 1 and `rewards[:, k]` is the reward observed on that move.
    """

    obs: np.ndarray  # (B, K+1, D) raw observations
    actions: np.ndarray  # (B, K, A) action encodings
    rewards: np.ndarray  # (B, K)
    values: np.ndarray  # (B, K+1)
    pi: np.ndarray  # (B, K+1, C)
    cand_ap: np.ndarray  # (B, K+1, C, n)
    cand_o: np.ndarray  # (B, K+1, C, n+1)
    cand_c: np.ndarray  # (B, K+1, C, n+1)
    policy_mask: np.ndarray  # (B, K+1)
    reward_mask: np.ndarray  # (B, K)
    consistency_mask: np.ndarray  # (B, K)
    weights: np.ndarray  # (B,)

    @property
    def size(self):
        return self.values.shape[0]

    @property
    def unroll(self):
        return self.values.shape[1] - 1


def _policy_terms(out, n, pi, cand_ap, cand_o, cand_c, row_w, coef):
    """Policy cross-entropy and entropy bonus for a batch of prediction outputs."""
    mu, raw_ls, p_o, p_c, _ = split_heads(out.astype(float), n)
    logstd = np.clip(raw_ls, LOGSTD_MIN, LOGSTD_MAX)
    live = ((raw_ls >= LOGSTD_MIN) & (raw_ls <= LOGSTD_MAX)).astype(float)
    a = np.clip(cand_ap, -_EDGE, _EDGE)
    u = np.arctanh(a)
    inv_var = np.exp(-2.0 * logstd)[:, None, :]
    diff = u - mu[:, None, :]
    lp = np.sum(-0.5 * diff * diff * inv_var - logstd[:, None, :] - 0.5 * _LOG_2PI - np.log1p(-a * a), axis=-1)
    cont = -np.sum(pi * lp, axis=-1)
    g_mu = -np.sum(pi[..., None] * diff * inv_var, axis=1)
    g_ls = -np.sum(pi[..., None] * (diff * diff * inv_var - 1.0), axis=1)

    t_o = np.einsum("bc,bcj->bj", pi, cand_o)
    t_c = np.einsum("bc,bcj->bj", pi, cand_c)
    ls_o, ls_c = log_softmax(p_o), log_softmax(p_c)
    pr_o, pr_c = np.exp(ls_o), np.exp(ls_c)
    disc = -np.sum(t_o * ls_o, axis=-1) - np.sum(t_c * ls_c, axis=-1)
    g_o = pr_o * t_o.sum(-1, keepdims=True) - t_o
    g_c = pr_c * t_c.sum(-1, keepdims=True) - t_c

    h_o = -np.sum(pr_o * ls_o, axis=-1)
    h_c = -np.sum(pr_c * ls_c, axis=-1)
    ent = np.sum(0.5 * (_LOG_2PI + 1.0) + logstd, axis=-1) + h_o + h_c
    ge_o = -pr_o * (ls_o + h_o[:, None])
    ge_c = -pr_c * (ls_c + h_c[:, None])

    wp = (coef.policy * row_w)[:, None]
    we = (coef.entropy * row_w)[:, None]
    grad = np.zeros_like(out, dtype=float)
    grad[:, :n] = wp * g_mu
    grad[:, n:2 * n] = (wp * g_ls - we) * live
    grad[:, 2 * n:3 * n + 1] = wp * g_o - we * ge_o
    grad[:, 3 * n + 1:4 * n + 2] = wp * g_c - we * ge_c
    return float(np.sum(row_w * (cont + disc))), float(np.sum(row_w * ent)), grad


def _cosine(x, y):
    nx = np.sqrt(np.sum(x * x, axis=-1) + 1e-12)
    ny = np.sqrt(np.sum(y * y, axis=-1) + 1e-12)
    cos = np.sum(x * y, axis=-1) / (nx * ny)
    d_cos = y / (nx * ny)[:, None] - cos[:, None] * x / (nx * nx)[:, None]
    return cos, d_cos


def global_norm(grads):
    return math.sqrt(sum(float(np.sum(np.asarray(g, dtype=float) ** 2)) for g in grads.values()))


def clip_grads(grads, max_norm):
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def compute_loss_and_grads(model, batch, coef=None, clip_norm=None, target_model=None):
    """Return (losses, grads, root_values) for one batch.

    `losses` holds the weighted component sums and the total; `root_values`
    are the predicted values at k = 0, used to refresh priorities. The
    consistency target is embedded by `target_model` (default: the model
    itself) and treated as a constant.
    """
    coef = coef or LossConfig()
    target_model = target_model or model
    P, cfg = model.params, model.config
    act, n, H = cfg.activation, cfg.n_units, cfg.hidden
    dt = model.dtype
    B, K = batch.size, batch.unroll
    w = np.asarray(batch.weights, dtype=float) / B
    comps = {"policy": 0.0, "value": 0.0, "reward": 0.0, "consistency": 0.0, "entropy": 0.0}

    x0 = model.normalize(batch.obs[:, 0])
    hraw, c_repr = mlp.forward(P, "repr", x0, act)
    s, c_norm = mlp.minmax(hraw)
    steps = []
    root_values = None
    for k in range(K + 1):
        rec = {"norm": c_norm}
        if k > 0:
            inp = np.concatenate([s, batch.actions[:, k - 1].astype(dt)], axis=-1)
            graw, rec["dyn"] = mlp.forward(P, "dyn", inp, act)
            s, rec["norm"] = mlp.minmax(graw)
            r, rec["reward"] = mlp.forward(P, "reward", s, act)
            m = batch.reward_mask[:, k - 1] * w
            err = r[:, 0].astype(float) - batch.rewards[:, k - 1]
            comps["reward"] += float(np.sum(m * err * err))
            rec["d_r"] = (coef.reward * 2.0 * m * err)[:, None].astype(dt)

            mc = batch.consistency_mask[:, k - 1] * w
            target = target_model.project(target_model.represent(batch.obs[:, k]))
            x, rec["proj"] = mlp.forward(P, "proj", s, act)
            cos, d_cos = _cosine(x.astype(float), target.astype(float))
            comps["consistency"] += float(np.sum(mc * (1.0 - cos)))
            rec["d_x"] = (-(coef.consistency * mc)[:, None] * d_cos).astype(dt)

        out, rec["pred"] = mlp.forward(P, "pred", s, act)
        value = out[:, -1].astype(float)
        if k == 0:
            root_values = value.copy()
        err_v = value - batch.values[:, k]
        comps["value"] += float(np.sum(w * err_v * err_v))
        row_w = batch.policy_mask[:, k] * w
        pol, ent, d_out = _policy_terms(
            out, n, batch.pi[:, k], batch.cand_ap[:, k], batch.cand_o[:, k], batch.cand_c[:, k], row_w, coef
        )
        comps["policy"] += pol
        comps["entropy"] += ent
        d_out[:, -1] = coef.value * 2.0 * w * err_v
        rec["d_out"] = d_out.astype(dt)
        steps.append(rec)

    total = (
        coef.policy * comps["policy"] + coef.value * comps["value"] + coef.reward * comps["reward"]
        + coef.consistency * comps["consistency"] - coef.entropy * comps["entropy"]
    )
    comps["total"] = total
    if not all(math.isfinite(v) for v in comps.values()):
        detail = ", ".join(f"{k}={v:.4g}" for k, v in comps.items())
        raise NonFiniteLoss(f"non-finite loss at step {model.step}: {detail}")

    grads = {}
    ds_next = None
    for k in reversed(range(K + 1)):
        rec = steps[k]
        ds = mlp.backward(P, "pred", rec["pred"], rec["d_out"], grads, act)
        if ds_next is not None:
            ds = ds + ds_next
        if k > 0:
            ds = ds + mlp.backward(P, "reward", rec["reward"], rec["d_r"], grads, act)
            ds = ds + mlp.backward(P, "proj", rec["proj"], rec["d_x"], grads, act)
            dgraw = mlp.minmax_backward(rec["norm"], ds)
            dinp = mlp.backward(P, "dyn", rec["dyn"], dgraw, grads, act)
            ds_next = cfg.dynamics_grad_scale * dinp[:, :H]
        else:
            dhraw = mlp.minmax_backward(rec["norm"], ds)
            mlp.backward(P, "repr", c_repr, dhraw, grads, act)
    for key in P:
        if key not in grads:
            grads[key] = np.zeros_like(P[key])
        grads[key] = np.asarray(grads[key], dtype=dt)
    if clip_norm is not None:
        grads, norm = clip_grads(grads, clip_norm)
        comps["grad_norm"] = norm
    return comps, grads, root_values
