"""Hybrid policy: squashed Gaussian adjustments plus startup/shutdown categoricals."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..safety import RawAction

LOGSTD_MIN, LOGSTD_MAX = -5.0, 2.0
_EDGE = 1.0 - 1e-6
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class PolicyOutput:
    p_mu: np.ndarray
    p_logstd: np.ndarray  # already clamped
    p_o: np.ndarray  # startup logits, last slot no-op
    p_c: np.ndarray  # shutdown logits, last slot no-op

    @property
    def n(self):
        return len(self.p_mu)


def log_softmax(z):
    z = np.asarray(z, dtype=float)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.sum(np.exp(z - m), axis=-1, keepdims=True))


def softmax(z):
    return np.exp(log_softmax(z))


def squash_inverse(a_p):
    return np.arctanh(np.clip(a_p, -_EDGE, _EDGE))


def log_prob(policy, a_p):
    """Log-density of a squashed diagonal Gaussian at `a_p` (last axis = units)."""
    a = np.clip(np.asarray(a_p, dtype=float), -_EDGE, _EDGE)
    u = np.arctanh(a)
    mu = np.asarray(policy.p_mu, dtype=float)
    logstd = np.asarray(policy.p_logstd, dtype=float)
    z = (u - mu) * np.exp(-logstd)
    dens = -0.5 * z * z - logstd - 0.5 * _LOG_2PI - np.log1p(-a * a)
    return np.sum(dens, axis=-1)


def gaussian_entropy(logstd):
    return float(np.sum(0.5 * (_LOG_2PI + 1.0) + np.asarray(logstd, dtype=float)))


def categorical_entropy(logits):
    lp = log_softmax(logits)
    return float(-np.sum(np.exp(lp) * lp))


def _discrete(probs, rng, count):
    probs = probs / probs.sum()
    return rng.choice(len(probs), size=count, p=probs)


def _switch_probs(logits, rng, mask, dirichlet):
    p = softmax(logits)
    if dirichlet is not None:
        alpha, frac = dirichlet
        noise = rng.dirichlet(np.full(len(p), alpha))
        p = (1.0 - frac) * p + frac * noise
    if mask is not None:
        p = p * np.asarray(mask, dtype=float)
        if p.sum() <= 0:
            p = np.zeros(len(p))
            p[-1] = 1.0
    return p


def sample_candidates(policy, counts=(13, 2, 2), flatten=2.0, rng=None, masks=None, dirichlet=None):
    """Draw K = sum(counts) raw hybrid actions from `policy`.

    counts = (normal, bigger, smaller): bigger samples add a unit normal
    before squashing, smaller ones use a std scaled by `flatten`. `masks` is
    an optional (startup, shutdown) pair of eligibility vectors of length
    n + 1 and `dirichlet` an optional (alpha, fraction) for root noise.
    """
    rng = rng if rng is not None else np.random.default_rng()
    k_normal, k_big, k_small = counts
    K = k_normal + k_big + k_small
    if K < 1:
        raise ValueError("need at least one candidate")
    n = policy.n
    mu = np.asarray(policy.p_mu, dtype=float)
    std = np.exp(np.asarray(policy.p_logstd, dtype=float))
    eps = rng.standard_normal((K, n))
    z = mu + std * eps
    z[k_normal:k_normal + k_big] += rng.standard_normal((k_big, n))
    z[k_normal + k_big:] = mu + flatten * std * eps[k_normal + k_big:]
    a_p = np.tanh(z)

    start_mask, stop_mask = masks if masks is not None else (None, None)
    p_o = _switch_probs(policy.p_o, rng, start_mask, dirichlet)
    p_c = _switch_probs(policy.p_c, rng, stop_mask, dirichlet)
    io = _discrete(p_o, rng, K)
    ic = _discrete(p_c, rng, K)
    eye = np.eye(n + 1)
    return [RawAction(a_p[i], eye[io[i]].copy(), eye[ic[i]].copy()) for i in range(K)]


def policy_loss(pi, cand_ap, cand_o, cand_c, policy):
    """Continuous plus discrete cross-entropy between visit distribution and policy.

    Returns (loss, grads) with grads keyed by head name; the log-std gradient
    is with respect to the clamped value.
    """
    pi = np.asarray(pi, dtype=float)
    u = squash_inverse(np.asarray(cand_ap, dtype=float))
    mu = np.asarray(policy.p_mu, dtype=float)
    logstd = np.asarray(policy.p_logstd, dtype=float)
    inv_var = np.exp(-2.0 * logstd)
    lp = log_prob(policy, cand_ap)
    cont = -float(pi @ lp)
    diff = u - mu
    g_mu = -(pi[:, None] * diff * inv_var).sum(axis=0)
    g_logstd = -(pi[:, None] * (diff * diff * inv_var - 1.0)).sum(axis=0)

    t_o = pi @ np.asarray(cand_o, dtype=float)
    t_c = pi @ np.asarray(cand_c, dtype=float)
    ls_o = log_softmax(policy.p_o)
    ls_c = log_softmax(policy.p_c)
    disc = -float(t_o @ ls_o) - float(t_c @ ls_c)
    grads = {
        "mu": g_mu,
        "logstd": g_logstd,
        "o": np.exp(ls_o) * t_o.sum() - t_o,
        "c": np.exp(ls_c) * t_c.sum() - t_c,
    }
    return cont + disc, grads


def entropy_grads(policy):
    """Total entropy and its gradient with respect to each head."""
    grads = {"logstd": np.ones(policy.n)}
    total = gaussian_entropy(policy.p_logstd)
    for key, logits in (("o", policy.p_o), ("c", policy.p_c)):
        lp = log_softmax(logits)
        p = np.exp(lp)
        h = -float(np.sum(p * lp))
        grads[key] = -p * (lp + h)
        total += h
    return total, grads
