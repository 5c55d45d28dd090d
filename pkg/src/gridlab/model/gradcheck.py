"""Finite-difference verification of the analytic loss gradient."""

import numpy as np

from .loss import LossConfig, TrainBatch, compute_loss_and_grads
from .network import GridZeroModel, ModelConfig


def random_batch(config, batch=3, unroll=2, n_cand=4, rng=None):
    rng = rng if rng is not None else np.random.default_rng(0)
    n, K = config.n_units, unroll

    def one_hots(shape):
        idx = rng.integers(0, n + 1, size=shape)
        return np.eye(n + 1)[idx]

    pi = rng.random((batch, K + 1, n_cand))
    pi /= pi.sum(-1, keepdims=True)
    actions = np.concatenate(
        [rng.uniform(-1, 1, (batch, K, n)), one_hots((batch, K)), one_hots((batch, K))], axis=-1
    )
    return TrainBatch(
        obs=rng.standard_normal((batch, K + 1, config.obs_dim)),
        actions=actions,
        rewards=rng.standard_normal((batch, K)),
        values=rng.standard_normal((batch, K + 1)),
        pi=pi,
        cand_ap=rng.uniform(-0.95, 0.95, (batch, K + 1, n_cand, n)),
        cand_o=one_hots((batch, K + 1, n_cand)),
        cand_c=one_hots((batch, K + 1, n_cand)),
        policy_mask=(rng.random((batch, K + 1)) < 0.8).astype(float),
        reward_mask=(rng.random((batch, K)) < 0.8).astype(float),
        consistency_mask=(rng.random((batch, K)) < 0.8).astype(float),
        weights=rng.uniform(0.5, 1.0, batch),
    )


def toy_model(rng, obs_dim=5, n_units=2, activation="tanh"):
    """A tiny float64 model with exact gradients (unit dynamics gradient scale)."""
    cfg = ModelConfig(
        obs_dim=obs_dim, n_units=n_units, hidden=4, repr_width=6, dyn_width=6, reward_width=3,
        pred_width=5, proj_dim=3, activation=activation, dynamics_grad_scale=1.0,
        seed=int(rng.integers(1 << 31)),
    )
    model = GridZeroModel(cfg, dtype=np.float64)
    # larger head weights so every loss term carries signal
    for key in list(model.params):
        model.params[key] = model.params[key] + 0.3 * rng.standard_normal(model.params[key].shape)
    model.update_obs_stats(rng.standard_normal((16, obs_dim)))
    return model


def check_gradients(model, batch, coef=None, eps=1e-4):
    """Largest per-block relative error between analytic and central-difference gradients.

    The error of a block is ||g_analytic - g_numeric|| / max(||g_analytic|| + ||g_numeric||, 1e-10).
    """
    coef = coef or LossConfig()
    frozen = model.copy()
    _, grads, _ = compute_loss_and_grads(model, batch, coef, target_model=frozen)
    worst = 0.0
    errors = {}
    for key, p in model.params.items():
        num = np.zeros_like(p)
        flat = p.reshape(-1)
        g = num.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = compute_loss_and_grads(model, batch, coef, target_model=frozen)[0]["total"]
            flat[i] = old - eps
            down = compute_loss_and_grads(model, batch, coef, target_model=frozen)[0]["total"]
            flat[i] = old
            g[i] = (up - down) / (2 * eps)
        diff = np.linalg.norm(grads[key] - num)
        scale = max(np.linalg.norm(grads[key]) + np.linalg.norm(num), 1e-10)
        errors[key] = diff / scale
        worst = max(worst, errors[key])
    return worst, errors
