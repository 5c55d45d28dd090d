"""Representation, dynamics and prediction networks with observation normalization."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import mlp
from .policy import LOGSTD_MAX, LOGSTD_MIN, PolicyOutput

NETS = ("repr", "dyn", "reward", "pred", "proj")


@dataclass
class ModelConfig:
    obs_dim: int
    n_units: int  # controllable generators
    hidden: int = 64
    repr_width: int = 256
    dyn_width: int = 256
    reward_width: int = 64
    pred_width: int = 256
    proj_dim: int = 64
    activation: str = "relu"
    dynamics_grad_scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.obs_dim <= 0 or self.n_units <= 0:
            raise ValueError("obs_dim and n_units must be positive")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def action_dim(self):
        return self.n_units + 2 * (self.n_units + 1)

    @property
    def head_dim(self):
        n = self.n_units
        return 2 * n + 2 * (n + 1) + 1

    def to_dict(self):
        return asdict(self)


def encode_raw(a_p, a_o, a_c):
    return np.concatenate([np.asarray(a_p, float), np.asarray(a_o, float), np.asarray(a_c, float)])


def encode_legal(action, low, high):
    """Encode a LegalAction in the same coordinates as a raw sample.

    The adjustment is mapped back through the bounds (inverse of the action
    mapping) so root and in-tree actions share one input space.
    """
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    n = len(low)
    span = high - low
    a_p = np.zeros(n)
    ok = span > 1e-9
    a_p[ok] = 2.0 * (np.asarray(action.delta_p)[ok] - low[ok]) / span[ok] - 1.0
    a_p = np.clip(a_p, -1.0, 1.0)
    a_o = np.zeros(n + 1)
    a_c = np.zeros(n + 1)
    a_o[n if action.startup_id is None else action.startup_id] = 1.0
    a_c[n if action.shutdown_id is None else action.shutdown_id] = 1.0
    for idx in (action.startup_id, action.shutdown_id):
        if idx is not None:
            a_p[idx] = 0.0
    return encode_raw(a_p, a_o, a_c)


def no_op_encoding(n):
    a_o = np.zeros(n + 1)
    a_o[n] = 1.0
    return encode_raw(np.zeros(n), a_o, a_o.copy())


def split_heads(out, n):
    """Slice the prediction output into (mu, raw logstd, p_o, p_c, value)."""
    mu = out[..., :n]
    logstd = out[..., n:2 * n]
    p_o = out[..., 2 * n:3 * n + 1]
    p_c = out[..., 3 * n + 1:4 * n + 2]
    value = out[..., 4 * n + 2]
    return mu, logstd, p_o, p_c, value


class GridZeroModel:
    """Parameters plus running observation statistics.

    Forward methods accept a single vector or a batch (leading axis) and
    return matching shapes.
    """

    def __init__(self, config, params=None, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        if params is None:
            params = self._init_params(np.random.default_rng(config.seed))
        self.params = params
        self.obs_mean = np.zeros(config.obs_dim)
        self.obs_m2 = np.zeros(config.obs_dim)
        self.obs_count = 0
        self.step = 0

    def _init_params(self, rng):
        c, p, dt = self.config, {}, self.dtype
        mlp.init_mlp(p, "repr", [c.obs_dim, c.repr_width, c.repr_width, c.hidden], rng, dt)
        mlp.init_mlp(p, "dyn", [c.hidden + c.action_dim, c.dyn_width, c.hidden], rng, dt)
        mlp.init_mlp(p, "reward", [c.hidden, c.reward_width, 1], rng, dt, last_scale=0.1)
        mlp.init_mlp(p, "pred", [c.hidden, c.pred_width, c.head_dim], rng, dt, last_scale=0.1)
        mlp.init_mlp(p, "proj", [c.hidden, c.proj_dim, c.proj_dim], rng, dt)
        return p

    # --------------------------------------------------------- normalization
    def update_obs_stats(self, obs):
        """Fold a batch of raw observations into the running mean/variance."""
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        n_b = obs.shape[0]
        if n_b == 0:
            return
        b_mean = obs.mean(axis=0)
        b_m2 = ((obs - b_mean) ** 2).sum(axis=0)
        total = self.obs_count + n_b
        delta = b_mean - self.obs_mean
        self.obs_mean = self.obs_mean + delta * n_b / total
        self.obs_m2 = self.obs_m2 + b_m2 + delta ** 2 * self.obs_count * n_b / total
        self.obs_count = total

    @property
    def obs_std(self):
        if self.obs_count < 2:
            return np.ones(self.config.obs_dim)
        return np.maximum(np.sqrt(self.obs_m2 / self.obs_count), 1e-2)

    def normalize(self, obs):
        x = (np.asarray(obs, dtype=float) - self.obs_mean) / self.obs_std
        return np.clip(x, -10.0, 10.0).astype(self.dtype)

    # ------------------------------------------------------------- forward
    def _batch(self, x):
        x = np.asarray(x)
        return (x[None, :], True) if x.ndim == 1 else (x, False)

    def represent(self, obs):
        x, single = self._batch(obs)
        if x.shape[-1] != self.config.obs_dim:
            raise ValueError(f"observation has {x.shape[-1]} entries, expected {self.config.obs_dim}")
        raw, _ = mlp.forward(self.params, "repr", self.normalize(x), self.config.activation)
        s, _ = mlp.minmax(raw)
        return s[0] if single else s

    def dynamics(self, hidden, action_enc):
        s, single = self._batch(hidden)
        a, _ = self._batch(action_enc)
        inp = np.concatenate([s, a.astype(self.dtype)], axis=-1)
        raw, _ = mlp.forward(self.params, "dyn", inp, self.config.activation)
        nxt, _ = mlp.minmax(raw)
        r, _ = mlp.forward(self.params, "reward", nxt, self.config.activation)
        r = r[:, 0]
        return (nxt[0], float(r[0])) if single else (nxt, r)

    def predict(self, hidden):
        s, single = self._batch(hidden)
        out, _ = mlp.forward(self.params, "pred", s, self.config.activation)
        mu, logstd, p_o, p_c, value = split_heads(out, self.config.n_units)
        logstd = np.clip(logstd, LOGSTD_MIN, LOGSTD_MAX)
        if single:
            return PolicyOutput(mu[0], logstd[0], p_o[0], p_c[0]), float(value[0])
        return [PolicyOutput(mu[i], logstd[i], p_o[i], p_c[i]) for i in range(len(s))], value

    def project(self, hidden):
        s, single = self._batch(hidden)
        y, _ = mlp.forward(self.params, "proj", s, self.config.activation)
        return y[0] if single else y

    # ------------------------------------------------------------- utility
    def copy(self):
        other = GridZeroModel(self.config, {k: v.copy() for k, v in self.params.items()}, self.dtype)
        other.obs_mean = self.obs_mean.copy()
        other.obs_m2 = self.obs_m2.copy()
        other.obs_count = self.obs_count
        other.step = self.step
        return other

    def astype(self, dtype):
        other = self.copy()
        other.dtype = np.dtype(dtype)
        other.params = {k: v.astype(dtype) for k, v in self.params.items()}
        return other

    def n_params(self):
        return int(sum(v.size for v in self.params.values()))
