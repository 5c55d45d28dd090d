"""Learner loop: interleaved self-play, prioritized sampling and SGD updates."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..model import checkpoint
from ..model.loss import LossConfig, NonFiniteLoss, compute_loss_and_grads
from ..model.network import GridZeroModel, ModelConfig
from ..planner import SearchConfig, run_search, temperature_schedule
from .replay import ReplayBuffer
from .selfplay import self_play
from .targets import make_batch

log = logging.getLogger(__name__)

METRIC_FIELDS = [
    "step", "lr", "total", "policy", "value", "reward", "consistency", "entropy", "grad_norm",
    "buffer_trajectories", "buffer_positions", "env_steps", "recent_episode_reward",
]


@dataclass
class TrainConfig:
    total_steps: int = 10000
    batch_size: int = 256
    unroll: int = 5
    td_steps: int = 5
    discount: float = 0.99
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 2e-5
    lr_milestones: tuple = (0.4, 0.7, 0.9)
    lr_decay: float = 0.5
    grad_clip: float = 10.0
    target_interval: int = 200
    selfplay_interval: int = 100
    capacity: int = 500
    warmup: int = 20
    alpha: float = 0.6
    beta: float = 0.4
    reanalyze_ratio: float = 1.0
    max_env_steps: int = 0  # 0 = no cap
    episodes_per_round: int = 1
    steps_per_round: int = 20
    checkpoint_interval: int = 1000
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        self.lr_milestones = tuple(float(m) for m in self.lr_milestones)
        problems = []
        if self.total_steps < 0:
            problems.append("total_steps must be non-negative")
        if self.batch_size < 1 or self.unroll < 0 or self.td_steps < 1:
            problems.append("batch_size, unroll and td_steps must be positive")
        if not 0.0 <= self.reanalyze_ratio <= 1.0:
            problems.append("reanalyze_ratio must lie in [0, 1]")
        if self.steps_per_round < 1 or self.episodes_per_round < 1:
            problems.append("steps_per_round and episodes_per_round must be positive")
        if self.steps_per_round > self.selfplay_interval:
            problems.append("steps_per_round may not exceed selfplay_interval")
        if problems:
            raise ValueError("; ".join(problems))


def learning_rate(cfg, step):
    """Step-decayed learning rate: multiplied by lr_decay at each milestone passed."""
    passed = sum(step >= m * cfg.total_steps for m in cfg.lr_milestones)
    return cfg.lr * cfg.lr_decay ** passed


class SGD:
    """Momentum SGD with decoupled-from-loss L2 weight decay."""

    def __init__(self, params, momentum=0.9, weight_decay=0.0):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads, lr):
        for k, p in params.items():
            g = grads[k] + self.weight_decay * p
            v = self.velocity[k]
            v *= self.momentum
            v += g
            p -= (lr * v).astype(p.dtype)


@dataclass
class TrainResult:
    model: GridZeroModel
    buffer: ReplayBuffer
    metrics: list = field(default_factory=list)
    env_steps: int = 0
    episodes: int = 0
    out_dir: Path | None = None


def _value_table(model, traj):
    """Target-network value of every stored observation of a trajectory."""
    _, values = model.predict(model.represent(traj.obs))
    return np.asarray(values, dtype=float)


class Trainer:
    """Owns the learner parameters, the buffer and the actor/target snapshots."""

    def __init__(self, env, train=None, search=None, model_config=None, loss=None, out_dir=None,
                 run_config=None, profile_days=1):
        self.env = env
        self.cfg = train or TrainConfig()
        self.search = search or SearchConfig()
        self.loss = loss or LossConfig()
        obs_dim = len(env.reset(0, 0))
        self.model_config = model_config or ModelConfig(obs_dim=obs_dim, n_units=env.n_actions, seed=self.cfg.seed)
        if self.model_config.obs_dim != obs_dim or self.model_config.n_units != env.n_actions:
            raise ValueError("model config does not match the environment")
        self.model = GridZeroModel(self.model_config)
        self.opt = SGD(self.model.params, self.cfg.momentum, self.cfg.weight_decay)
        self.buffer = ReplayBuffer(self.cfg.capacity, self.cfg.alpha, self.cfg.beta)
        self.actor = self.model.copy()
        self.target = self.model.copy()
        self.target_version = 0
        self._value_cache = {}
        self.rng = np.random.default_rng(np.random.SeedSequence([self.cfg.seed, 1]))
        self.episodes = 0
        self.env_steps = 0
        self.recent = []
        self.out_dir = Path(out_dir) if out_dir else None
        self.run_config = run_config
        self.day_starts = [d * env.config.steps_per_day for d in range(profile_days)
                           if d * env.config.steps_per_day + env.config.episode_len < len(env.series)]
        if not self.day_starts:
            raise ValueError("series too short for one episode")
        self.bad_steps = 0

    # ---------------------------------------------------------------- actors
    def _jobs(self, count):
        jobs = []
        for _ in range(count):
            e = self.episodes + len(jobs)
            start = self.day_starts[e % len(self.day_starts)]
            jobs.append(([self.cfg.seed, 2, e], start, self.cfg.seed * 100003 + e))
        return jobs

    def play(self, count):
        count = self._affordable(count)
        if count < 1:
            return []
        temp = temperature_schedule(self.model.step, max(self.cfg.total_steps, 1))
        assert self.model.step - self.actor.step < self.cfg.selfplay_interval or self.cfg.total_steps == 0
        trajs = self_play(self.env, self.actor, self.search, self._jobs(count), temp, self.cfg.workers)
        for tr in trajs:
            self.model.update_obs_stats(tr.obs)
            self.buffer.add(tr)
            self.episodes += 1
            self.env_steps += len(tr)
            self.recent = (self.recent + [tr.total_reward])[-5:]
            log.info("episode %d: %d steps, reward %.2f, %s", self.episodes, len(tr), tr.total_reward, tr.reason)
        return trajs

    def _refresh_snapshots(self):
        step = self.model.step
        if step - self.actor.step >= self.cfg.selfplay_interval:
            self.actor = self.model.copy()
        if step - self.target.step >= self.cfg.target_interval:
            self.target = self.model.copy()
            self.target_version += 1
            self._value_cache.clear()

    # --------------------------------------------------------------- learner
    def _bootstrap(self, traj):
        key = id(traj)
        hit = self._value_cache.get(key)
        if hit is None or hit[0] is not traj:
            hit = (traj, _value_table(self.target, traj))
            self._value_cache[key] = hit
        return hit[1]

    def _reanalyze(self, traj_ids, positions):
        """Fresh root visit distributions under the target model for a fraction of the batch."""
        ratio = self.cfg.reanalyze_ratio
        if ratio <= 0:
            return None
        count = int(round(ratio * len(traj_ids)))
        out = {}
        for b in range(count):
            tr = self.buffer.trajectories[traj_ids[b]]
            t = positions[b]
            out[b] = reanalyze_position(self.target, tr, t, self.search, self.rng)
        return out

    def train_step(self):
        cfg = self.cfg
        traj_ids, positions, weights = self.buffer.sample(cfg.batch_size, self.rng)
        trajs = self.buffer.trajectories
        boots = [self._bootstrap(trajs[i]) for i in traj_ids]
        batch = make_batch(trajs, traj_ids, positions, weights, boots, cfg.unroll, cfg.td_steps,
                           cfg.discount, self._reanalyze(traj_ids, positions))
        lr = learning_rate(cfg, self.model.step)
        try:
            comps, grads, v0 = compute_loss_and_grads(self.model, batch, self.loss, cfg.grad_clip)
        except NonFiniteLoss as exc:
            self.bad_steps += 1
            log.warning("skipping batch: %s", exc)
            if self.bad_steps >= 10:
                raise RuntimeError("10 consecutive non-finite losses; halting") from exc
            self.model.step += 1
            return None
        self.bad_steps = 0
        self.opt.step(self.model.params, grads, lr)
        self.model.step += 1
        prios = np.abs(batch.values[:, 0] - v0) + 1e-6
        self.buffer.update_priorities(traj_ids, positions, prios)
        row = {"step": self.model.step, "lr": lr}
        row.update({k: comps[k] for k in ("total", "policy", "value", "reward", "consistency", "entropy", "grad_norm")})
        row.update({
            "buffer_trajectories": len(self.buffer), "buffer_positions": self.buffer.n_positions,
            "env_steps": self.env_steps,
            "recent_episode_reward": float(np.mean(self.recent)) if self.recent else 0.0,
        })
        return row

    # ------------------------------------------------------------------ loop
    def run(self):
        cfg = self.cfg
        metrics = []
        writer = fh = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            (self.out_dir / "checkpoints").mkdir(exist_ok=True)
            write_manifest(self.out_dir, self.run_config, cfg)
            fh = open(self.out_dir / "metrics.csv", "w", newline="")
            writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
            writer.writeheader()
        try:
            while len(self.buffer) < cfg.warmup and not self._budget_spent():
                self.play(min(cfg.episodes_per_round, cfg.warmup - len(self.buffer)))
            while self.model.step < cfg.total_steps and len(self.buffer):
                for _ in range(cfg.steps_per_round):
                    if self.model.step >= cfg.total_steps:
                        break
                    row = self.train_step()
                    if row is None:
                        continue
                    metrics.append(row)
                    if writer:
                        writer.writerow({k: _fmt(row[k]) for k in METRIC_FIELDS})
                    if self.out_dir is not None and self.model.step % cfg.checkpoint_interval == 0:
                        self.save(self.out_dir / "checkpoints" / f"step_{self.model.step:06d}.gzck")
                self._refresh_snapshots()
                if not self._budget_spent() and self.model.step < cfg.total_steps:
                    self.play(cfg.episodes_per_round)
        finally:
            if fh:
                fh.close()
        if self.out_dir is not None:
            self.save(self.out_dir / "model.gzck")
        return TrainResult(self.model, self.buffer, metrics, self.env_steps, self.episodes, self.out_dir)

    def _affordable(self, count):
        """How many of `count` episodes fit in the remaining environment-step budget."""
        if not self.cfg.max_env_steps:
            return count
        return min(count, (self.cfg.max_env_steps - self.env_steps) // self.env.config.episode_len)

    def _budget_spent(self):
        return self._affordable(1) < 1

    def save(self, path):
        checkpoint.save_checkpoint(self.model, path, {"env_steps": self.env_steps, "episodes": self.episodes})


def reanalyze_position(model, traj, t, search, rng):
    """Fresh visit distribution for a stored position, searched over its stored root candidates."""
    res = run_search(traj.obs[t], model, search, rng, training=False, root_encodings=traj.cand_enc[t])
    return res.pi


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return x


def config_digest(obj):
    text = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha1(text.encode("utf-8")).hexdigest()[:10]


def write_manifest(out_dir, run_config, train_cfg):
    from .. import __version__

    echo = run_config if run_config is not None else {"training": asdict(train_cfg)}
    manifest = {
        "version": f"{__version__}+{config_digest(echo)}",
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "seed": train_cfg.seed,
        "config": echo,
    }
    Path(out_dir, "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
