"""Episode records and a per-position prioritized replay buffer."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Trajectory:
    """One episode. Arrays are indexed by step t = 0..T-1; `obs` holds T + 1 rows."""

    obs: np.ndarray  # (T+1, D)
    actions: np.ndarray  # (T, A) executed-action encodings
    rewards: np.ndarray  # (T,) ground-truth rewards u
    pi: np.ndarray  # (T, C) root visit distributions
    cand_ap: np.ndarray  # (T, C, n)
    cand_o: np.ndarray  # (T, C, n+1)
    cand_c: np.ndarray  # (T, C, n+1)
    root_values: np.ndarray  # (T,)
    cand_enc: np.ndarray  # (T, C, A) executed-action encodings of every root candidate
    reason: str = ""
    seed: int = 0
    start_index: int = 0
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rewards)

    @property
    def done(self):
        return np.arange(len(self)) == len(self) - 1

    def check(self):
        T = len(self)
        if self.obs.shape[0] != T + 1:
            raise ValueError(f"expected {T + 1} observations, got {self.obs.shape[0]}")
        for name in ("actions", "pi", "cand_ap", "cand_o", "cand_c", "root_values", "cand_enc"):
            if getattr(self, name).shape[0] != T:
                raise ValueError(f"{name} has {getattr(self, name).shape[0]} rows, expected {T}")
        if T and not self.reason:
            raise ValueError("finished trajectory must carry a termination reason")

    @property
    def total_reward(self):
        return float(np.sum(self.rewards))


class ReplayBuffer:
    """Ring of trajectories with one priority per stored position.

    Sampling probability is proportional to priority**alpha; importance
    weights (1 / (N P))**beta are divided by their largest possible value.
    """

    def __init__(self, capacity=500, alpha=0.6, beta=0.4):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.alpha = alpha
        self.beta = beta
        self.trajectories = []
        self.priorities = []
        self.total_added = 0
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.trajectories)

    @property
    def n_positions(self):
        return int(sum(len(t) for t in self.trajectories))

    def max_priority(self):
        if not self.priorities:
            return 1.0
        return float(max(p.max() for p in self.priorities if len(p)))

    def add(self, traj, priorities=None):
        traj.check()
        with self._lock:
            if priorities is None:
                priorities = np.full(len(traj), self.max_priority())
            priorities = np.asarray(priorities, dtype=float)
            if np.any(priorities <= 0):
                raise ValueError("priorities must be positive")
            self.trajectories.append(traj)
            self.priorities.append(priorities.copy())
            if len(self.trajectories) > self.capacity:
                self.trajectories.pop(0)
                self.priorities.pop(0)
            self.total_added += 1

    def probabilities(self):
        flat = np.concatenate(self.priorities) ** self.alpha
        return flat / flat.sum()

    def sample(self, batch_size, rng):
        """Return (trajectory ids, positions, importance weights)."""
        with self._lock:
            if not self.trajectories:
                raise ValueError("cannot sample from an empty buffer")
            probs = self.probabilities()
            lengths = np.array([len(t) for t in self.trajectories])
            offsets = np.concatenate([[0], np.cumsum(lengths)])
            flat = rng.choice(len(probs), size=batch_size, p=probs)
            traj_ids = np.searchsorted(offsets, flat, side="right") - 1
            pos = flat - offsets[traj_ids]
            N = len(probs)
            weights = (N * probs[flat]) ** (-self.beta)
            weights /= (N * probs.min()) ** (-self.beta)
            return traj_ids, pos, weights

    def update_priorities(self, traj_ids, positions, values):
        with self._lock:
            for i, p, v in zip(traj_ids, positions, values):
                self.priorities[i][p] = float(v)
