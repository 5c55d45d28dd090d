"""Unrolled training targets: n-step value targets, padding and masks."""

from __future__ import annotations

import numpy as np

from ..model.loss import TrainBatch
from ..model.network import no_op_encoding


def value_target(rewards, bootstrap, t, td_steps=5, discount=0.99):
    """Discounted n-step return from position t.

    `bootstrap[j]` is the value estimate of the observation at step j; the
    bootstrap term is dropped when t + td_steps reaches the episode end.
    """
    T = len(rewards)
    t = int(t)  # numpy integer exponents round differently from Python ints
    if t >= T:
        return 0.0
    end = min(t + td_steps, T)
    z = 0.0
    for i in range(t, end):
        z += discount ** (i - t) * rewards[i]
    if t + td_steps < T:
        z += discount ** td_steps * bootstrap[t + td_steps]
    return z


def value_targets(rewards, bootstrap, td_steps=5, discount=0.99):
    return np.array([value_target(rewards, bootstrap, t, td_steps, discount) for t in range(len(rewards))])


def make_batch(trajectories, traj_ids, positions, weights, bootstraps, unroll=5, td_steps=5,
               discount=0.99, pi_override=None):
    """Assemble a TrainBatch for the sampled positions.

    `bootstraps[i]` is the per-step value estimate used for trajectory
    `traj_ids[i]`. `pi_override` optionally maps batch row -> fresh root
    visit distribution for k = 0 (reanalysis).
    """
    first = trajectories[traj_ids[0]]
    B, K = len(traj_ids), unroll
    D = first.obs.shape[1]
    A = first.actions.shape[1]
    C = first.pi.shape[1]
    n = first.cand_ap.shape[2]
    no_op = no_op_encoding(n)

    obs = np.zeros((B, K + 1, D))
    actions = np.zeros((B, K, A))
    rewards = np.zeros((B, K))
    values = np.zeros((B, K + 1))
    pi = np.zeros((B, K + 1, C))
    cand_ap = np.zeros((B, K + 1, C, n))
    cand_o = np.zeros((B, K + 1, C, n + 1))
    cand_c = np.zeros((B, K + 1, C, n + 1))
    policy_mask = np.zeros((B, K + 1))
    reward_mask = np.zeros((B, K))
    cons_mask = np.zeros((B, K))

    for b, (ti, t) in enumerate(zip(traj_ids, positions)):
        tr = trajectories[ti]
        T = len(tr)
        boot = bootstraps[b]
        for k in range(K + 1):
            j = t + k
            obs[b, k] = tr.obs[min(j, T)]
            if j < T:
                values[b, k] = value_target(tr.rewards, boot, j, td_steps, discount)
                pi[b, k] = tr.pi[j]
                cand_ap[b, k] = tr.cand_ap[j]
                cand_o[b, k] = tr.cand_o[j]
                cand_c[b, k] = tr.cand_c[j]
                policy_mask[b, k] = 1.0
            if k < K:
                if j < T:
                    actions[b, k] = tr.actions[j]
                    rewards[b, k] = tr.rewards[j]
                    reward_mask[b, k] = 1.0
                    cons_mask[b, k] = 1.0
                else:
                    actions[b, k] = no_op
        if pi_override is not None and b in pi_override:
            pi[b, 0] = pi_override[b]
    return TrainBatch(
        obs=obs, actions=actions, rewards=rewards, values=values, pi=pi, cand_ap=cand_ap,
        cand_o=cand_o, cand_c=cand_c, policy_mask=policy_mask, reward_mask=reward_mask,
        consistency_mask=cons_mask, weights=np.asarray(weights, dtype=float),
    )
