"""Self-play episodes driven by tree search, and the search-based agent."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..model import checkpoint
from ..planner import SearchConfig, run_search, select_action
from .replay import Trajectory


def play_episode(env, model, search=None, rng=None, temperature=1.0, start_index=0, env_seed=0,
                 mode="train", max_steps=None):
    """Run one episode with search at every step and return its Trajectory."""
    search = search or SearchConfig()
    rng = rng if rng is not None else np.random.default_rng(env_seed)
    obs = env.reset(start_index, env_seed)
    n = env.n_actions
    rows = {k: [] for k in ("obs", "actions", "rewards", "pi", "ap", "o", "c", "values", "enc")}
    ren_p = ren_max = 0.0
    reason = ""
    limit = max_steps or env.config.episode_len
    for _ in range(limit):
        res = run_search(obs, model, search, rng, env.action_space(), env.switch_masks(), env.legalize,
                         training=(mode == "train"))
        idx = select_action(res, temperature, mode, rng)
        result = env.step(res.legal[idx])
        rows["obs"].append(obs)
        rows["actions"].append(res.encodings[idx])
        rows["rewards"].append(result.reward)
        rows["pi"].append(res.pi)
        rows["ap"].append(np.array([r.a_p for r in res.candidates]))
        rows["o"].append(np.array([r.a_o for r in res.candidates]))
        rows["c"].append(np.array([r.a_c for r in res.candidates]))
        rows["values"].append(res.root_value)
        rows["enc"].append(res.encodings)
        ren_p += result.info.get("renewable_p", 0.0)
        ren_max += result.info.get("renewable_p_max", 0.0)
        obs = result.observation
        if result.done:
            reason = result.info["reason"]
            break
    else:
        reason = "step limit"
    rows["obs"].append(obs)
    traj = Trajectory(
        obs=np.array(rows["obs"]),
        actions=np.array(rows["actions"]),
        rewards=np.array(rows["rewards"], dtype=float),
        pi=np.array(rows["pi"]),
        cand_ap=np.array(rows["ap"]).reshape(len(rows["rewards"]), -1, n),
        cand_o=np.array(rows["o"]).reshape(len(rows["rewards"]), -1, n + 1),
        cand_c=np.array(rows["c"]).reshape(len(rows["rewards"]), -1, n + 1),
        root_values=np.array(rows["values"], dtype=float),
        cand_enc=np.array(rows["enc"]).reshape(len(rows["rewards"]), -1, 3 * n + 2),
        reason=reason,
        seed=env_seed,
        start_index=start_index,
        info={"renewable_consumption": ren_p / ren_max if ren_max > 0 else 1.0},
    )
    return traj


def _remote_episode(args):
    env, blob, search, seed_words, temperature, start, env_seed = args
    model, _ = checkpoint.from_bytes(blob)
    rng = np.random.default_rng(np.random.SeedSequence(seed_words))
    return play_episode(env, model, search, rng, temperature, start, env_seed)


def self_play(env, model, search, jobs, temperature=1.0, workers=1):
    """Play one episode per job and return trajectories in job order.

    Each job is (seed_words, start_index, env_seed); results do not depend on
    the number of workers.
    """
    if workers <= 1 or len(jobs) <= 1:
        out = []
        for seed_words, start, env_seed in jobs:
            rng = np.random.default_rng(np.random.SeedSequence(seed_words))
            out.append(play_episode(env, model, search, rng, temperature, start, env_seed))
        return out
    # workers rebuild the model from float32 bytes, so snapshot the same way here
    blob = checkpoint.to_bytes(model)
    args = [(env, blob, search, s, temperature, start, es) for s, start, es in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_remote_episode, args))


class GridZeroAgent:
    """Step-wise agent: greedy search over a fixed model."""

    name = "gridzero"

    def __init__(self, model, search=None, seed=0):
        self.model = model
        self.search = search or SearchConfig()
        self.rng = np.random.default_rng(seed)

    def reset(self, env, seed):
        self.rng = np.random.default_rng(seed)

    def act(self, env):
        obs = env.observation()
        res = run_search(obs, self.model, self.search, self.rng, env.action_space(), env.switch_masks(),
                         env.legalize, training=False)
        return res.legal[select_action(res, 0.0, "eval")]
