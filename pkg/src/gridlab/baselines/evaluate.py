"""Evaluation harness, random-safe agent and report export."""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..env.config import REWARD_NAMES
from ..safety import LegalAction, RawAction, map_action

VIOLATIONS = ("voltage_violation", "reactive_violation", "balance_violation", "soft_overflow", "hard_overflow")
EPISODE_FIELDS = [
    "seed", "start_index", "steps", "reason", "cumulative_reward", "wall_time_s", "step_latency_s",
    "voltage_violation_pct", "reactive_violation_pct", "balance_violation_pct", "soft_overflow_pct",
    "hard_overflow_pct", "operating_cost", "renewable_consumption_pct", "curtailment_mwh", "load_shedding_events",
]
TRACE_FIELDS = [
    "step", "reward", "done", "reason", "illegal", "infeasible", *VIOLATIONS, *(f"r_{k}" for k in REWARD_NAMES),
    "curtailment", "operating_cost", "renewable_p", "renewable_p_max", "slack_p", "grid_loss", "tripped_lines",
]


class RandomSafeAgent:
    """Uniform continuous adjustments, no switching, mapped and legalized."""

    name = "random"

    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)

    def reset(self, env, seed):
        self.rng = np.random.default_rng(seed)

    def act(self, env):
        n = env.n_actions
        no_op = np.zeros(n + 1)
        no_op[n] = 1.0
        raw = RawAction(self.rng.uniform(-1.0, 1.0, n), no_op, no_op.copy())
        low, high = env.action_space()
        return env.legalize(map_action(raw, low, high))


class NoOpAgent:
    name = "noop"

    def reset(self, env, seed):
        pass

    def act(self, env):
        return LegalAction(np.zeros(env.n_actions))


def trace_row(step, result):
    info = result.info
    comps = info.get("components", {})
    row = {
        "step": step, "reward": result.reward, "done": int(result.done), "reason": info.get("reason", ""),
        "illegal": info.get("illegal", ""), "infeasible": int(bool(info.get("infeasible", False))),
    }
    for k in VIOLATIONS:
        row[k] = int(bool(info.get(k, False)))
    for k in REWARD_NAMES:
        row[f"r_{k}"] = comps.get(k, 0.0)
    for k in ("curtailment", "operating_cost", "renewable_p", "renewable_p_max", "slack_p", "grid_loss"):
        row[k] = info.get(k, 0.0)
    row["tripped_lines"] = " ".join(str(x) for x in info.get("tripped_lines", []))
    return row


def write_csv(rows, fields, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def run_episode(env, agent, start_index, seed):
    """Play one episode; return (episode metrics, per-step trace rows)."""
    env.reset(start_index, seed)
    agent.reset(env, seed)
    rows = []
    latency = 0.0
    t0 = time.perf_counter()
    for t in range(env.config.episode_len):
        a0 = time.perf_counter()
        action = agent.act(env)
        latency += time.perf_counter() - a0
        result = env.step(action)
        rows.append(trace_row(t, result))
        if result.done:
            break
    wall = time.perf_counter() - t0
    return episode_metrics(rows, env.config.step_minutes, seed, start_index, wall, latency), rows


def episode_metrics(rows, step_minutes, seed=0, start_index=0, wall=0.0, latency=0.0):
    """Table-style metrics from per-step trace rows (agent-agnostic)."""
    n = len(rows)
    pct = {k: 100.0 * sum(r[k] for r in rows) / n if n else 0.0 for k in VIOLATIONS}
    ren = sum(r["renewable_p"] for r in rows)
    ren_max = sum(r["renewable_p_max"] for r in rows)
    reason = rows[-1]["reason"] if rows else ""
    return {
        "seed": seed,
        "start_index": start_index,
        "steps": n,
        "reason": reason,
        "cumulative_reward": float(sum(r["reward"] for r in rows)),
        "wall_time_s": wall,
        "step_latency_s": latency / n if n else 0.0,
        "voltage_violation_pct": pct["voltage_violation"],
        "reactive_violation_pct": pct["reactive_violation"],
        "balance_violation_pct": pct["balance_violation"],
        "soft_overflow_pct": pct["soft_overflow"],
        "hard_overflow_pct": pct["hard_overflow"],
        "operating_cost": float(sum(r["operating_cost"] for r in rows)),
        "renewable_consumption_pct": 100.0 * ren / ren_max if ren_max > 0 else 100.0,
        "curtailment_mwh": float(sum(r["curtailment"] for r in rows)) * step_minutes / 60.0,
        "load_shedding_events": int(reason == "balance"),
    }


@dataclass
class EvalReport:
    agent: str
    episodes: list = field(default_factory=list)

    def aggregate(self):
        out = {}
        for key in EPISODE_FIELDS:
            if key in ("seed", "start_index", "reason"):
                continue
            vals = np.array([e[key] for e in self.episodes], dtype=float)
            out[key] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0}
        return out

    def mean(self, key):
        return self.aggregate()[key]["mean"]

    def std(self, key):
        return self.aggregate()[key]["std"]

    def to_csv(self, path):
        write_csv(self.episodes, EPISODE_FIELDS, path)

    def to_json(self, path):
        doc = {"agent": self.agent, "episodes": self.episodes, "aggregate": self.aggregate()}
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def _episode_job(args):
    env, agent, start, seed = args
    return run_episode(env, agent, start, seed)


def evaluate(agent, env, seeds, starts=None, trace_dir=None, workers=1):
    """Run one full episode per seed and collect an EvalReport.

    Episode i starts at `starts[i % len(starts)]` (default: series start).
    Agents reset from the episode seed, so results match for any `workers`;
    with several workers each process gets its own copy of env and agent.
    """
    starts = list(starts) if starts else [0]
    seeds = list(seeds)
    report = EvalReport(getattr(agent, "name", type(agent).__name__))
    jobs = [(env, agent, starts[i % len(starts)], seed) for i, seed in enumerate(seeds)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_episode_job, jobs))
    else:
        results = [_episode_job(j) for j in jobs]
    for seed, (metrics, rows) in zip(seeds, results):
        report.episodes.append(metrics)
        if trace_dir is not None:
            Path(trace_dir).mkdir(parents=True, exist_ok=True)
            write_csv(rows, TRACE_FIELDS, Path(trace_dir) / f"{report.agent}_seed{seed}.csv")
    return report


def pooled_std(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    na, nb = len(a), len(b)
    return float(np.sqrt(((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2)))


def compare_table(reports):
    """Side-by-side rows: one per metric, one column per agent (mean ± std)."""
    aggs = {r.agent: r.aggregate() for r in reports}
    keys = [k for k in EPISODE_FIELDS if k not in ("seed", "start_index", "reason")]
    rows = []
    for k in keys:
        row = {"metric": k}
        for name, agg in aggs.items():
            row[name] = f"{agg[k]['mean']:.4g} ± {agg[k]['std']:.3g}"
        rows.append(row)
    return rows
