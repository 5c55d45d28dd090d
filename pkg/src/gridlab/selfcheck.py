"""Invariant suite behind the `selfcheck` command: power flow, gradients, safety layer, search."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .env.env import GridSimEnv
from .env.profiles import make_profiles
from .grid.case import case_from_dict, load_case
from .grid.powerflow import bus_injection_mismatch, solve_power_flow
from .model.gradcheck import check_gradients, random_batch, toy_model
from .planner import SearchConfig, iter_nodes, run_search
from .safety import RawAction, map_action


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


def two_bus_case(x=0.1):
    """Slack at 1.0 p.u. feeding a 50 MW, 0 MVAr load over a lossless line."""
    return case_from_dict({
        "format": 1,
        "s_base": 100.0,
        "buses": [{"id": 1, "kind": "slack", "v_max": 1.1, "v_min": 0.9},
                  {"id": 2, "kind": "pq", "v_max": 1.1, "v_min": 0.9}],
        "lines": [{"from_bus": 1, "to_bus": 2, "r": 0.0, "x": x, "b": 0.0, "i_max": 10.0}],
        "generators": [{"bus": 1, "kind": "balanced", "p_max": 200.0, "p_min": 0.0,
                        "q_max": 100.0, "q_min": -100.0, "v_set": 1.0}],
        "loads": [{"bus": 2, "base_p": 50.0, "base_q": 0.0}],
    }, name="two_bus")


def two_bus_closed_form(p=0.5, x=0.1):
    theta = -0.5 * math.asin(2.0 * p * x)
    return theta, math.cos(theta)


def check_two_bus(tol=1e-8):
    case = two_bus_case()
    sol = solve_power_flow(case, np.zeros(1), np.ones(1), np.array([50.0]), np.array([0.0]), tol=1e-12)
    theta, v = two_bus_closed_form()
    err = max(abs(sol.v_ang[1] - theta), abs(sol.v_mag[1] - v))
    return CheckResult("two-bus closed form", bool(sol.converged and err <= tol), f"max error {err:.2e} p.u.")


def check_injection_balance(case_name="six_bus", tol=1e-8):
    """Solved voltages reproduce the specified injections at every bus."""
    case = load_case(case_name)
    gen_p = np.where([g.kind == "thermal" for g in case.generators],
                     0.5 * (case.gen_array("p_min") + case.gen_array("p_max")),
                     0.4 * case.gen_array("p_max"))
    load_p, load_q = case.load_array("base_p"), case.load_array("base_q")
    sol = solve_power_flow(case, gen_p, case.gen_array("v_set"), load_p, load_q, tol=1e-10)
    mis = float(np.max(np.abs(bus_injection_mismatch(case, sol, gen_p, load_p, load_q))))
    start = time.perf_counter()
    reps = 200
    for _ in range(reps):
        solve_power_flow(case, gen_p, case.gen_array("v_set"), load_p, load_q)
    ms = 1e3 * (time.perf_counter() - start) / reps
    ok = sol.converged and mis <= tol and ms < 1.0
    return CheckResult(f"{case_name} power flow", bool(ok), f"mismatch {mis:.1e} p.u., {ms:.3f} ms/solve")


def check_gradient_suite(n_configs=20, seed=0, tol=1e-4):
    worst = 0.0
    for k in range(n_configs):
        rng = np.random.default_rng([seed, k])
        act = ("relu", "tanh")[k % 2]
        model = toy_model(rng, obs_dim=int(rng.integers(3, 7)), n_units=int(rng.integers(1, 4)), activation=act)
        batch = random_batch(model.config, batch=int(rng.integers(2, 4)), unroll=int(rng.integers(1, 3)),
                             n_cand=int(rng.integers(2, 5)), rng=rng)
        err, _ = check_gradients(model, batch)
        worst = max(worst, err)
    return CheckResult("gradient suite", worst <= tol, f"{n_configs} configurations, worst relative error {worst:.2e}")


def random_raw_action(rng, n, start_mask, stop_mask, switch_prob=0.2):
    a_o = np.zeros(n + 1)
    a_c = np.zeros(n + 1)
    a_o[n] = a_c[n] = 1.0
    if rng.random() < switch_prob and start_mask[:n].any():
        a_o[:] = 0.0
        a_o[rng.choice(np.flatnonzero(start_mask[:n]))] = 1.0
    if rng.random() < switch_prob and stop_mask[:n].any():
        a_c[:] = 0.0
        a_c[rng.choice(np.flatnonzero(stop_mask[:n]))] = 1.0
    return RawAction(rng.uniform(-1.0, 1.0, n), a_o, a_c)


def safety_fuzz(n_pairs=10_000, seed=0, case_name="six_bus", days=8):
    """Post-step balanced-unit output for random (state, raw action) pairs.

    States are visited by a random-switching walker over several days; at
    each one a fresh raw action is mapped, legalized and stepped on a copy.
    Pairs the safety layer flags as infeasible are counted separately.
    Returns a dict of counts.
    """
    case = load_case(case_name)
    series = make_profiles(case, seed=seed, days=days)
    env = GridSimEnv(case, series)
    rng = np.random.default_rng(seed)
    n = env.n_actions
    stats = {"pairs": 0, "in_band": 0, "infeasible": 0, "bound_violations": 0, "max_excess": 0.0}
    day = env.config.steps_per_day
    while stats["pairs"] < n_pairs:
        start = day * int(rng.integers(0, days - 1)) + int(rng.integers(0, day // 2))
        env.reset(start, int(rng.integers(1 << 31)))
        for _ in range(env.config.episode_len):
            state = env.state
            low, high = env.action_space()
            masks = env.switch_masks()
            action = env.legalize(map_action(random_raw_action(rng, n, *masks), low, high, *masks))
            if np.any(action.delta_p < low - 1e-9) or np.any(action.delta_p > high + 1e-9):
                stats["bound_violations"] += 1
            if action.infeasible:
                stats["infeasible"] += 1
            else:
                stats["pairs"] += 1
                env.state = state.copy()
                res = env.step(action)
                slack = res.info.get("slack_p", math.nan)
                excess = max(slack - env.p_bal_max, env.p_bal_min - slack, 0.0)
                stats["max_excess"] = max(stats["max_excess"], excess)
                stats["in_band"] += int(excess == 0.0)
                if stats["pairs"] >= n_pairs:
                    break
            # walk on with the same action from the original state
            env.state = state
            res = env.step(action)
            if res.done:
                break
    stats["in_band_fraction"] = stats["in_band"] / max(stats["pairs"], 1)
    return stats


def check_safety(n_pairs=10_000, seed=0):
    s = safety_fuzz(n_pairs, seed)
    ok = s["in_band_fraction"] >= 0.999 and s["bound_violations"] == 0
    return CheckResult("safety-layer fuzz", ok,
                       f"{s['pairs']} pairs, {100 * s['in_band_fraction']:.2f}% in band, "
                       f"{s['bound_violations']} bound violations, {s['infeasible']} infeasible skipped")


def check_visit_conservation(n_searches=5, seed=0):
    from .model.network import GridZeroModel, ModelConfig

    rng = np.random.default_rng(seed)
    n, d = 3, 8
    model = GridZeroModel(ModelConfig(obs_dim=d, n_units=n, hidden=8, repr_width=16, dyn_width=16,
                                      reward_width=8, pred_width=16, proj_dim=8, seed=seed))
    cfg = SearchConfig(n_sim=20)
    bad = 0
    for _ in range(n_searches):
        res = run_search(rng.normal(size=d), model, cfg, rng, (-np.ones(n), np.ones(n)))
        for node in iter_nodes(res.root):
            if node.children and node.visit_count != 1 + sum(c.visit_count for c in node.children):
                bad += 1
    return CheckResult("search visit conservation", bad == 0, f"{n_searches} searches, {bad} bad nodes")


def run_all(quick=False):
    checks = [check_two_bus, check_injection_balance, check_gradient_suite, check_visit_conservation]
    out = [c() for c in checks]
    out.append(check_safety(2000 if quick else 10_000))
    return out
