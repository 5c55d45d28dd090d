"""Per-step reward components and their weighted total."""

import numpy as np

from .config import REWARD_NAMES


def overflow_reward(rho):
    rho = np.asarray(rho, dtype=float)
    if rho.size == 0:
        return 1.0
    return 1.0 - float(np.sum(np.minimum(rho, 1.0))) / rho.size


def renewable_reward(p, p_max):
    total = float(np.sum(p_max))
    if total <= 0:
        return 1.0
    return float(np.sum(p)) / total


def balance_reward(p_bal, p_bal_max, p_bal_min):
    span = p_bal_max - p_bal_min
    return -(max(p_bal - p_bal_max, 0.0) + max(p_bal_min - p_bal, 0.0)) / span


def cost_reward(p, c2, c1, c0, on, switched, c_onoff, normalizer):
    p = np.asarray(p, dtype=float)
    running = np.where(on, c2 * p * p + c1 * p + c0, 0.0)
    total = float(np.sum(running) + np.sum(np.where(switched, c_onoff, 0.0)))
    return -total / normalizer


def _band_reward(x, upper, lower):
    x = np.asarray(x, dtype=float)
    span = upper - lower
    excess = (np.maximum(x - upper, 0.0) + np.maximum(lower - x, 0.0)) / span
    return float(np.exp(-np.sum(excess)) - 1.0)


def reactive_reward(q, q_max, q_min):
    return _band_reward(q, q_max, q_min)


def voltage_reward(v, v_max, v_min):
    return _band_reward(v, v_max, v_min)


def operating_cost(case, gen_p, gen_on, prev_on):
    """Dollar cost of one step: quadratic fuel cost of online units plus switching costs."""
    c2, c1, c0 = case.gen_array("c2"), case.gen_array("c1"), case.gen_array("c0")
    switched = np.asarray(gen_on) != np.asarray(prev_on)
    return -cost_reward(gen_p, c2, c1, c0, gen_on, switched, case.gen_array("c_onoff"), 1.0)


def compute_reward(case, config, sol, gen_on, prev_on, renewable_ceiling):
    """Return (total, components) for a converged power-flow solution.

    Penalty components (balance, cost, reactive, voltage) are floored at
    ``-config.penalty_clip`` before weighting.
    """
    bal = case.balanced_id
    g = case.generators[bal]
    ren = case.renewable_ids
    comps = {
        "overflow": overflow_reward(sol.rho),
        "renewable": renewable_reward(sol.gen_p[ren], renewable_ceiling),
        "balance": balance_reward(sol.slack_p, g.p_max, g.p_min),
        "cost": -operating_cost(case, sol.gen_p, gen_on, prev_on) / config.cost_normalizer,
        "reactive": reactive_reward(
            sol.gen_q[gen_on], case.gen_array("q_max")[gen_on], case.gen_array("q_min")[gen_on]
        ),
        "voltage": voltage_reward(sol.v_mag, case.bus_array("v_max"), case.bus_array("v_min")),
    }
    floor = -config.penalty_clip
    for key in ("balance", "cost", "reactive", "voltage"):
        comps[key] = max(comps[key], floor)
    total = sum(w * comps[k] for w, k in zip(config.reward_weights, REWARD_NAMES))
    return float(total), comps
