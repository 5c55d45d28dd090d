"""Day-ahead scheduling: priority-list unit commitment plus intraday economic dispatch."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..env.profiles import TimeSeries, _ar1
from ..safety import LegalAction


@dataclass
class CommitmentSchedule:
    status: np.ndarray  # (n_thermal, T) bool, status in force during decision step t
    thermal_ids: list
    feasible: bool = True
    shortfall: np.ndarray = field(default=None)  # MW by step (0 where capacity suffices)

    @property
    def horizon(self):
        return self.status.shape[1]


@dataclass
class DASConfig:
    reserve: float = 0.05
    min_run: int = 40
    renewable_error: float = 0.20
    load_error: float = 0.02
    error_corr: float = 0.99  # AR(1) coefficient of the day-ahead error
    renewable_scale: float = 1.0  # systematic bias, e.g. 2.0 for overestimation


def day_ahead_forecast(series, start, length, config=None, rng=None):
    """Noisy day-ahead view of `length` steps of `series` beginning one step after `start`.

    Errors are multiplicative and AR(1)-correlated in time; renewable
    forecasts are then scaled by `renewable_scale` and capped at zero below.
    """
    config = config or DASConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    sl = slice(start + 1, start + 1 + length)
    load = series.load_p[:, sl].copy()
    ren = series.renewable_p_max[:, sl].copy()
    phi = config.error_corr
    innov = math.sqrt(1.0 - phi * phi)
    if config.load_error > 0:
        for i in range(load.shape[0]):
            load[i] *= 1.0 + _ar1(rng, length, phi, config.load_error * innov)
    if config.renewable_error > 0:
        for j in range(ren.shape[0]):
            ren[j] *= 1.0 + _ar1(rng, length, phi, config.renewable_error * innov)
    ren = np.maximum(ren * config.renewable_scale, 0.0)
    return TimeSeries(np.maximum(load, 0.0), np.maximum(load, 0.0) * 0.0, ren)


def _balanced_band(case, redundancy):
    g = case.generators[case.balanced_id]
    return g.p_min + redundancy, g.p_max - redundancy


def net_load(forecast):
    return forecast.load_p.sum(axis=0) - forecast.renewable_p_max.sum(axis=0)


def priority_order(case):
    """Thermal generator ids, cheapest marginal cost at p_max first."""
    ids = list(case.thermal_ids)
    cost = [case.generators[g].c1 + 2 * case.generators[g].c2 * case.generators[g].p_max for g in ids]
    return [ids[k] for k in np.argsort(cost, kind="stable")]


def _runs(row):
    """(value, start, length) for each maximal run of a boolean row."""
    out = []
    start = 0
    for t in range(1, len(row) + 1):
        if t == len(row) or row[t] != row[start]:
            out.append((bool(row[start]), start, t - start))
            start = t
    return out


def repair_min_runs(status, min_run=40):
    """Make every on- and off-run at least `min_run` long by turning units on.

    Short off-runs are filled; short on-runs are extended forward, then
    backward at the end of the horizon. Only ever adds on-steps, so it
    terminates and never loses capacity.
    """
    status = np.array(status, dtype=bool)
    T = status.shape[1]
    for row in status:
        if T < min_run:
            row[:] = row.any()
            continue
        while True:
            short = [r for r in _runs(row) if r[2] < min_run]
            if not short:
                break
            value, start, length = min(short, key=lambda r: (r[2], r[1]))
            if not value:
                row[start:start + length] = True
            else:
                end = min(start + min_run, T)
                row[start:end] = True
                if end - start < min_run:
                    row[max(T - min_run, 0):T] = True
    return status


def min_run_ok(status, min_run=40):
    return all(r[2] >= min_run for row in np.atleast_2d(status) for r in _runs(row))


def das_uc(forecast, case, config=None, redundancy=5.0):
    """Priority-list commitment over the forecast horizon, then min-up/down repair."""
    config = config or DASConfig()
    order = priority_order(case)
    thermal = list(case.thermal_ids)
    bal_lo, bal_hi = _balanced_band(case, redundancy)
    net = net_load(forecast)
    T = len(net)
    status = np.zeros((len(thermal), T), dtype=bool)
    shortfall = np.zeros(T)
    for t in range(T):
        need = net[t] * (1.0 + config.reserve)
        cap, floor = bal_hi, bal_lo
        chosen = []
        for g in order:
            if cap >= need:
                break
            chosen.append(g)
            cap += case.generators[g].p_max
            floor += case.generators[g].p_min
        # shed the dearest units again while minimum output exceeds demand
        while chosen and floor > net[t] and cap - case.generators[chosen[-1]].p_max >= net[t]:
            g = chosen.pop()
            cap -= case.generators[g].p_max
            floor -= case.generators[g].p_min
        shortfall[t] = max(need - cap, 0.0)
        for g in chosen:
            status[thermal.index(g), t] = True
    status = repair_min_runs(status, config.min_run)
    cap = bal_hi + np.array([case.generators[g].p_max for g in thermal]) @ status
    shortfall = np.maximum(net * (1.0 + config.reserve) - cap, 0.0)
    return CommitmentSchedule(status, thermal, bool(np.all(shortfall <= 0)), shortfall)


# ------------------------------------------------------------------ dispatch
def lambda_dispatch(demand, c2, c1, lo, hi, tol=1e-9, max_iter=200):
    """Equal-incremental-cost dispatch of `demand` MW over units with bounds [lo, hi].

    Returns (p, ok); ok is False when demand falls outside [sum(lo), sum(hi)],
    in which case the proportional fallback is returned.
    """
    c2, c1 = np.asarray(c2, float), np.asarray(c1, float)
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    if len(lo) == 0:
        return np.zeros(0), demand == 0
    if demand < lo.sum() - tol or demand > hi.sum() + tol:
        return proportional_dispatch(demand, lo, hi), False
    slope = np.maximum(2.0 * c2, 1e-9)

    def output(lam):
        return np.clip((lam - c1) / slope, lo, hi)

    a = float(np.min(c1 + slope * lo)) - 1.0
    b = float(np.max(c1 + slope * hi)) + 1.0
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        if output(mid).sum() < demand:
            a = mid
        else:
            b = mid
        if b - a < tol:
            break
    p = output(0.5 * (a + b))
    # spread the last rounding residual over units not at a bound
    free = (p > lo + 1e-12) & (p < hi - 1e-12)
    if free.any():
        p[free] += (demand - p.sum()) / free.sum()
    return p, True


def proportional_dispatch(demand, lo, hi):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    span = hi - lo
    if demand <= lo.sum() or span.sum() <= 0:
        return lo.copy()
    if demand >= hi.sum():
        return hi.copy()
    return lo + span * (demand - lo.sum()) / span.sum()


def dispatch_cost(case, t_net, on_ids, redundancy=5.0):
    """Cheapest quadratic cost of serving `t_net` MW with the balanced unit plus `on_ids`.

    Renewables are free and already netted out; when the committed minimum
    exceeds demand the surplus is curtailed renewable output. Returns inf
    when capacity is short.
    """
    gens = [case.balanced_id] + list(on_ids)
    bal_lo, bal_hi = _balanced_band(case, redundancy)
    lo = np.array([bal_lo] + [case.generators[g].p_min for g in on_ids])
    hi = np.array([bal_hi] + [case.generators[g].p_max for g in on_ids])
    if t_net > hi.sum() + 1e-9:
        return math.inf
    demand = max(t_net, lo.sum())
    c2 = np.array([case.generators[g].c2 for g in gens])
    c1 = np.array([case.generators[g].c1 for g in gens])
    c0 = np.array([case.generators[g].c0 for g in gens])
    p, _ = lambda_dispatch(demand, c2, c1, lo, hi)
    return float(np.sum(c2 * p * p + c1 * p + c0))


def _step_costs(case, net, reserve, redundancy):
    """cost[t, mask] for every subset of thermal units (bit k = thermal unit k on)."""
    thermal = list(case.thermal_ids)
    n = len(thermal)
    bal_hi = _balanced_band(case, redundancy)[1]
    p_max = np.array([case.generators[g].p_max for g in thermal])
    table = np.full((len(net), 1 << n), math.inf)
    for mask in range(1 << n):
        on = [thermal[k] for k in range(n) if mask >> k & 1]
        cap = bal_hi + sum(p_max[k] for k in range(n) if mask >> k & 1)
        for t, d in enumerate(net):
            if cap >= d * (1.0 + reserve):
                table[t, mask] = dispatch_cost(case, d, on, redundancy)
    return table


def schedule_cost(case, status, net, config=None, redundancy=5.0, initial_on=True):
    """Dispatch cost plus switching cost of a commitment matrix (inf if short of reserve)."""
    config = config or DASConfig()
    table = _step_costs(case, net, config.reserve, redundancy)
    thermal = list(case.thermal_ids)
    masks = np.zeros(status.shape[1], dtype=int)
    for k in range(len(thermal)):
        masks |= status[k].astype(int) << k
    total = float(np.sum(table[np.arange(len(net)), masks]))
    prev = np.full(len(thermal), initial_on)
    for t in range(status.shape[1]):
        switched = status[:, t] != prev
        total += sum(case.generators[thermal[k]].c_onoff for k in np.flatnonzero(switched))
        prev = status[:, t]
    return total


def exact_uc(forecast, case, config=None, redundancy=5.0, initial_on=True):
    """Optimal commitment by dynamic programming over per-unit (status, run timer) states.

    Exhaustive over every schedule that honours the minimum run rule (runs
    still open at the horizon end are exempt; the initial run is free to
    end at once). Practical for up to three thermal units.
    """
    config = config or DASConfig()
    thermal = list(case.thermal_ids)
    n = len(thermal)
    if n > 3:
        raise ValueError("exact commitment is limited to three thermal units")
    net = net_load(forecast)
    T = len(net)
    M = config.min_run
    table = _step_costs(case, net, config.reserve, redundancy)
    S = 2 * M  # per-unit states: index = status * M + (timer - 1), timer capped at M
    status_of = np.repeat([0, 1], M)
    c_sw = [case.generators[g].c_onoff for g in thermal]

    # joint status mask per joint state, for looking up the step cost
    mask_grid = np.zeros((S,) * n, dtype=int)
    for k in range(n):
        shape = [1] * n
        shape[k] = S
        mask_grid = mask_grid + (status_of.reshape(shape) << k)

    V = np.full((S,) * n, math.inf)
    start = (1 if initial_on else 0) * M + (M - 1)
    V[(start,) * n] = 0.0
    keep_free = []  # per step, per unit: bool array True where the free slot came from itself
    for t in range(T):
        choices = []
        for k in range(n):
            V, ch = _advance_axis(V, k, M, c_sw[k])
            choices.append(ch)
        V = V + table[t][mask_grid]
        keep_free.append(choices)
    end = np.unravel_index(np.argmin(V), V.shape)
    best = float(V[end])
    if not math.isfinite(best):
        return None, math.inf
    states = [end]
    cur = end
    for t in reversed(range(T)):
        prev = list(cur)
        for k in reversed(range(n)):
            prev[k] = _predecessor(prev, k, keep_free[t][k], M)
        cur = tuple(prev)
        states.append(cur)
    states = states[::-1][1:]
    status = np.array([[status_of[s[k]] for s in states] for k in range(n)], dtype=bool)
    return CommitmentSchedule(status, thermal, True, np.zeros(T)), best


def _advance_axis(V, axis, M, c_sw):
    """One time step of unit `axis`'s timer automaton (min-plus along that axis)."""
    V = np.moveaxis(V, axis, 0)
    out = np.full_like(V, math.inf)
    choice = np.zeros((2,) + V.shape[1:], dtype=bool)
    for st in (0, 1):
        base = st * M
        other = (1 - st) * M
        # timer 1: just switched from the other status' free slot
        out[base] = V[other + M - 1] + c_sw
        # timers 2..M-1 advance deterministically
        out[base + 1:base + M - 1] = V[base:base + M - 2]
        # free slot: reached from timer M-1 or stayed free
        stay = V[base + M - 1]
        come = V[base + M - 2]
        choice[st] = stay <= come
        out[base + M - 1] = np.minimum(stay, come)
    return np.moveaxis(out, 0, axis), choice


def _predecessor(state, axis, choice, M):
    s = state[axis]
    st, timer = divmod(s, M)
    if timer == 0:
        return (1 - st) * M + M - 1
    if timer < M - 1:
        return s - 1
    rest = tuple(state[:axis]) + tuple(state[axis + 1:])
    stayed = choice[st][rest] if rest else choice[st]
    return s if stayed else s - 1


# --------------------------------------------------------------------- agent
class DASAgent:
    """Follows a fixed day-ahead schedule and dispatches each step by lambda iteration.

    Intraday dispatch sees the environment's ultra-short-term forecasts; the
    commitment itself is never revised.
    """

    name = "das"

    def __init__(self, case, series, config=None, forecast_seed=0):
        self.case = case
        self.series = series
        self.config = config or DASConfig()
        self.forecast_seed = forecast_seed
        self.schedule = None
        self.fallbacks = 0

    def reset(self, env, seed):
        rng = np.random.default_rng(np.random.SeedSequence([self.forecast_seed, seed]))
        fc = day_ahead_forecast(self.series, env.state.start_index, env.config.episode_len, self.config, rng)
        self.schedule = das_uc(fc, self.case, self.config, env.config.balance_redundancy)
        self.fallbacks = 0

    def act(self, env):
        case, s = self.case, env.state
        t = min(s.step, self.schedule.horizon - 1)
        ids = list(env.ctrl)
        low, high = env.action_space()
        p_now = s.gen_p[ids]
        p_min = case.gen_array("p_min")[ids]
        target_p = p_now.copy()
        startup = shutdown = None
        start_mask, stop_mask = env.switch_masks()

        fixed = 0.0
        dispatch = []  # controllable indices dispatched by lambda iteration
        ramp = case.gen_array("ramp_rate")[ids] * case.gen_array("p_max")[ids]
        for row, g in enumerate(self.schedule.thermal_ids):
            k = ids.index(g)
            want = self.schedule.status[row, t]
            on = s.gen_status[g]
            if want and not on:
                if startup is None and start_mask[k]:
                    startup = k
                    target_p[k] = p_min[k]
                    fixed += p_min[k]
                else:
                    target_p[k] = 0.0
                continue
            if not want and on:
                if shutdown is None and stop_mask[k]:
                    shutdown = k
                    target_p[k] = 0.0
                    continue
                # head for p_min so the shutdown becomes possible
                target_p[k] = max(p_min[k], p_now[k] - ramp[k])
                fixed += target_p[k]
                continue
            if on:
                lookahead = self.schedule.status[row, t:t + 1 + int(math.ceil((p_now[k] - p_min[k]) / max(ramp[k], 1e-9)))]
                if not lookahead.all():
                    target_p[k] = max(p_min[k], p_now[k] - ramp[k])
                    fixed += target_p[k]
                else:
                    dispatch.append(k)
            else:
                target_p[k] = 0.0

        bal_lo, bal_hi = _balanced_band(case, env.config.balance_redundancy)
        demand = float(s.next_load_p.sum()) + s.grid_loss
        ren_ids = [ids.index(g) for g in case.renewable_ids]
        ceiling = s.next_renewable_p_max
        bal = case.balanced_id
        lo = np.array([bal_lo] + [p_now[k] + low[k] for k in dispatch])
        hi = np.array([bal_hi] + [p_now[k] + high[k] for k in dispatch])
        # renewables first, curtailed only when the committed minimum leaves no room
        room = demand - fixed - lo.sum()
        ren_total = float(np.clip(room, 0.0, ceiling.sum()))
        residual = demand - fixed - ren_total
        gens = [bal] + [ids[k] for k in dispatch]
        c2 = np.array([case.generators[g].c2 for g in gens])
        c1 = np.array([case.generators[g].c1 for g in gens])
        p, ok = lambda_dispatch(residual, c2, c1, lo, hi)
        if not ok:
            self.fallbacks += 1
        for j, k in enumerate(dispatch):
            target_p[k] = p[j + 1]
        share = ceiling / ceiling.sum() if ceiling.sum() > 0 else np.zeros(len(ceiling))
        for j, k in enumerate(ren_ids):
            target_p[k] = ren_total * share[j]

        delta = np.clip(target_p - p_now, low, high)
        for k in (startup, shutdown):
            if k is not None:
                delta[k] = 0.0
        return LegalAction(delta, startup, shutdown)


def adjust_capacity_curves(case, schedule, series, start, redundancy=5.0):
    """Per-step plot data: load, committed sum(p_min)/sum(p_max), renewable ceiling."""
    thermal = schedule.thermal_ids
    bal_lo, bal_hi = _balanced_band(case, redundancy)
    p_min = np.array([case.generators[g].p_min for g in thermal])
    p_max = np.array([case.generators[g].p_max for g in thermal])
    T = schedule.horizon
    sl = slice(start + 1, start + 1 + T)
    load = series.load_p[:, sl].sum(axis=0)
    ren = series.renewable_p_max[:, sl].sum(axis=0)
    return {
        "step": np.arange(T),
        "load": load,
        "net_load": load - ren,
        "committed_min": bal_lo + p_min @ schedule.status,
        "committed_max": bal_hi + p_max @ schedule.status,
        "renewable_ceiling": ren,
    }
