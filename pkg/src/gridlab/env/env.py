"""The real-time scheduling environment."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from ..grid.powerflow import solve_power_flow
from ..safety import LegalAction, legalize as _legalize
from .config import REWARD_NAMES, EnvConfig
from .reward import compute_reward, operating_cost


class EnvError(RuntimeError):
    pass


@dataclass
class EnvState:
    step: int
    start_index: int
    gen_p: np.ndarray
    gen_q: np.ndarray
    gen_v: np.ndarray
    gen_status: np.ndarray
    steps_to_recover: np.ndarray
    steps_to_close: np.ndarray
    line_status: np.ndarray
    outage_timer: np.ndarray
    soft_overflow_counter: np.ndarray
    load_p: np.ndarray
    load_q: np.ndarray
    renewable_p_max: np.ndarray  # ceiling at the current step
    next_load_p: np.ndarray  # forecasts for step + 1
    next_renewable_p_max: np.ndarray
    bus_v: np.ndarray
    bus_ang: np.ndarray
    rho: np.ndarray
    grid_loss: float
    slack_p: float
    rng: np.random.Generator
    done: bool = False
    reason: str = ""

    def copy(self):
        return copy.deepcopy(self)


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


def observation_size(case):
    n_gen, n_load, n_line = case.n_gen, case.n_load, case.n_line
    n_ren = len(case.renewable_ids)
    return 3 * n_gen + 3 * n_load + 2 * n_line + 3 * n_gen + 2 * n_ren + n_load + 1 + 2


def observation_layout(case):
    """Ordered (name, length) pairs describing the flat observation vector."""
    n_gen, n_load, n_line = case.n_gen, case.n_load, case.n_line
    n_ren = len(case.renewable_ids)
    return [
        ("gen_p", n_gen), ("gen_q", n_gen), ("gen_v", n_gen),
        ("load_p", n_load), ("load_q", n_load), ("load_v", n_load),
        ("rho", n_line), ("line_status", n_line),
        ("gen_status", n_gen), ("steps_to_recover", n_gen), ("steps_to_close", n_gen),
        ("curstep_renewable_p_max", n_ren), ("nextstep_renewable_p_max", n_ren),
        ("next_load_p", n_load), ("grid_loss", 1), ("day_phase", 2),
    ]


class GridSimEnv:
    """AC power-flow scheduling environment.

    Actions are `LegalAction` adjustments over the controllable generators
    (every generator except the balanced unit, in case order).
    """

    def __init__(self, case, series, config=None):
        self.case = case
        self.series = series
        self.config = config or EnvConfig()
        series.check(case, self.config.episode_len)
        self.ctrl = case.controllable_ids
        self._p_max = case.gen_array("p_max")
        self._p_min = case.gen_array("p_min")
        self._ramp = case.gen_array("ramp_rate") * self._p_max
        self._v_set = case.gen_array("v_set")
        self._is_thermal = np.array([g.kind == "thermal" for g in case.generators])
        self._is_ren = np.array([g.kind == "renewable" for g in case.generators])
        bal = case.generators[case.balanced_id]
        self.p_bal_max, self.p_bal_min = bal.p_max, bal.p_min
        self.state = None

    # ------------------------------------------------------------------ setup
    @property
    def n_actions(self):
        return len(self.ctrl)

    def _series_index(self, state, offset=0):
        return min(state.start_index + state.step + offset, len(self.series) - 1)

    def _forecast(self, state):
        k = self._series_index(state, 1)
        load = self.series.load_p[:, k].copy()
        ren = self.series.renewable_p_max[:, k].copy()
        std = self.config.forecast_noise_std
        if std > 0:
            load *= 1.0 + state.rng.normal(0.0, std, size=load.shape)
            ren *= 1.0 + state.rng.normal(0.0, std, size=ren.shape)
        cap = self._p_max[self.case.renewable_ids]
        return np.maximum(load, 0.0), np.clip(ren, 0.0, cap)

    def reset(self, start_index=0, seed=0):
        case, cfg = self.case, self.config
        if start_index < 0 or start_index + cfg.episode_len >= len(self.series):
            raise EnvError(
                f"start_index {start_index} leaves fewer than {cfg.episode_len + 1} steps in the series"
            )
        n_gen, n_line = case.n_gen, case.n_line
        gen_p = np.zeros(n_gen)
        th = case.thermal_ids
        gen_p[th] = 0.5 * (self._p_min[th] + self._p_max[th])
        ren_now = self.series.renewable_p_max[:, start_index].copy()
        gen_p[case.renewable_ids] = ren_now
        state = EnvState(
            step=0,
            start_index=start_index,
            gen_p=gen_p,
            gen_q=np.zeros(n_gen),
            gen_v=self._v_set.copy(),
            gen_status=np.ones(n_gen, dtype=bool),
            steps_to_recover=np.zeros(n_gen, dtype=int),
            steps_to_close=np.zeros(n_gen, dtype=int),
            line_status=np.ones(n_line, dtype=bool),
            outage_timer=np.zeros(n_line, dtype=int),
            soft_overflow_counter=np.zeros(n_line, dtype=int),
            load_p=self.series.load_p[:, start_index].copy(),
            load_q=self.series.load_q[:, start_index].copy(),
            renewable_p_max=ren_now,
            next_load_p=None,
            next_renewable_p_max=None,
            bus_v=None,
            bus_ang=None,
            rho=None,
            grid_loss=0.0,
            slack_p=0.0,
            rng=np.random.default_rng(seed),
        )
        sol = self._solve(state, gen_p, state.gen_status, state.line_status, state.load_p, state.load_q)
        if not sol.converged:
            raise EnvError("initial power flow did not converge")
        self._absorb_solution(state, sol)
        state.next_load_p, state.next_renewable_p_max = self._forecast(state)
        self.state = state
        return self.observation()

    # ------------------------------------------------------------ queries
    def action_space(self, state=None):
        """Per-controllable-generator (low, high) adjustment bounds in MW."""
        s = self.state if state is None else state
        ids = self.ctrl
        p = s.gen_p[ids]
        low = np.zeros(len(ids))
        high = np.zeros(len(ids))
        th = self._is_thermal[ids] & s.gen_status[ids]
        ramp = self._ramp[ids]
        low[th] = np.maximum(-ramp[th], self._p_min[ids][th] - p[th])
        high[th] = np.minimum(ramp[th], self._p_max[ids][th] - p[th])
        ren = self._is_ren[ids]
        ceiling = np.zeros(self.case.n_gen)
        ceiling[self.case.renewable_ids] = s.next_renewable_p_max
        low[ren] = -p[ren]
        high[ren] = ceiling[ids][ren] - p[ren]
        return low, high

    def switch_masks(self, state=None):
        """Eligibility masks (length n + 1, last slot the no-op) for startup and shutdown."""
        s = self.state if state is None else state
        ids = self.ctrl
        th = self._is_thermal[ids]
        on = s.gen_status[ids]
        start = th & ~on & (s.steps_to_recover[ids] == 0)
        at_min = np.isclose(s.gen_p[ids], self._p_min[ids], rtol=0, atol=1e-6)
        stop = th & on & at_min & (s.steps_to_close[ids] == 0)
        return np.append(start, True), np.append(stop, True)

    def online_mask(self, state=None):
        s = self.state if state is None else state
        return s.gen_status[self.ctrl].copy()

    def forecast(self, state=None):
        s = self.state if state is None else state
        return s.next_load_p.copy(), s.next_renewable_p_max.copy()

    def legalize(self, action, state=None):
        """Run the safety layer against this environment's current state."""
        s = self.state if state is None else state
        low, high = self.action_space(s)
        return _legalize(
            action,
            load_now=s.load_p.sum(),
            load_next=s.next_load_p.sum(),
            p_bal=s.slack_p,
            p_bal_max=self.p_bal_max,
            p_bal_min=self.p_bal_min,
            low=low,
            high=high,
            p_now=s.gen_p[self.ctrl],
            p_min=self._p_min[self.ctrl],
            online=self.online_mask(s),
            redundancy=self.config.balance_redundancy,
        )

    def observation(self, state=None):
        s = self.state if state is None else state
        case = self.case
        day = self.config.steps_per_day
        phase = 2 * math.pi * ((s.start_index + s.step) % day) / day
        parts = [
            s.gen_p, s.gen_q, s.gen_v,
            s.load_p, s.load_q, s.bus_v[case.load_bus],
            s.rho, s.line_status.astype(float),
            s.gen_status.astype(float), s.steps_to_recover.astype(float), s.steps_to_close.astype(float),
            s.renewable_p_max, s.next_renewable_p_max,
            s.next_load_p, [s.grid_loss], [math.sin(phase), math.cos(phase)],
        ]
        return np.concatenate([np.asarray(x, dtype=float).ravel() for x in parts])

    # ------------------------------------------------------------ dynamics
    def _solve(self, state, gen_p, gen_on, line_status, load_p, load_q):
        v0 = None
        if state.bus_v is not None:
            v0 = state.bus_v * np.exp(1j * state.bus_ang)
        sol = solve_power_flow(
            self.case, gen_p, self._v_set, load_p, load_q, line_status,
            tol=self.config.pf_tol, max_iter=self.config.pf_max_iter, gen_on=gen_on, v0=v0,
        )
        if not sol.converged and v0 is not None:
            sol = solve_power_flow(
                self.case, gen_p, self._v_set, load_p, load_q, line_status,
                tol=self.config.pf_tol, max_iter=self.config.pf_max_iter, gen_on=gen_on,
            )
        return sol

    def _absorb_solution(self, state, sol):
        state.gen_p = sol.gen_p.copy()
        state.gen_q = sol.gen_q.copy()
        state.gen_v = sol.v_mag[self.case.gen_bus].copy()
        state.bus_v = sol.v_mag.copy()
        state.bus_ang = sol.v_ang.copy()
        state.rho = np.where(state.line_status, sol.rho, 0.0)
        state.grid_loss = sol.grid_loss
        state.slack_p = sol.slack_p

    def audit(self, action, state=None):
        """Return a violation message for an illegal action, or '' if it is legal."""
        s = self.state if state is None else state
        tol = 1e-6
        ids = self.ctrl
        delta = np.asarray(action.delta_p, dtype=float)
        if delta.shape != (len(ids),):
            raise ValueError(f"action has {delta.shape} entries, expected {len(ids)}")
        if not np.all(np.isfinite(delta)):
            return "non-finite adjustment"
        start_ok, stop_ok = self.switch_masks(s)
        for name, idx, mask in (("startup", action.startup_id, start_ok), ("shutdown", action.shutdown_id, stop_ok)):
            if idx is not None and (idx < 0 or idx >= len(ids) or not mask[idx]):
                return f"{name} of unit {idx} not permitted"
        if action.startup_id is not None and action.startup_id == action.shutdown_id:
            return "same unit started and shut down"
        switched = {action.startup_id, action.shutdown_id} - {None}
        low, high = self.action_space(s)
        p_next = s.gen_p[ids] + delta
        for k, g in enumerate(ids):
            if k in switched:
                continue
            if not s.gen_status[g]:
                if abs(delta[k]) > tol:
                    return f"adjustment of offline unit {g}"
                continue
            if self._is_thermal[g] and abs(delta[k]) > self._ramp[g] + tol:
                return f"ramp limit exceeded on unit {g}"
            if p_next[k] > self._p_max[g] + tol or p_next[k] < self._p_min[g] - tol:
                return f"unit {g} outside [p_min, p_max]"
            if self._is_ren[g] and p_next[k] > s.gen_p[g] + high[k] + tol:
                return f"renewable unit {g} above its maximum generation capability"
        return ""

    def step(self, action):
        """Apply `action` and advance one step. Returns a `StepResult`."""
        s = self.state
        if s is None:
            raise EnvError("call reset() first")
        if s.done:
            raise EnvError("episode already finished")
        case, cfg = self.case, self.config
        ids = self.ctrl
        prev_status = s.gen_status.copy()
        info = {"reason": "", "illegal": "", "infeasible": bool(getattr(action, "infeasible", False))}

        # (1) legality audit
        msg = self.audit(action, s)
        if msg:
            info["illegal"] = msg
            return self._terminate(s, "illegal action", info)

        # (2) setpoints and switching bookkeeping
        s.steps_to_recover = np.maximum(s.steps_to_recover - 1, 0)
        s.steps_to_close = np.maximum(s.steps_to_close - 1, 0)
        gen_p = s.gen_p.copy()
        gen_p[ids] = gen_p[ids] + np.asarray(action.delta_p, dtype=float)
        th = case.thermal_ids
        gen_p[th] = np.where(s.gen_status[th], np.clip(gen_p[th], self._p_min[th], self._p_max[th]), 0.0)
        if action.startup_id is not None:
            g = ids[action.startup_id]
            s.gen_status[g] = True
            gen_p[g] = self._p_min[g]
            s.steps_to_close[g] = cfg.cooldown_steps
        if action.shutdown_id is not None:
            g = ids[action.shutdown_id]
            s.gen_status[g] = False
            gen_p[g] = 0.0
            s.steps_to_recover[g] = cfg.cooldown_steps

        # advance time; renewables cannot exceed what is actually available
        s.step += 1
        k = self._series_index(s)
        s.load_p = self.series.load_p[:, k].copy()
        s.load_q = self.series.load_q[:, k].copy()
        s.renewable_p_max = self.series.renewable_p_max[:, k].copy()
        ren = case.renewable_ids
        curtail_cap = np.minimum(gen_p[ren], s.renewable_p_max)
        gen_p[ren] = np.clip(curtail_cap, 0.0, None)

        # (3) power flow
        sol = self._solve(s, gen_p, s.gen_status, s.line_status, s.load_p, s.load_q)
        if not sol.converged:
            s.gen_p = gen_p
            return self._terminate(s, "divergence", info, advance=False)
        self._absorb_solution(s, sol)

        info.update(self._violations(sol, s))

        # (4) line overflow automaton
        info["tripped_lines"] = self._update_lines(s, sol.rho)

        # (5) balanced generator band
        hi = self.p_bal_max + (cfg.balance_hard_upper - 1.0) * abs(self.p_bal_max)
        lo = self.p_bal_min - (1.0 - cfg.balance_hard_lower) * abs(self.p_bal_min)
        slack = sol.slack_p

        # (6) reward
        total, comps = compute_reward(case, cfg, sol, s.gen_status, prev_status, s.renewable_p_max)
        info["components"] = comps
        info["curtailment"] = float(np.sum(s.renewable_p_max - sol.gen_p[ren]))
        info["operating_cost"] = operating_cost(case, sol.gen_p, s.gen_status, prev_status)
        info["renewable_p"] = float(np.sum(sol.gen_p[ren]))
        info["renewable_p_max"] = float(np.sum(s.renewable_p_max))
        info["slack_p"] = slack
        info["grid_loss"] = sol.grid_loss

        s.next_load_p, s.next_renewable_p_max = self._forecast(s)
        if slack > hi or slack < lo:
            return self._terminate(s, "balance", info, advance=False)

        # (7) horizon
        done = s.step >= cfg.episode_len
        if done:
            s.done = True
            s.reason = "horizon"
            info["reason"] = "horizon"
        return StepResult(self.observation(s), total, done, info)

    def _violations(self, sol, s):
        case = self.case
        on = s.gen_status
        q = sol.gen_q
        q_bad = on & ((q > case.gen_array("q_max") + 1e-9) | (q < case.gen_array("q_min") - 1e-9))
        v = sol.v_mag
        v_bad = (v > case.bus_array("v_max") + 1e-9) | (v < case.bus_array("v_min") - 1e-9)
        live = s.line_status
        soft = live & (sol.rho > self.config.soft_overflow_limit) & (sol.rho <= self.config.hard_overflow_limit)
        hard = live & (sol.rho > self.config.hard_overflow_limit)
        balance = sol.slack_p > self.p_bal_max or sol.slack_p < self.p_bal_min
        return {
            "voltage_violation": bool(v_bad.any()),
            "reactive_violation": bool(q_bad.any()),
            "balance_violation": bool(balance),
            "soft_overflow": bool(soft.any()),
            "hard_overflow": bool(hard.any()),
        }

    def _update_lines(self, s, rho):
        """Advance outage timers and the overflow counters; return indices tripped this step."""
        cfg = self.config
        tripped = []
        for ln in range(self.case.n_line):
            if not s.line_status[ln]:
                s.outage_timer[ln] -= 1
                if s.outage_timer[ln] <= 0:
                    s.outage_timer[ln] = 0
                    s.line_status[ln] = True
                continue
            r = rho[ln]
            if r > cfg.hard_overflow_limit:
                trip = True
            elif r > cfg.soft_overflow_limit:
                s.soft_overflow_counter[ln] += 1
                trip = s.soft_overflow_counter[ln] >= cfg.soft_overflow_patience
            else:
                s.soft_overflow_counter[ln] = 0
                trip = False
            if trip:
                s.line_status[ln] = False
                s.outage_timer[ln] = cfg.outage_steps
                s.soft_overflow_counter[ln] = 0
                tripped.append(ln)
        return tripped

    def _terminate(self, s, reason, info, advance=True):
        if advance:
            s.step += 1
        s.done = True
        s.reason = reason
        info["reason"] = reason
        info.setdefault("components", {k: 0.0 for k in REWARD_NAMES})
        return StepResult(self.observation(s), self.config.terminal_reward, True, info)


def legal_no_op(env):
    return LegalAction(np.zeros(env.n_actions))
