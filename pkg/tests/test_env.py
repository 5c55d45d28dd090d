import math

import numpy as np
import pytest

from gridlab.env.config import EnvConfig
from gridlab.env.env import EnvError, GridSimEnv, legal_no_op, observation_layout, observation_size
from gridlab.env.profiles import load_series, make_profiles, save_series, solar_shape
from gridlab.env.reward import (
    balance_reward, compute_reward, cost_reward, overflow_reward, reactive_reward, renewable_reward, voltage_reward,
)
from gridlab.baselines.evaluate import RandomSafeAgent
from gridlab.safety import LegalAction

from conftest import flat_series, modified_case


# ------------------------------------------------------------------ reward
def test_overflow_reward_example():
    assert overflow_reward([0.5, 1.5]) == pytest.approx(0.25, rel=1e-12)


def test_renewable_reward_example():
    assert renewable_reward([10.0, 20.0], [20.0, 20.0]) == pytest.approx(0.75, rel=1e-12)


def test_balance_reward_example_and_clip(six_bus):
    assert balance_reward(110.0, 100.0, 50.0) == pytest.approx(-0.2, rel=1e-12)
    assert max(balance_reward(110.0, 100.0, 50.0), -EnvConfig().penalty_clip) == -0.1


def test_cost_reward_example():
    r = cost_reward(np.array([50.0]), 0.01, 1.0, 10.0, np.array([True]), np.array([False]), 0.0, 1e5)
    assert r == pytest.approx(-8.5e-4, rel=1e-12)


def test_cost_reward_switching_cost():
    r = cost_reward(np.array([0.0]), 0.01, 1.0, 10.0, np.array([False]), np.array([True]), 2000.0, 1e5)
    assert r == pytest.approx(-0.02, rel=1e-12)


def test_reactive_reward_inside_bounds_is_zero():
    assert reactive_reward([10.0, -5.0], np.array([20.0, 20.0]), np.array([-20.0, -20.0])) == 0.0


def test_voltage_reward_example():
    v = np.array([1.0, 1.06])
    r = voltage_reward(v, np.full(2, 1.05), np.full(2, 0.95))
    assert r == pytest.approx(math.exp(-0.1) - 1.0, rel=1e-12)
    assert r == pytest.approx(-0.09516, abs=1e-5)


def test_penalty_components_floored(env):
    env.reset(0, 0)
    sol = env._solve(env.state, env.state.gen_p, env.state.gen_status, env.state.line_status,
                     env.state.load_p, env.state.load_q)
    sol.slack_p = 500.0
    sol.v_mag = sol.v_mag + 0.3
    total, comps = compute_reward(env.case, env.config, sol, env.state.gen_status, env.state.gen_status,
                                  env.state.renewable_p_max)
    assert comps["balance"] == -0.1 and comps["voltage"] == -0.1
    w = env.config.reward_weights
    assert total == pytest.approx(sum(wi * comps[k] for wi, k in zip(w, comps)), rel=1e-12)


# ------------------------------------------------------------------ reset / observation
def test_reset_deterministic(env):
    a = env.reset(5, 7)
    b = env.reset(5, 7)
    assert np.array_equal(a, b)


def test_observation_dimension(six_bus, env):
    obs = env.reset(0, 0)
    n_gen, n_load, n_line, n_ren = 4, 3, 7, 2
    expected = 3 * n_gen + 3 * n_load + 2 * n_line + 3 * n_gen + 2 * n_ren + n_load + 1 + 2
    assert len(obs) == expected == observation_size(six_bus) == 57
    assert sum(k for _, k in observation_layout(six_bus)) == expected
    assert np.all(np.isfinite(obs))


def test_reset_initial_dispatch(env, six_bus):
    env.reset(100, 0)
    s = env.state
    assert s.gen_p[1] == pytest.approx(82.5)
    assert np.allclose(s.gen_p[six_bus.renewable_ids], env.series.renewable_p_max[:, 100])
    assert s.gen_status.all() and not s.steps_to_recover.any() and not s.steps_to_close.any()


def test_start_beyond_series_rejected(env):
    with pytest.raises(EnvError):
        env.reset(len(env.series) - 10, 0)


def test_step_before_reset_rejected(six_bus, six_bus_series):
    with pytest.raises(EnvError):
        GridSimEnv(six_bus, six_bus_series).step(LegalAction(np.zeros(3)))


def test_series_shape_checked(six_bus):
    short = flat_series(six_bus, steps=10)
    with pytest.raises(ValueError):
        GridSimEnv(six_bus, short)


# ------------------------------------------------------------------ action space
@pytest.fixture
def ramp_env():
    case = modified_case(gens={1: {"p_max": 100.0, "p_min": 30.0, "ramp_rate": 0.05}})
    env = GridSimEnv(case, flat_series(case))
    env.reset(0, 0)
    return env


def test_action_space_thermal_interior(ramp_env):
    ramp_env.state.gen_p[1] = 50.0
    low, high = ramp_env.action_space()
    assert (low[0], high[0]) == pytest.approx((-5.0, 5.0))


def test_action_space_thermal_near_min(ramp_env):
    ramp_env.state.gen_p[1] = 31.0
    low, high = ramp_env.action_space()
    assert (low[0], high[0]) == pytest.approx((-1.0, 5.0))


def test_action_space_forced_curtailment(ramp_env):
    ramp_env.state.gen_p[2] = 20.0
    ramp_env.state.next_renewable_p_max[0] = 15.0
    low, high = ramp_env.action_space()
    assert (low[1], high[1]) == pytest.approx((-20.0, -5.0))


def test_action_space_offline_unit_fixed(ramp_env):
    ramp_env.state.gen_status[1] = False
    ramp_env.state.gen_p[1] = 0.0
    low, high = ramp_env.action_space()
    assert low[0] == high[0] == 0.0


# ------------------------------------------------------------------ step
def test_zero_adjustment_fixed_point(six_bus):
    env = GridSimEnv(six_bus, flat_series(six_bus))
    env.reset(0, 0)
    assert env.p_bal_min < env.state.slack_p < env.p_bal_max
    res = env.step(legal_no_op(env))
    assert not res.done
    assert res.info["components"]["balance"] == 0.0


def test_renewable_above_ceiling_is_illegal(env):
    env.reset(100, 0)
    low, high = env.action_space()
    delta = np.zeros(3)
    delta[1] = high[1] + 1.0
    res = env.step(LegalAction(delta))
    assert res.done and res.info["reason"] == "illegal action"
    assert res.reward == -10.0


def test_ramp_violation_is_illegal(env):
    env.reset(0, 0)
    res = env.step(LegalAction(np.array([20.0, 0.0, 0.0])))
    assert res.done and res.info["reason"] == "illegal action" and "ramp" in res.info["illegal"]


def test_shutdown_requires_minimum_output(env):
    env.reset(0, 0)
    res = env.step(LegalAction(np.zeros(3), shutdown_id=0))
    assert res.done and "shutdown" in res.info["illegal"]


def test_shutdown_and_restart_cooldowns(six_bus):
    env = GridSimEnv(six_bus, flat_series(six_bus, steps=400))
    env.reset(0, 0)
    s = env.state
    s.gen_p[1] = six_bus.generators[1].p_min
    res = env.step(LegalAction(np.zeros(3), shutdown_id=0))
    assert s.gen_p[1] == 0.0 and not s.gen_status[1] and s.steps_to_recover[1] == 40
    start_mask, _ = env.switch_masks()
    assert not start_mask[0]
    for k in range(40):
        assert env.state.steps_to_recover[1] == 40 - k and not env.switch_masks()[0][0]
        res = env.step(env.legalize(LegalAction(np.zeros(3))))
        assert not res.done
    assert env.state.steps_to_recover[1] == 0 and env.switch_masks()[0][0]
    env.step(LegalAction(np.zeros(3), startup_id=0))
    assert s.gen_status[1] and s.gen_p[1] == pytest.approx(six_bus.generators[1].p_min, abs=1e-6)
    assert s.steps_to_close[1] == 40


def test_soft_overflow_trips_after_four_steps(env):
    env.reset(0, 0)
    s = env.state
    rho = np.full(env.case.n_line, 0.5)
    rho[2] = 1.2
    for k in range(3):
        assert env._update_lines(s, rho) == []
        assert s.soft_overflow_counter[2] == k + 1
    assert env._update_lines(s, rho) == [2]
    assert not s.line_status[2] and s.outage_timer[2] == 16


def test_soft_counter_resets(env):
    env.reset(0, 0)
    s = env.state
    hot, cool = np.full(7, 0.5), np.full(7, 0.5)
    hot[0] = 1.2
    for _ in range(3):
        env._update_lines(s, hot)
    env._update_lines(s, cool)
    assert s.soft_overflow_counter[0] == 0


def test_hard_overflow_trips_at_once_and_reconnects(env):
    env.reset(0, 0)
    s = env.state
    rho = np.full(7, 0.5)
    rho[4] = 1.4
    assert env._update_lines(s, rho) == [4]
    for k in range(15):
        env._update_lines(s, np.full(7, 0.5))
        assert not s.line_status[4]
    env._update_lines(s, np.full(7, 0.5))
    assert s.line_status[4] and s.outage_timer[4] == 0


def test_balance_band_termination(six_bus):
    # load far beyond what the fleet plus slack can supply
    env = GridSimEnv(six_bus, flat_series(six_bus, load_scale=1.6, ren_frac=0.1))
    env.reset(0, 0)
    res = env.step(legal_no_op(env))
    assert res.done and res.info["reason"] == "balance" and res.reward == -10.0


def test_episode_runs_to_horizon(six_bus):
    cfg = EnvConfig(episode_len=12)
    env = GridSimEnv(six_bus, flat_series(six_bus), cfg)
    env.reset(0, 0)
    for t in range(12):
        res = env.step(env.legalize(legal_no_op(env)))
    assert res.done and res.info["reason"] == "horizon"
    with pytest.raises(EnvError):
        env.step(legal_no_op(env))


# ------------------------------------------------------------------ forecasts
def test_zero_noise_forecast_exact(env):
    env.reset(10, 0)
    load, ren = env.forecast()
    assert np.array_equal(load, env.series.load_p[:, 11])
    assert np.array_equal(ren, env.series.renewable_p_max[:, 11])


def test_noisy_forecast_reproducible(six_bus, six_bus_series):
    cfg = EnvConfig(forecast_noise_std=0.03)
    a = GridSimEnv(six_bus, six_bus_series, cfg)
    b = GridSimEnv(six_bus, six_bus_series, cfg)
    a.reset(10, 3)
    b.reset(10, 3)
    assert np.array_equal(a.forecast()[0], b.forecast()[0])
    assert not np.array_equal(a.forecast()[0], six_bus_series.load_p[:, 11])


def test_forecast_end_of_series_guard(six_bus):
    cfg = EnvConfig(episode_len=20)
    series = make_profiles(six_bus, seed=2).window(0, 21)
    env = GridSimEnv(six_bus, series, cfg)
    env.reset(0, 0)
    for _ in range(19):
        env.step(env.legalize(legal_no_op(env)))
    assert env.state.step == 19
    assert np.array_equal(env.forecast()[0], series.load_p[:, 20])
    env.step(env.legalize(legal_no_op(env)))
    assert np.array_equal(env.forecast()[0], series.load_p[:, 20])


# ------------------------------------------------------------------ profiles
def test_profiles_deterministic(six_bus):
    a = make_profiles(six_bus, seed=4, days=2)
    b = make_profiles(six_bus, seed=4, days=2)
    assert np.array_equal(a.load_p, b.load_p) and np.array_equal(a.renewable_p_max, b.renewable_p_max)
    assert len(a) == 2 * 288 + 1


def test_solar_zero_at_midnight(six_bus):
    series = make_profiles(six_bus, seed=0, days=3)
    solar = [j for j, g in enumerate(six_bus.renewable_ids) if six_bus.generators[g].source == "solar"][0]
    assert np.all(series.renewable_p_max[solar, ::288] == 0.0)
    assert solar_shape(np.array([0.0, 3.0, 23.5])).max() == 0.0


def test_renewable_share_reaches_sixty_percent(six_bus):
    series = make_profiles(six_bus, seed=0, days=1)
    peak = series.load_p.sum(axis=0).max()
    assert series.renewable_p_max.sum(axis=0).max() >= 0.6 * peak


def test_series_csv_round_trip(tmp_path, six_bus):
    series = make_profiles(six_bus, seed=1, days=1)
    path = tmp_path / "s.csv"
    save_series(series, path)
    header = path.read_text().splitlines()[0]
    assert header == "step,load0_p,load0_q,load1_p,load1_q,load2_p,load2_q,ren0_pmax,ren1_pmax"
    again = load_series(path)
    assert np.array_equal(again.load_p, series.load_p) and np.array_equal(again.renewable_p_max,
                                                                          series.renewable_p_max)


def test_series_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="absent.csv"):
        load_series(tmp_path / "absent.csv")


# ------------------------------------------------------------------ invariants
def _random_episode(env, start, seed, steps=288):
    agent = RandomSafeAgent(seed)
    env.reset(start, seed)
    agent.reset(env, seed)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(steps):
        action = agent.act(env)
        masks = env.switch_masks()
        # sprinkle in legal switching so the cooldown rules get exercised
        if rng.random() < 0.05 and masks[1][:3].any():
            k = int(np.flatnonzero(masks[1][:3])[0])
            action = LegalAction(np.where(np.arange(3) == k, 0.0, action.delta_p), shutdown_id=k)
        elif rng.random() < 0.05 and masks[0][:3].any():
            k = int(np.flatnonzero(masks[0][:3])[0])
            action = LegalAction(np.where(np.arange(3) == k, 0.0, action.delta_p), startup_id=k)
        res = env.step(action)
        out.append(res)
        s = env.state
        yield s, res
        if res.done:
            break


def test_state_invariants_over_random_episodes(env):
    for seed in range(3):
        for s, res in _random_episode(env, 288 * (seed % 2), seed):
            assert not np.any((s.steps_to_recover > 0) & (s.steps_to_close > 0))
            assert np.all(s.steps_to_recover >= 0) and np.all(s.steps_to_close >= 0)
            assert np.all(s.gen_p[~s.gen_status] == 0.0)
            assert np.all(s.soft_overflow_counter[s.line_status] < env.config.soft_overflow_patience)
            if res.done and res.info["reason"] not in ("horizon", "balance"):
                continue
            comps = res.info["components"]
            assert 0.0 <= comps["overflow"] <= 1.0 and 0.0 <= comps["renewable"] <= 1.0 + 1e-12
            for k in ("balance", "cost", "reactive", "voltage"):
                assert -0.1 <= comps[k] <= 0.0
            assert res.info["curtailment"] >= -1e-9
            assert (abs(res.info["curtailment"]) < 1e-9) == (abs(comps["renewable"] - 1.0) < 1e-12)


def test_episode_determinism(six_bus, six_bus_series):
    def trace(seed):
        env = GridSimEnv(six_bus, six_bus_series, EnvConfig(forecast_noise_std=0.02))
        return [(r.reward, r.observation.tobytes()) for _, r in _random_episode(env, 0, seed, steps=60)]

    assert trace(5) == trace(5)
    assert trace(5) != trace(6)
