import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridlab.model.network import GridZeroModel, ModelConfig, no_op_encoding
from gridlab.model.policy import PolicyOutput
from gridlab.planner import (
    MinMaxStats, SearchConfig, SearchNode, SearchResult, _backup, iter_nodes, run_search, select_action,
    select_child, temperature_schedule, write_trace,
)
from gridlab.safety import LegalAction


class StubModel:
    """Deterministic model whose outputs are simple functions of the path taken."""

    def __init__(self, n=2, shift=0.0, reward=None, value=None):
        self.n = n
        self.shift = shift
        self.reward_fn = reward or (lambda h, a: float(np.round(a[0], 6)))
        self.value_fn = value or (lambda h: float(np.sin(h).sum()))

    def represent(self, obs):
        return np.asarray(obs, float)[:3].copy()

    def dynamics(self, hidden, action):
        nxt = np.asarray(hidden, float) + np.asarray(action, float)[:3] + 1.0
        return nxt, self.reward_fn(hidden, action)

    def predict(self, hidden):
        n = self.n
        pol = PolicyOutput(np.zeros(n), np.zeros(n), np.zeros(n + 1), np.zeros(n + 1))
        return pol, self.value_fn(hidden) + self.shift


def tiny_model(seed=0):
    return GridZeroModel(ModelConfig(obs_dim=5, n_units=2, hidden=6, repr_width=12, dyn_width=12,
                                     reward_width=6, pred_width=12, proj_dim=6, seed=seed))


# ------------------------------------------------------------------ select_child
def _parent(children):
    node = SearchNode(prior=1.0)
    node.children = children
    node.expanded = True
    return node


def test_select_child_prefers_unvisited_sibling():
    a = SearchNode(prior=0.5, visit_count=1, value_sum=0.5)
    b = SearchNode(prior=0.5)
    stats = MinMaxStats()
    stats.update(0.0)
    stats.update(1.0)
    # c_ucb = 1 and discount 1 give the plain bound with Q~ = 0.5 for A
    assert select_child(_parent([a, b]), stats, c_ucb=1.0, discount=1.0) == 1


def test_select_child_hand_scores():
    a = SearchNode(prior=0.5, visit_count=1, value_sum=0.5)
    b = SearchNode(prior=0.5)
    stats = MinMaxStats()
    stats.update(0.0)
    stats.update(1.0)
    sq = math.sqrt(1)
    score_a = 0.5 + 0.5 * sq / 2
    score_b = 0.5 + 0.5 * sq / 1
    assert (score_a, score_b) == (0.75, 1.0)


def test_select_child_tie_breaks_to_lowest_index():
    kids = [SearchNode(prior=1 / 3) for _ in range(3)]
    assert select_child(_parent(kids), MinMaxStats()) == 0


def test_select_child_heavily_visited_follows_q():
    a = SearchNode(prior=0.5, visit_count=10 ** 8, value_sum=0.2 * 10 ** 8)
    b = SearchNode(prior=0.5, visit_count=10 ** 8, value_sum=0.9 * 10 ** 8)
    stats = MinMaxStats()
    for q in (0.2, 0.9):
        stats.update(q)
    assert select_child(_parent([a, b]), stats, discount=1.0) == 1


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(-50.0, 50.0))
def test_select_child_shift_invariant(seed, shift):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 6))
    visits = rng.integers(0, 5, k)
    values = rng.normal(size=k)
    rewards = rng.normal(size=k)

    def pick(c):
        kids = [SearchNode(prior=1 / k, reward=rewards[i], visit_count=int(visits[i]),
                           value_sum=(values[i] + c) * visits[i]) for i in range(k)]
        stats = MinMaxStats()
        for i in range(k):
            if visits[i]:
                stats.update(rewards[i] + 0.99 * (values[i] + c))
        return select_child(_parent(kids), stats)

    assert pick(0.0) == pick(shift)


def test_minmax_degenerate_range():
    stats = MinMaxStats()
    assert stats.normalize(3.0) == 0.0
    stats.update(2.0)
    assert stats.normalize(2.0) == 0.0


# ------------------------------------------------------------------ backup
def test_two_level_backup():
    root = SearchNode(prior=1.0)
    child = SearchNode(prior=1.0, reward=1.0)
    root.children = [child]
    stats = MinMaxStats()
    _backup([root, child], 2.0, stats, 0.99)
    assert child.value() == 2.0
    assert child.reward + 0.99 * child.value() == pytest.approx(2.98, abs=1e-12)
    assert root.value() == pytest.approx(2.98, abs=1e-12)


def test_two_level_backup_through_search():
    model = StubModel(reward=lambda h, a: 1.0, value=lambda h: 2.0 if h[0] > 0.5 else 0.0)
    cfg = SearchConfig(n_sim=1, counts=(1, 0, 0), max_depth=1)
    res = run_search(np.zeros(3), model, cfg, np.random.default_rng(0), root_encodings=[no_op_encoding(2)])
    assert res.q[0] == pytest.approx(2.98, abs=1e-12)


def _brute_force_w(node, discount):
    """Expected value sum of a node: its own evaluation once per simulation that stopped there
    (once for interior nodes, every visit at the depth bound) plus every backup through each child."""
    total = (node.visit_count - sum(c.visit_count for c in node.children)) * node.pred_value
    for c in node.children:
        if c.visit_count:
            total += c.visit_count * c.reward + discount * _brute_force_w(c, discount)
    return total


@pytest.mark.parametrize("seed,depth", [(0, 4), (1, 4), (2, 4), (0, 2), (1, 1)])
def test_backup_matches_brute_force(seed, depth):
    cfg = SearchConfig(n_sim=40, counts=(3, 0, 0), max_depth=depth)
    res = run_search(np.random.default_rng(seed).normal(size=3), StubModel(), cfg, np.random.default_rng(seed))
    for node in iter_nodes(res.root):
        if node.visit_count:
            assert node.value_sum == pytest.approx(_brute_force_w(node, cfg.discount), rel=1e-9, abs=1e-9)


# ------------------------------------------------------------------ run_search
def test_single_candidate_forced():
    cfg = SearchConfig(n_sim=10, counts=(1, 0, 0))
    res = run_search(np.zeros(5), tiny_model(), cfg, np.random.default_rng(0))
    assert list(res.pi) == [1.0] and res.selected == 0


@pytest.mark.parametrize("seed", range(4))
def test_visit_conservation(seed):
    cfg = SearchConfig(n_sim=30)
    rng = np.random.default_rng(seed)
    res = run_search(rng.normal(size=5), tiny_model(seed), cfg, rng, (-np.ones(2), np.ones(2)))
    assert res.visits.sum() == cfg.n_sim
    assert res.pi.sum() == pytest.approx(1.0)
    for node in iter_nodes(res.root):
        if node.children and node.visit_count:
            assert node.visit_count == 1 + sum(c.visit_count for c in node.children)


def test_depth_bounded():
    cfg = SearchConfig(n_sim=60, counts=(1, 0, 0), max_depth=3)
    res = run_search(np.zeros(5), tiny_model(), cfg, np.random.default_rng(0))
    depth, node = 0, res.root
    while node.children:
        node = node.children[0]
        depth += 1
    assert depth <= 3


def test_root_candidates_are_legalized():
    seen = []

    def legalize(action):
        seen.append(action)
        return LegalAction(np.clip(action.delta_p, -0.5, 0.5), action.startup_id, action.shutdown_id)

    low, high = -np.ones(2), np.ones(2)
    res = run_search(np.zeros(5), tiny_model(), SearchConfig(n_sim=5), np.random.default_rng(1), (low, high),
                     legalize=legalize)
    assert len(seen) == 17 and len(res.legal) == 17
    for act, enc in zip(res.legal, res.encodings):
        assert np.all(np.abs(act.delta_p) <= 0.5)
        assert np.all(np.abs(enc[:2]) <= 0.5 + 1e-12)


def test_search_reproducible():
    def go():
        return run_search(np.ones(5), tiny_model(), SearchConfig(n_sim=20), np.random.default_rng(3),
                          (-np.ones(2), np.ones(2)))
    a, b = go(), go()
    assert np.array_equal(a.visits, b.visits) and np.array_equal(a.encodings, b.encodings)


def test_evaluation_search_skips_root_noise():
    cfg = SearchConfig(n_sim=5)
    a = run_search(np.ones(5), tiny_model(), cfg, np.random.default_rng(3), training=False)
    b = run_search(np.ones(5), tiny_model(), SearchConfig(n_sim=5, root_noise=False), np.random.default_rng(3))
    assert np.array_equal(a.encodings, b.encodings)


# ------------------------------------------------------------------ select_action
def _result(visits):
    visits = np.asarray(visits, float)
    return SearchResult(pi=visits / visits.sum(), root_value=0.0, selected=int(np.argmax(visits)),
                        candidates=[], legal=[], encodings=np.zeros((len(visits), 1)), visits=visits, q=visits)


def test_select_action_reproducible():
    r = _result([8, 2])
    a = [select_action(r, 1.0, "train", np.random.default_rng(5)) for _ in range(3)]
    assert len(set(a)) == 1


def test_select_action_frequencies():
    r = _result([8, 2])
    rng = np.random.default_rng(0)
    picks = [select_action(r, 1.0, "train", rng) for _ in range(4000)]
    assert np.mean(picks) == pytest.approx(0.2, abs=0.02)


def test_select_action_eval_argmax_and_ties():
    assert select_action(_result([4, 6]), mode="eval") == 1
    assert select_action(_result([5, 5]), mode="eval") == 0


def test_small_temperature_approaches_argmax():
    r = _result([5, 6, 4])
    rng = np.random.default_rng(1)
    assert all(select_action(r, 0.01, "train", rng) == 1 for _ in range(200))


def test_temperature_schedule():
    assert temperature_schedule(0, 100) == 1.0 and temperature_schedule(50, 100) == 0.5


def test_write_trace(tmp_path):
    res = run_search(np.zeros(5), tiny_model(), SearchConfig(n_sim=8), np.random.default_rng(0))
    path = tmp_path / "trace.csv"
    write_trace(res, path, step=0)
    write_trace(res, path, step=1)
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == 34 and rows[0].keys() == {"step", "candidate", "visits", "q", "prior"}
    assert sum(int(r["visits"]) for r in rows if r["step"] == "0") == 8
