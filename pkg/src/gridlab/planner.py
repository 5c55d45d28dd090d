"""Sampled Monte-Carlo tree search over the learned model."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model.network import encode_legal, encode_raw
from .model.policy import sample_candidates
from .safety import map_action


@dataclass
class SearchConfig:
    n_sim: int = 50
    discount: float = 0.99
    counts: tuple = (13, 2, 2)
    flatten: float = 2.0
    c_ucb: float = 1.25
    dirichlet_alpha: float = 0.3
    dirichlet_frac: float = 0.25
    root_noise: bool = True
    max_depth: int = 10

    def __post_init__(self):
        self.counts = tuple(int(c) for c in self.counts)
        if self.n_sim < 1 or sum(self.counts) < 1 or self.max_depth < 1:
            raise ValueError("n_sim, candidate counts and max_depth must be positive")


class MinMaxStats:
    """Running bounds of every Q seen in one tree, for normalization."""

    def __init__(self):
        self.lo = math.inf
        self.hi = -math.inf

    def update(self, q):
        self.lo = min(self.lo, q)
        self.hi = max(self.hi, q)

    def normalize(self, q):
        if self.hi > self.lo:
            return (q - self.lo) / (self.hi - self.lo)
        return 0.0


@dataclass(eq=False)
class SearchNode:
    prior: float
    action: np.ndarray | None = None  # encoding of the move leading here
    hidden: np.ndarray | None = None
    reward: float = 0.0  # reward predicted on the move leading here
    visit_count: int = 0
    value_sum: float = 0.0
    children: list = field(default_factory=list)
    expanded: bool = False
    pred_value: float = 0.0

    def value(self):
        return self.value_sum / self.visit_count if self.visit_count else 0.0


@dataclass
class SearchResult:
    pi: np.ndarray
    root_value: float
    selected: int
    candidates: list  # RawAction per root child
    legal: list  # LegalAction per root child (None when searched without bounds)
    encodings: np.ndarray  # (K, A) executed-action encodings
    visits: np.ndarray
    q: np.ndarray
    root: SearchNode = field(repr=False, default=None)


def _q(child, discount):
    return child.reward + discount * child.value()


def select_child(node, stats, c_ucb=1.25, discount=0.99):
    """Index of the child maximizing the normalized-Q upper confidence bound."""
    kids = node.children
    total = sum(c.visit_count for c in kids)
    sq = math.sqrt(total)
    qs = [stats.normalize(_q(c, discount)) if c.visit_count else None for c in kids]
    seen = [q for q in qs if q is not None]
    fill = sum(seen) / len(seen) if seen else 0.0
    best, best_score = 0, -math.inf
    for i, c in enumerate(kids):
        q = fill if qs[i] is None else qs[i]
        score = q + c_ucb * c.prior * sq / (1 + c.visit_count)
        if score > best_score:
            best, best_score = i, score
    return best


def _expand(node, encodings):
    K = len(encodings)
    node.children = [SearchNode(prior=1.0 / K, action=encodings[i]) for i in range(K)]
    node.expanded = True


def _evaluate(model, node, parent):
    node.hidden, node.reward = model.dynamics(parent.hidden, node.action)
    policy, value = model.predict(node.hidden)
    node.pred_value = float(value)
    return policy


def _root_encodings(raws, legal, bounds, masks, legalize):
    """Map root samples to physical actions (filling `legal`) and encode what would execute."""
    if bounds is None:
        return np.array([encode_raw(r.a_p, r.a_o, r.a_c) for r in raws])
    low, high = bounds
    start_mask, stop_mask = masks if masks is not None else (None, None)
    encs = []
    for i, raw in enumerate(raws):
        act = map_action(raw, low, high, start_mask, stop_mask)
        if legalize is not None:
            act = legalize(act)
        legal[i] = act
        encs.append(encode_legal(act, low, high))
    return np.array(encs)


def _backup(path, value, stats, discount):
    for node in reversed(path):
        node.value_sum += value
        node.visit_count += 1
        stats.update(_q(node, discount))
        value = node.reward + discount * value


def run_search(obs, model, config=None, rng=None, bounds=None, masks=None, legalize=None,
               training=True, root_encodings=None):
    """Search from `obs` and return root statistics.

    With `bounds` = (low, high) root samples are mapped to physical
    adjustments (respecting `masks`) and passed through `legalize`; the
    executed encodings then feed the model's dynamics at the root.
    `root_encodings` fixes the root candidates instead (reanalysis).
    """
    config = config or SearchConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    root = SearchNode(prior=1.0)
    root.hidden = model.represent(obs)
    policy, value = model.predict(root.hidden)
    root.pred_value = float(value)

    noise = (config.dirichlet_alpha, config.dirichlet_frac) if config.root_noise and training else None
    if root_encodings is not None:
        raws = []
        legal = [None] * len(root_encodings)
        encodings = np.asarray(root_encodings, dtype=float)
    else:
        raws = sample_candidates(policy, config.counts, config.flatten, rng, masks=masks, dirichlet=noise)
        legal = [None] * len(raws)
        encodings = _root_encodings(raws, legal, bounds, masks, legalize)
    _expand(root, encodings)
    stats = MinMaxStats()
    _backup([root], root.pred_value, stats, config.discount)

    for _ in range(config.n_sim):
        node, path, depth = root, [root], 0
        while node.expanded and depth < config.max_depth:
            parent = node
            node = node.children[select_child(node, stats, config.c_ucb, config.discount)]
            path.append(node)
            depth += 1
        if node.hidden is None:
            leaf_policy = _evaluate(model, node, parent)
            if depth < config.max_depth:
                cands = sample_candidates(leaf_policy, config.counts, config.flatten, rng)
                _expand(node, np.array([encode_raw(r.a_p, r.a_o, r.a_c) for r in cands]))
        _backup(path, node.pred_value, stats, config.discount)

    visits = np.array([c.visit_count for c in root.children], dtype=float)
    q = np.array([_q(c, config.discount) if c.visit_count else 0.0 for c in root.children])
    pi = visits / visits.sum()
    return SearchResult(
        pi=pi, root_value=root.value(), selected=int(np.argmax(visits)), candidates=raws,
        legal=legal, encodings=encodings, visits=visits, q=q, root=root,
    )


def select_action(result, temperature=1.0, mode="train", rng=None):
    """Pick a root candidate: sample from visits^(1/τ) when training, argmax otherwise."""
    visits = np.asarray(result.visits if result.visits is not None else result.pi, dtype=float)
    if mode != "train" or temperature <= 0:
        return int(np.argmax(visits))
    logits = np.log(np.maximum(visits, 1e-300)) / temperature
    p = np.exp(logits - logits.max())
    p /= p.sum()
    rng = rng if rng is not None else np.random.default_rng()
    return int(rng.choice(len(p), p=p))


def temperature_schedule(step, total_steps):
    return 1.0 if step < total_steps / 2 else 0.5


def iter_nodes(root):
    stack = [root]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(node.children)


def write_trace(result, path, step=None):
    """Append one search's root statistics (candidate, visits, Q, prior) to a CSV."""
    new = not Path(path).exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["step", "candidate", "visits", "q", "prior"])
        for i, child in enumerate(result.root.children):
            w.writerow([step if step is not None else "", i, child.visit_count,
                        repr(float(result.q[i])), repr(child.prior)])

