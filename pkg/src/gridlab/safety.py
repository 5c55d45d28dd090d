"""Action mapping and the power-balancing safety layer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RawAction:
    """A policy-space sample: squashed adjustments plus startup/shutdown one-hots."""

    a_p: np.ndarray
    a_o: np.ndarray
    a_c: np.ndarray

    @property
    def startup_index(self):
        return int(np.argmax(self.a_o))

    @property
    def shutdown_index(self):
        return int(np.argmax(self.a_c))


@dataclass
class LegalAction:
    """Physical adjustment in MW per controllable generator.

    Units named by `startup_id`/`shutdown_id` (indices into the controllable
    list) carry ``delta_p == 0``; the environment forces them to ``p_min`` or 0.
    """

    delta_p: np.ndarray
    startup_id: int | None = None
    shutdown_id: int | None = None
    infeasible: bool = field(default=False, compare=False)

    def copy(self):
        return LegalAction(self.delta_p.copy(), self.startup_id, self.shutdown_id, self.infeasible)


def no_op_action(n):
    return LegalAction(np.zeros(n))


def one_hot(index, size):
    v = np.zeros(size)
    v[index] = 1.0
    return v


def map_action(raw, low, high, startup_mask=None, shutdown_mask=None):
    """Map a raw sample onto the current adjustment bounds.

    The masks have length n + 1 (last slot is the no-op) and mark which
    units may start up or shut down this step; ineligible picks become no-ops,
    as does a unit picked for both.
    """
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    n = len(low)
    a_p = np.clip(np.asarray(raw.a_p, dtype=float), -1.0, 1.0)
    delta = (a_p + 1.0) / 2.0 * (high - low) + low
    delta = np.clip(delta, low, high)

    start = raw.startup_index
    stop = raw.shutdown_index
    start = start if start < n and (startup_mask is None or startup_mask[start]) else None
    stop = stop if stop < n and (shutdown_mask is None or shutdown_mask[stop]) else None
    if start is not None and start == stop:
        start = stop = None
    if start is not None:
        delta[start] = 0.0
    if stop is not None:
        delta[stop] = 0.0
    return LegalAction(delta, start, stop)


def switch_delta(action, p_now, p_min):
    """MW change forced by the startup/shutdown picks, over the controllable units."""
    out = np.zeros(len(action.delta_p))
    if action.startup_id is not None:
        out[action.startup_id] = p_min[action.startup_id]
    if action.shutdown_id is not None:
        out[action.shutdown_id] = -p_now[action.shutdown_id]
    return out


def balance_pull(p_bal, p_bal_max, p_bal_min, redundancy):
    """Extra generation needed to pull the balanced unit back inside its safe band."""
    if p_bal > p_bal_max - redundancy:
        return -(p_bal_max - redundancy - p_bal)
    if p_bal < p_bal_min + redundancy:
        return p_bal - p_bal_min - redundancy
    return 0.0


def _allocate(target, delta, low, high, adjustable):
    """Share `target` MW across adjustable units in proportion to their headroom."""
    if target > 0:
        room = np.where(adjustable, high - delta, 0.0)
    else:
        room = np.where(adjustable, delta - low, 0.0)
    room = np.maximum(room, 0.0)
    total = room.sum()
    if total <= 0:
        return np.zeros_like(delta)
    return target * room / total


def legalize(action, load_now, load_next, p_bal, p_bal_max, p_bal_min, low, high,
             p_now, p_min, online, redundancy, threshold=None):
    """Readjust a mapped action so total generation tracks the forecast load change.

    `load_now`/`load_next` are total MW; `low`/`high` are this step's
    adjustment bounds; `online` masks units that may be readjusted. Returns a
    new LegalAction; its `infeasible` flag is set when headroom ran out.
    """
    if threshold is None:
        threshold = redundancy / 2.0
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    delta = np.clip(np.asarray(action.delta_p, dtype=float), low, high)
    for idx in (action.startup_id, action.shutdown_id):
        if idx is not None:
            delta[idx] = 0.0
    forced = switch_delta(action, np.asarray(p_now, float), np.asarray(p_min, float))

    d_load = float(load_next) - float(load_now)
    d_bal = balance_pull(p_bal, p_bal_max, p_bal_min, redundancy)
    need = d_load - float(delta.sum() + forced.sum()) + d_bal
    out = LegalAction(delta, action.startup_id, action.shutdown_id)
    if abs(need) <= threshold:
        return out

    adjustable = np.asarray(online, dtype=bool).copy()
    for idx in (action.startup_id, action.shutdown_id):
        if idx is not None:
            adjustable[idx] = False
    adjustable &= (high - low) > 0

    step = _allocate(need, delta, low, high, adjustable)
    delta = np.clip(delta + step, low, high)
    # one re-allocation of whatever clipping removed
    residual = need - float((delta - out.delta_p).sum())
    if abs(residual) > 1e-12:
        free = adjustable & (delta > low) & (delta < high)
        delta = np.clip(delta + _allocate(residual, delta, low, high, free), low, high)
        residual = need - float((delta - out.delta_p).sum())
    out.delta_p = delta
    out.infeasible = abs(residual) > threshold
    return out
