"""Synthetic load and renewable profiles at 5-minute resolution, plus CSV I/O."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

POWER_FACTOR = 0.98
STEPS_PER_DAY = 288


@dataclass
class TimeSeries:
    load_p: np.ndarray  # (n_load, T) MW
    load_q: np.ndarray  # (n_load, T) MVAr
    renewable_p_max: np.ndarray  # (n_renew, T) MW

    def __post_init__(self):
        self.load_p = np.atleast_2d(np.asarray(self.load_p, dtype=float))
        self.load_q = np.atleast_2d(np.asarray(self.load_q, dtype=float))
        self.renewable_p_max = np.asarray(self.renewable_p_max, dtype=float)
        if self.renewable_p_max.ndim == 1:
            self.renewable_p_max = self.renewable_p_max[None, :]
        lengths = {self.load_p.shape[1], self.load_q.shape[1]}
        if self.renewable_p_max.size:
            lengths.add(self.renewable_p_max.shape[1])
        if len(lengths) != 1:
            raise ValueError("all series must share one length")

    def __len__(self):
        return self.load_p.shape[1]

    def check(self, case, episode_len):
        """Raise ValueError unless the series fits `case` and holds one episode."""
        problems = []
        if self.load_p.shape[0] != case.n_load:
            problems.append(f"expected {case.n_load} load rows, got {self.load_p.shape[0]}")
        n_ren = len(case.renewable_ids)
        if self.renewable_p_max.shape[0] != n_ren:
            problems.append(f"expected {n_ren} renewable rows, got {self.renewable_p_max.shape[0]}")
        if len(self) < episode_len + 1:
            problems.append(f"series length {len(self)} shorter than episode_len + 1")
        if n_ren and self.renewable_p_max.shape[0] == n_ren:
            cap = case.gen_array("p_max")[case.renewable_ids][:, None]
            if np.any(self.renewable_p_max < 0) or np.any(self.renewable_p_max > cap + 1e-9):
                problems.append("renewable ceilings must lie within [0, p_max]")
        if problems:
            raise ValueError("; ".join(problems))

    def window(self, start, length):
        sl = slice(start, start + length)
        return TimeSeries(self.load_p[:, sl], self.load_q[:, sl], self.renewable_p_max[:, sl])


def _ar1(rng, n, phi, sigma):
    out = np.empty(n)
    x = 0.0
    scale = sigma / math.sqrt(1 - phi * phi)
    x = rng.normal(0, scale)
    for t in range(n):
        out[t] = x
        x = phi * x + rng.normal(0, sigma)
    return out


def _raw_load_shape(hours):
    morning = 0.30 * np.exp(-0.5 * ((hours - 10.5) / 2.2) ** 2)
    evening = 0.40 * np.exp(-0.5 * ((hours - 19.5) / 1.8) ** 2)
    evening += 0.40 * np.exp(-0.5 * ((hours + 4.5) / 1.8) ** 2)  # tail of the previous evening
    return 0.60 + morning + evening


_LOAD_PEAK = float(np.max(_raw_load_shape(np.linspace(0, 24, 2881))))


def load_shape(hours):
    """Double-peaked diurnal curve scaled to a maximum of 1."""
    return _raw_load_shape(hours) / _LOAD_PEAK


def solar_shape(hours, sunrise=6.0, sunset=18.5):
    phase = (hours - sunrise) / (sunset - sunrise)
    out = np.where((phase > 0) & (phase < 1), np.sin(np.pi * np.clip(phase, 0, 1)), 0.0)
    return out ** 1.3


def make_profiles(case, seed=0, days=1, steps_per_day=STEPS_PER_DAY):
    """Deterministic synthetic series covering `days` days plus one trailing step."""
    if days < 1:
        raise ValueError("days must be at least 1")
    rng = np.random.default_rng(seed)
    T = days * steps_per_day + 1
    t = np.arange(T)
    hours = (t % steps_per_day) * 24.0 / steps_per_day
    day = t // steps_per_day

    shape = load_shape(hours)
    day_scale = 1.0 + 0.04 * rng.standard_normal(days + 1)
    common = _ar1(rng, T, 0.985, 0.004)
    tan_phi = math.tan(math.acos(POWER_FACTOR))
    load_p = np.empty((case.n_load, T))
    for i, ld in enumerate(case.loads):
        own = _ar1(rng, T, 0.97, 0.004)
        load_p[i] = ld.base_p * shape * day_scale[day] * (1.0 + common + own)
    load_p = np.maximum(load_p, 0.0)
    load_q = load_p * tan_phi

    ren_ids = case.renewable_ids
    ren = np.zeros((len(ren_ids), T))
    for j, g_id in enumerate(ren_ids):
        gen = case.generators[g_id]
        source = gen.source or ("solar" if j % 2 == 0 else "wind")
        if source == "solar":
            clearness = np.clip(0.88 + 0.08 * rng.standard_normal(days + 1), 0.6, 1.0)
            cloud = np.clip(1.0 + _ar1(rng, T, 0.95, 0.02), 0.6, 1.05)
            ren[j] = gen.p_max * solar_shape(hours) * clearness[day] * cloud
        else:
            level = np.empty(T)
            x = 0.45 + 0.1 * rng.standard_normal()
            for k in range(T):
                level[k] = x
                x += 0.01 * (0.45 - x) + 0.025 * rng.standard_normal()
            # light smoothing keeps 5-minute changes plausible
            kernel = np.ones(6) / 6.0
            level = np.convolve(np.pad(level, (5, 0), mode="edge"), kernel, mode="valid")
            ren[j] = gen.p_max * np.clip(level, 0.02, 1.0)
        ren[j] = np.clip(ren[j], 0.0, gen.p_max)
    return TimeSeries(load_p, load_q, ren)


def series_header(n_load, n_renew):
    cols = ["step"]
    for i in range(n_load):
        cols += [f"load{i}_p", f"load{i}_q"]
    cols += [f"ren{j}_pmax" for j in range(n_renew)]
    return cols


def save_series(series, path):
    n_load = series.load_p.shape[0]
    n_ren = series.renewable_p_max.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(series_header(n_load, n_ren))
        for k in range(len(series)):
            row = [k]
            for i in range(n_load):
                row += [repr(float(series.load_p[i, k])), repr(float(series.load_q[i, k]))]
            row += [repr(float(series.renewable_p_max[j, k])) for j in range(n_ren)]
            w.writerow(row)


def load_series(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"series file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    n_load = sum(1 for c in header if c.startswith("load") and c.endswith("_p"))
    n_ren = sum(1 for c in header if c.startswith("ren"))
    expected = series_header(n_load, n_ren)
    if header != expected:
        raise ValueError(f"{path}: header {header} does not match expected layout {expected}")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]])
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValueError(f"{path}: ragged rows")
    load_p = data[:, 1:1 + 2 * n_load:2].T
    load_q = data[:, 2:2 + 2 * n_load:2].T
    ren = data[:, 1 + 2 * n_load:].T
    return TimeSeries(load_p, load_q, ren)
