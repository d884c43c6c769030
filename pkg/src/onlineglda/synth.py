"""Synthetic household signals: mains voltage/current from a planted appliance
schedule, plus slow water-flow and room-temperature streams."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAINS_HZ = 50.0
V_RMS = 230.0
START_EPOCH_NS = 1495147522 * 10**9  # 2017-05-18 22:45:22 UTC

# name, fundamental rms current (A), phase lag (rad), odd-harmonic ratios (3rd, 5th, 7th)
APPLIANCES = (
    ("kettle", 9.0, 0.0, (0.0, 0.0, 0.0)),
    ("fridge", 0.8, 0.7, (0.05, 0.0, 0.0)),
    ("laptop", 0.4, 0.1, (0.6, 0.35, 0.2)),
    ("washer", 2.2, 0.45, (0.1, 0.05, 0.0)),
)

# activity patterns: per-appliance on-probability and mean water flow (L/min)
ACTIVITIES = (
    (np.array([0.0, 0.3, 0.0, 0.0]), 0.0),   # idle / night
    (np.array([0.7, 0.3, 0.2, 0.0]), 4.0),   # breakfast
    (np.array([0.0, 0.3, 0.9, 0.0]), 0.2),   # working
    (np.array([0.1, 0.3, 0.3, 0.9]), 8.0),   # laundry
)


@dataclass
class RawSimulation:
    t_ns: np.ndarray
    voltage: np.ndarray
    current: np.ndarray
    schedule: np.ndarray        # (slots, appliances) on/off
    activity: np.ndarray        # (slots,) activity index
    slot_seconds: float
    water_t_ns: np.ndarray
    water: np.ndarray
    temp_t_ns: np.ndarray
    temp: np.ndarray


def simulate_raw(seconds: float, rate: float, seed: int, slot_seconds: float = 30.0,
                 start_ns: int = START_EPOCH_NS) -> RawSimulation:
    rng = np.random.default_rng(seed)
    n_samples = int(round(seconds * rate))
    n_slots = int(np.ceil(seconds / slot_seconds))
    activity = np.empty(n_slots, dtype=int)
    a = 0
    for j in range(n_slots):
        if j == 0 or rng.random() < 0.25:
            a = int(rng.integers(len(ACTIVITIES)))
        activity[j] = a
    probs = np.array([ACTIVITIES[k][0] for k in activity])
    schedule = (rng.random(probs.shape) < probs).astype(int)

    tt = np.arange(n_samples) / rate
    slot = np.minimum((tt // slot_seconds).astype(int), n_slots - 1)
    w = 2.0 * np.pi * MAINS_HZ * tt
    voltage = V_RMS * np.sqrt(2.0) * np.cos(w) + rng.normal(0.0, 0.5, n_samples)
    current = rng.normal(0.0, 0.01, n_samples)
    # per-second load fluctuation of each appliance
    second = (tt // 1.0).astype(int)
    jitter = 1.0 + 0.05 * rng.standard_normal((second[-1] + 1, len(APPLIANCES)))
    for k, (_, irms, lag, harmonics) in enumerate(APPLIANCES):
        on = schedule[slot, k] * jitter[second, k]
        wave = np.cos(w - lag)
        for h, ratio in zip((3, 5, 7), harmonics):
            if ratio and h * MAINS_HZ < rate / 2.0:
                wave = wave + ratio * np.cos(h * (w - lag))
        current += on * irms * np.sqrt(2.0) * wave

    water_t = np.arange(0.0, seconds, 10.0)
    flow_mean = np.array([ACTIVITIES[k][1] for k in activity])
    water = np.maximum(0.0, flow_mean[np.minimum((water_t // slot_seconds).astype(int), n_slots - 1)]
                       + rng.normal(0.0, 0.3, water_t.size))
    temp_t = np.arange(0.0, seconds, 60.0)
    temp = 20.0 + 0.5 * np.sin(2.0 * np.pi * temp_t / 3600.0) + rng.normal(0.0, 0.05, temp_t.size)
    t_ns = start_ns + np.rint(np.arange(n_samples) * (1e9 / rate)).astype(np.int64)
    return RawSimulation(t_ns, voltage, current, schedule, activity, slot_seconds,
                         start_ns + (water_t * 1e9).astype(np.int64), water,
                         start_ns + (temp_t * 1e9).astype(np.int64), temp)
