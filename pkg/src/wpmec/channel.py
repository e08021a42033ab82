"""I.i.d. block-fading channel generation and trace replay.

Every (device, band) pair owns an independent Philox sub-stream derived from
``SeedSequence(seed, spawn_key=(device, band))``; adding devices therefore never
perturbs the draws of existing ones. Unit-mean exponential fading is produced
by inverse-CDF sampling of the sub-stream's uniforms.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import SPEED_OF_LIGHT, ChannelParams, ChannelState, InvalidParameterError

MIN_DISTANCE_M = 0.1
GAIN_FLOOR = 1e-30
WPT_BAND, COMMS_BAND = 0, 1
_BLOCK = 4096

TRACE_COLUMNS = ("slot", "device", "wpt_gain", "offload_gain")


def mean_gain(distance_m: float, carrier_hz: float, params: ChannelParams) -> float:
    """Deterministic part of the channel gain, G_A * (c / (4 pi f d)) ** sigma."""
    if distance_m < MIN_DISTANCE_M:
        raise InvalidParameterError(f"distance {distance_m} m is inside the far-field limit of {MIN_DISTANCE_M} m")
    return params.antenna_gain * (SPEED_OF_LIGHT / (4.0 * math.pi * carrier_hz * distance_m)) ** params.pathloss_exponent


class _SubStream:
    __slots__ = ("gen", "buf", "pos")

    def __init__(self, seed: int, device: int, band: int):
        ss = np.random.SeedSequence(seed, spawn_key=(device, band))
        self.gen = np.random.Generator(np.random.Philox(ss))
        self.buf = np.empty(0)
        self.pos = 0

    def uniforms(self, n: int) -> np.ndarray:
        if self.pos + n > self.buf.size:
            self.buf = np.concatenate([self.buf[self.pos:], self.gen.random(max(_BLOCK, n))])
            self.pos = 0
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out


class ChannelStream:
    """Seeded per-slot channel generator for a fixed device placement."""

    def __init__(self, params: ChannelParams, distances: Sequence[float], noise_power_w: float):
        self.params = params
        self.distances = tuple(float(d) for d in distances)
        self.noise_power_w = noise_power_w
        self.wpt_mean = np.array([mean_gain(d, params.wpt_carrier_hz, params) for d in self.distances])
        self.offload_mean = np.array([mean_gain(d, params.comms_carrier_hz, params) for d in self.distances])
        self._streams = [
            (_SubStream(params.rng_seed, i, WPT_BAND), _SubStream(params.rng_seed, i, COMMS_BAND))
            for i in range(len(self.distances))
        ]
        self.slot = 0
        self.floor_hits = 0

    def _fading(self, n: int) -> np.ndarray:
        """``n`` consecutive slots of fading, shape (n, K, 2)."""
        out = np.empty((n, len(self._streams), 2))
        for i, pair in enumerate(self._streams):
            for band, sub in enumerate(pair):
                out[:, i, band] = -np.log1p(-sub.uniforms(n))
        zero = out < GAIN_FLOOR
        if zero.any():
            self.floor_hits += int(zero.sum())
            out[zero] = GAIN_FLOOR
        return out

    def next_slot(self) -> ChannelState:
        fade = self._fading(1)[0]
        self.slot += 1
        return ChannelState(fade[:, WPT_BAND] * self.wpt_mean, fade[:, COMMS_BAND] * self.offload_mean,
                            self.noise_power_w)

    def take(self, n: int) -> list[ChannelState]:
        fade = self._fading(n)
        self.slot += n
        return [
            ChannelState(f[:, WPT_BAND] * self.wpt_mean, f[:, COMMS_BAND] * self.offload_mean, self.noise_power_w)
            for f in fade
        ]

    def fading_samples(self, n: int) -> np.ndarray:
        """Raw unit-mean fading draws, shape (n, K, 2); advances the stream."""
        fade = self._fading(n)
        self.slot += n
        return fade


class TraceStream:
    """Replays recorded channel states in order."""

    def __init__(self, states: Sequence[ChannelState]):
        self._states = list(states)
        self.slot = 0

    def next_slot(self) -> ChannelState:
        if self.slot >= len(self._states):
            raise IndexError(f"channel trace exhausted after {len(self._states)} slots")
        state = self._states[self.slot]
        self.slot += 1
        return state


def write_trace(path: str | Path, states: Iterable[ChannelState], header: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for t, st in enumerate(states):
            for i, (hp, hi) in enumerate(zip(st.wpt_gain, st.offload_gain)):
                writer.writerow((t, i, repr(float(hp)), repr(float(hi))))


def read_trace(path: str | Path, noise_power_w: float) -> list[ChannelState]:
    rows: dict[int, dict[int, tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in reader:
            rows.setdefault(int(row["slot"]), {})[int(row["device"])] = (float(row["wpt_gain"]), float(row["offload_gain"]))
    states = []
    for t in sorted(rows):
        per_dev = rows[t]
        gains = [per_dev[i] for i in sorted(per_dev)]
        states.append(ChannelState([g[0] for g in gains], [g[1] for g in gains], noise_power_w))
    return states
