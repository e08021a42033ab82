"""Domain types, physical constants and default parameter sets.

Units are SI throughout (bits, Joules, seconds, Hz, Watts). Two quantities are
kept in scaled units:

* battery levels and capacities are stored multiplied by ``energy_scale``
  (e.g. mJ when ``energy_scale == 1000``);
* the HAP energy-deficit queue accumulates ``deficit_scale * Joules``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

SPEED_OF_LIGHT = 3e8
DRIFT_BOUND_SAMPLES = 100_000


class InvalidParameterError(ValueError):
    """Raised when a parameter set violates a model invariant."""


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) * 1e-3


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _require_positive(obj, names: Sequence[str]) -> None:
    for name in names:
        value = getattr(obj, name)
        if not (value > 0 and math.isfinite(value)):
            raise InvalidParameterError(f"{type(obj).__name__}.{name} must be a positive finite number, got {value!r}")


@dataclass(frozen=True)
class SystemParams:
    slot_duration_s: float = 5.0
    bandwidth_hz: float = 30e3
    noise_power_w: float = 1e-10
    hap_max_tx_power_w: float = 3.0
    hap_max_cpu_hz: float = 2e9
    hap_cpu_energy_coeff: float = 1e-26
    hap_cycles_per_bit: float = 1000.0
    hap_avg_energy_budget_j: float = 8.0
    sensing_energy_per_bit_j: float = 1e-9
    max_sense_bits: float = 512e3
    lyapunov_v: float = 32e5
    energy_scale: float = 1000.0
    deficit_scale: float = 10.0
    min_battery_j: float = 1e-3
    num_devices: int = 8
    # multiply the harvested-energy expression by the slot length
    eh_times_T: bool = False

    def __post_init__(self):
        _require_positive(self, (
            "slot_duration_s", "bandwidth_hz", "noise_power_w", "hap_max_tx_power_w",
            "hap_max_cpu_hz", "hap_cpu_energy_coeff", "hap_cycles_per_bit",
            "hap_avg_energy_budget_j", "sensing_energy_per_bit_j", "max_sense_bits",
            "lyapunov_v", "deficit_scale", "min_battery_j",
        ))
        if not self.energy_scale >= 1:
            raise InvalidParameterError(f"energy_scale must be >= 1, got {self.energy_scale!r}")
        if int(self.num_devices) != self.num_devices or self.num_devices < 1:
            raise InvalidParameterError(f"num_devices must be a positive integer, got {self.num_devices!r}")

    @property
    def min_battery_scaled(self) -> float:
        """Energy-aware management threshold in battery units."""
        return self.energy_scale * self.min_battery_j

    @property
    def harvest_factor(self) -> float:
        return self.slot_duration_s if self.eh_times_T else 1.0


@dataclass(frozen=True)
class WdParams:
    weight: float = 1.0
    max_tx_power_w: float = dbm_to_watt(5.0)
    max_cpu_hz: float = 16e6
    cpu_energy_coeff: float = 1e-26
    cycles_per_bit: float = 1000.0
    distance_m: float = 2.0
    eh_a1: float = 2.463
    eh_a2: float = 1.635
    eh_a3: float = 0.826
    # scaled energy units; None means "derive from the safe threshold"
    battery_capacity: Optional[float] = None
    unsafe_capacity: bool = False

    def __post_init__(self):
        _require_positive(self, ("weight", "cycles_per_bit", "distance_m"))
        for name in ("max_tx_power_w", "max_cpu_hz", "cpu_energy_coeff"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise InvalidParameterError(f"WdParams.{name} must be a non-negative finite number, got {value!r}")
        validate_eh_triple(self.eh_a1, self.eh_a2, self.eh_a3)
        if self.battery_capacity is not None and not self.battery_capacity > 0:
            raise InvalidParameterError(f"battery_capacity must be positive, got {self.battery_capacity!r}")

    @property
    def eh_saturation(self) -> float:
        """a1*a3 - a2, the numerator of the harvester's slope."""
        return self.eh_a1 * self.eh_a3 - self.eh_a2


def validate_eh_triple(a1: float, a2: float, a3: float) -> None:
    if not a3 > 0:
        raise InvalidParameterError(f"energy-harvesting parameter a3 must be > 0, got {a3!r}")
    if a1 * a3 - a2 < 0:
        raise InvalidParameterError(f"energy-harvesting parameters need a1*a3 - a2 >= 0, got {a1 * a3 - a2!r}")


@dataclass(frozen=True)
class ChannelParams:
    wpt_carrier_hz: float = 915e6
    comms_carrier_hz: float = 2.4e9
    antenna_gain: float = 4.11
    pathloss_exponent: float = 2.4
    rng_seed: int = 0

    def __post_init__(self):
        _require_positive(self, ("wpt_carrier_hz", "comms_carrier_hz", "antenna_gain"))
        if not self.pathloss_exponent >= 2:
            raise InvalidParameterError(f"pathloss_exponent must be >= 2, got {self.pathloss_exponent!r}")


@dataclass(frozen=True)
class ChannelState:
    wpt_gain: np.ndarray
    offload_gain: np.ndarray
    noise_power_w: float

    def __post_init__(self):
        object.__setattr__(self, "wpt_gain", _frozen(self.wpt_gain))
        object.__setattr__(self, "offload_gain", _frozen(self.offload_gain))
        if (self.wpt_gain < 0).any() or (self.offload_gain < 0).any():
            raise InvalidParameterError("channel gains must be non-negative")

    @property
    def offload_snr_per_watt(self) -> np.ndarray:
        return self.offload_gain / self.noise_power_w


@dataclass(frozen=True)
class SystemState:
    slot: int
    hap_queue_bits: float
    deficit_queue: float
    wd_queue_bits: np.ndarray
    battery: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "wd_queue_bits", _frozen(self.wd_queue_bits))
        object.__setattr__(self, "battery", _frozen(self.battery))
        if self.hap_queue_bits < 0 or self.deficit_queue < 0:
            raise InvalidParameterError("queue backlogs must be non-negative")
        if (self.wd_queue_bits < 0).any() or (self.battery < 0).any():
            raise InvalidParameterError("device queues and batteries must be non-negative")

    @classmethod
    def initial(cls, wds: Sequence[WdParams]) -> "SystemState":
        """Empty queues, zero deficit and full batteries."""
        return cls(0, 0.0, 0.0, np.zeros(len(wds)), [capacity_of(wd) for wd in wds])

    def perturbed_battery(self, wds: Sequence[WdParams]) -> np.ndarray:
        return self.battery - np.array([capacity_of(wd) for wd in wds])


@dataclass(frozen=True)
class Action:
    hap_tx_power_w: float
    hap_cpu_hz: float
    sense_bits: np.ndarray
    wd_tx_power_w: np.ndarray
    wd_cpu_hz: np.ndarray
    offload_time_s: np.ndarray

    def __post_init__(self):
        for name in ("sense_bits", "wd_tx_power_w", "wd_cpu_hz", "offload_time_s"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @classmethod
    def idle(cls, k: int) -> "Action":
        z = np.zeros(k)
        return cls(0.0, 0.0, z, z, z, z)


@dataclass(frozen=True)
class SlotOutcome:
    local_bits: np.ndarray
    offload_bits: np.ndarray
    edge_bits: float
    harvested_j: np.ndarray
    wd_energy_j: np.ndarray
    hap_energy_j: float
    next_state: SystemState


@dataclass(frozen=True)
class DriftBound:
    c_constant: float
    local_max_bits: np.ndarray
    offload_max_bits: np.ndarray
    wd_energy_max_j: np.ndarray
    harvest_max_j: np.ndarray
    edge_max_bits: float
    hap_energy_max_j: float


def capacity_of(wd: WdParams) -> float:
    if wd.battery_capacity is None:
        raise InvalidParameterError("battery_capacity is unresolved; call resolve_capacities first")
    return wd.battery_capacity


def linear_distances(k: int) -> list[float]:
    if k < 1:
        raise InvalidParameterError(f"need at least one device, got k={k}")
    if k == 1:
        return [2.0]
    return [2.0 + 8.0 / (k - 1) * i for i in range(k)]


def resolve_capacities(params: SystemParams, wds: Sequence[WdParams], force: bool = False) -> list[WdParams]:
    """Fill in (or re-derive) each device's battery capacity from the safe threshold.

    Explicit capacities are kept unless ``force`` is set; a capacity below the
    threshold is rejected unless the device carries ``unsafe_capacity``.
    """
    from .leese import battery_threshold

    out = []
    for wd in wds:
        threshold = battery_threshold(params, wd)
        if wd.battery_capacity is None or (force and not wd.unsafe_capacity):
            wd = replace(wd, battery_capacity=threshold)
        elif wd.battery_capacity < threshold and not wd.unsafe_capacity:
            raise InvalidParameterError(
                f"battery_capacity {wd.battery_capacity:.6g} is below the safe threshold {threshold:.6g}; "
                "set unsafe_capacity to override"
            )
        out.append(wd)
    return out


def default_params(k: int = 8) -> tuple[SystemParams, list[WdParams], ChannelParams]:
    """Table defaults for ``k`` devices placed evenly between 2 m and 10 m."""
    if k < 1:
        raise InvalidParameterError(f"need at least one device, got k={k}")
    params = SystemParams(num_devices=k)
    wds = [WdParams(distance_m=d) for d in linear_distances(k)]
    return params, resolve_capacities(params, wds), ChannelParams()


def drift_bound(params: SystemParams, wds: Sequence[WdParams], channel_params: ChannelParams,
                samples: int = DRIFT_BOUND_SAMPLES) -> DriftBound:
    """Constant of the drift-plus-penalty upper bound and its per-term maxima.

    The expected maximum offloading volume is a Monte-Carlo average over unit
    exponential fading, seeded from ``channel_params.rng_seed``.
    """
    from .channel import mean_gain

    T, W = params.slot_duration_s, params.bandwidth_hz
    lam_e, lam_c = params.energy_scale, params.deficit_scale
    rng = np.random.default_rng(np.random.SeedSequence(channel_params.rng_seed, spawn_key=(0xD0,)))
    fading = -np.log1p(-rng.random(samples))

    local_max = np.array([wd.max_cpu_hz * T / wd.cycles_per_bit for wd in wds])
    offload_max = np.empty(len(wds))
    for i, wd in enumerate(wds):
        snr = fading * mean_gain(wd.distance_m, channel_params.comms_carrier_hz, channel_params) / params.noise_power_w
        offload_max[i] = np.mean(W * T * np.log2(1.0 + wd.max_tx_power_w * snr))
    wd_energy_max = np.array([
        params.sensing_energy_per_bit_j * params.max_sense_bits + wd.max_tx_power_w * T
        + wd.cpu_energy_coeff * wd.max_cpu_hz ** 3 * T
        for wd in wds
    ])
    harvest_max = np.full(len(wds), params.hap_max_tx_power_w * T)
    edge_max = params.hap_max_cpu_hz * T / params.hap_cycles_per_bit
    hap_energy_max = params.hap_cpu_energy_coeff * params.hap_max_cpu_hz ** 3 * T + params.hap_max_tx_power_w * T

    c = 0.5 * (
        np.sum((local_max + offload_max) ** 2 + params.max_sense_bits ** 2)
        + np.sum(offload_max) ** 2
        + edge_max ** 2
        + np.sum((lam_e * wd_energy_max) ** 2 + (lam_e * harvest_max) ** 2)
        + (lam_c * hap_energy_max) ** 2
        + (lam_c * params.hap_avg_energy_budget_j) ** 2
    )
    return DriftBound(float(c), _frozen(local_max), _frozen(offload_max), _frozen(wd_energy_max),
                      _frozen(harvest_max), float(edge_max), float(hap_energy_max))
