"""Energy, rate and queue-dynamics formulas.

All functions are pure; the array-valued ones broadcast over devices.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .model import Action, ChannelState, SlotOutcome, SystemParams, SystemState, WdParams, capacity_of

REL_TOL = 1e-9
ABS_TOL_BITS = 1e-6
ABS_TOL_ENERGY = 1e-12


class InfeasibleActionError(RuntimeError):
    """An action violates a hard per-slot constraint."""

    def __init__(self, constraint: str, detail: str, device: int | None = None, slot: int | None = None):
        self.constraint = constraint
        self.device = device
        self.slot = slot
        self.detail = detail
        where = f" (device {device})" if device is not None else ""
        at = f" at slot {slot}" if slot is not None else ""
        super().__init__(f"{constraint} violated{where}{at}: {detail}")


def energy_harvested(p0, wpt_gain, wd: WdParams, scale: float = 1.0):
    """Nonlinear harvester output; zero at zero input, saturating at (a1*a3 - a2)/a3."""
    x = np.asarray(p0, dtype=float) * wpt_gain
    out = (wd.eh_a1 * x + wd.eh_a2) / (x + wd.eh_a3) - wd.eh_a2 / wd.eh_a3
    return scale * out


def harvested_all(p0: float, channel: ChannelState, wds: Sequence[WdParams], params: SystemParams) -> np.ndarray:
    return np.array([
        float(energy_harvested(p0, h, wd, params.harvest_factor)) for h, wd in zip(channel.wpt_gain, wds)
    ])


def local_compute(fi, wd: WdParams, params: SystemParams):
    """(bits processed, energy spent) by the device CPU running at ``fi`` Hz for one slot."""
    fi = np.asarray(fi, dtype=float)
    if np.any(fi < 0) or np.any(fi > wd.max_cpu_hz * (1 + REL_TOL)):
        raise InfeasibleActionError("cpu_box", f"f={fi} outside [0, {wd.max_cpu_hz}]")
    T = params.slot_duration_s
    return fi * T / wd.cycles_per_bit, wd.cpu_energy_coeff * fi ** 3 * T


def offload(pi, tau, snr_per_watt, params: SystemParams):
    """(bits offloaded, energy spent); zero time or zero power offloads nothing."""
    pi = np.asarray(pi, dtype=float)
    tau = np.asarray(tau, dtype=float)
    bits = params.bandwidth_hz * tau * np.log2(1.0 + pi * snr_per_watt)
    return np.where(tau > 0, bits, 0.0), pi * tau


def edge_compute(f0, params: SystemParams):
    f0 = np.asarray(f0, dtype=float)
    if np.any(f0 < 0) or np.any(f0 > params.hap_max_cpu_hz * (1 + REL_TOL)):
        raise InfeasibleActionError("edge_cpu_box", f"f0={f0} outside [0, {params.hap_max_cpu_hz}]")
    T = params.slot_duration_s
    return f0 * T / params.hap_cycles_per_bit, params.hap_cpu_energy_coeff * f0 ** 3 * T


def _check_box(name: str, values: np.ndarray, upper, device_axis: bool = True) -> None:
    upper = np.asarray(upper, dtype=float)
    bad = ~((values >= 0) & (values <= upper * (1 + REL_TOL)))
    if bad.any():
        j = int(np.flatnonzero(bad)[0])
        up = float(upper if upper.ndim == 0 else upper[j])
        raise InfeasibleActionError(name, f"value {float(values[j])!r} outside [0, {up!r}]",
                                    j if device_axis else None)


def step_queues(state: SystemState, action: Action, channel: ChannelState, params: SystemParams,
                wds: Sequence[WdParams]) -> SlotOutcome:
    """Validate ``action`` against the hard per-slot constraints and advance every queue by one slot."""
    T = params.slot_duration_s
    lam_e, lam_c = params.energy_scale, params.deficit_scale
    cap = np.array([capacity_of(wd) for wd in wds])
    Qi = state.wd_queue_bits
    B = state.battery

    _check_box("hap_power_box", np.array([action.hap_tx_power_w]), params.hap_max_tx_power_w, False)
    _check_box("edge_cpu_box", np.array([action.hap_cpu_hz]), params.hap_max_cpu_hz, False)
    _check_box("sensing_box", action.sense_bits, params.max_sense_bits)
    _check_box("tx_power_box", action.wd_tx_power_w, [wd.max_tx_power_w for wd in wds])
    _check_box("cpu_box", action.wd_cpu_hz, [wd.max_cpu_hz for wd in wds])
    _check_box("time_box", action.offload_time_s, T)
    if action.offload_time_s.sum() > T * (1 + REL_TOL):
        raise InfeasibleActionError("time_budget", f"sum of offloading times {action.offload_time_s.sum()!r} > T={T}")

    T_over_phi = np.array([T / wd.cycles_per_bit for wd in wds])
    kappa = np.array([wd.cpu_energy_coeff for wd in wds])
    local_bits = action.wd_cpu_hz * T_over_phi
    local_j = kappa * action.wd_cpu_hz ** 3 * T
    offload_bits, offload_j = offload(action.wd_tx_power_w, action.offload_time_s, channel.offload_snr_per_watt, params)
    edge_bits, edge_j = (float(v) for v in edge_compute(action.hap_cpu_hz, params))

    processed = local_bits + offload_bits
    over = processed > Qi * (1 + REL_TOL) + ABS_TOL_BITS
    if over.any():
        i = int(np.flatnonzero(over)[0])
        raise InfeasibleActionError("data_causality", f"processes {processed[i]!r} bits from a queue of {Qi[i]!r}", i)
    if edge_bits > state.hap_queue_bits * (1 + REL_TOL) + ABS_TOL_BITS:
        raise InfeasibleActionError("edge_data_causality",
                                    f"edge processes {edge_bits!r} bits from a queue of {state.hap_queue_bits!r}")

    wd_energy = params.sensing_energy_per_bit_j * action.sense_bits + local_j + offload_j
    allowed = np.where(B >= params.min_battery_scaled, B, 0.0)
    short = lam_e * wd_energy > allowed * (1 + REL_TOL) + ABS_TOL_ENERGY
    if short.any():
        i = int(np.flatnonzero(short)[0])
        raise InfeasibleActionError("energy_causality",
                                    f"spends {lam_e * wd_energy[i]!r} scaled units with battery {B[i]!r}", i)

    harvested = np.array([float(energy_harvested(action.hap_tx_power_w, h, wd, params.harvest_factor))
                          for h, wd in zip(channel.wpt_gain.tolist(), wds)])
    hap_energy = action.hap_tx_power_w * T + edge_j

    next_state = SystemState(
        slot=state.slot + 1,
        hap_queue_bits=max(state.hap_queue_bits - edge_bits, 0.0) + float(offload_bits.sum()),
        deficit_queue=max(state.deficit_queue + lam_c * hap_energy - lam_c * params.hap_avg_energy_budget_j, 0.0),
        wd_queue_bits=np.maximum(Qi - processed, 0.0) + action.sense_bits,
        battery=np.clip(B - lam_e * wd_energy + lam_e * harvested, 0.0, cap),
    )
    return SlotOutcome(local_bits, offload_bits, edge_bits, harvested, wd_energy, float(hap_energy), next_state)
