"""Benchmark policies: local-only (LCO), equal offloading time (EqOT) and myopic edge (MyopicEdge)."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .leese import (DEFAULT_BCD, DEFAULT_BISECTION, BcdConfig, apply_energy_guard, charging_power, edge_cpu,
                    golden_section_max, per_wd_execution, sensing, solve_execution)
from .model import Action, ChannelState, SystemParams, SystemState, WdParams, capacity_of

GOLDEN_TOL = 1e-9


def _fixed_tau_execution(state: SystemState, channel: ChannelState, params: SystemParams,
                         wds: Sequence[WdParams], tau: float) -> tuple[np.ndarray, np.ndarray]:
    bt = np.minimum(state.perturbed_battery(wds), 0.0).tolist()
    gamma = channel.offload_snr_per_watt.tolist()
    qi = state.wd_queue_bits.tolist()
    f, p = [], []
    for i, wd in enumerate(wds):
        fi, pi = per_wd_execution(qi[i], state.hap_queue_bits, bt[i], gamma[i], tau, params, wd, DEFAULT_BISECTION)
        f.append(fi)
        p.append(pi)
    return np.array(f), np.array(p)


def lco_decide(state: SystemState, channel: ChannelState, params: SystemParams, wds: Sequence[WdParams]) -> Action:
    """Everything computed locally; HAP and sensing blocks as in LEESE."""
    k = len(wds)
    f, _ = _fixed_tau_execution(state, channel, params, wds, 0.0)
    action = Action(charging_power(state, channel, params, wds), edge_cpu(state, params), sensing(state, params, wds),
                    np.zeros(k), f, np.zeros(k))
    return apply_energy_guard(action, state, params)


def eqot_decide(state: SystemState, channel: ChannelState, params: SystemParams, wds: Sequence[WdParams]) -> Action:
    """Every device gets T/K of offloading time; CPU and power solved for that share."""
    k = len(wds)
    tau = params.slot_duration_s / k
    f, p = _fixed_tau_execution(state, channel, params, wds, tau)
    action = Action(charging_power(state, channel, params, wds), edge_cpu(state, params), sensing(state, params, wds),
                    p, f, np.full(k, tau))
    return apply_energy_guard(action, state, params)


def myopic_hap_control(state: SystemState, channel: ChannelState, params: SystemParams, wds: Sequence[WdParams],
                       budget_j: float) -> tuple[float, float]:
    """(p0, f0) maximising edge throughput plus weighted harvest under a hard per-slot energy budget."""
    if budget_j <= 0:
        return 0.0, 0.0
    T = params.slot_duration_s
    q0 = state.hap_queue_bits
    kappa0 = params.hap_cpu_energy_coeff
    f_cap = min(params.hap_max_cpu_hz, q0 * params.hap_cycles_per_bit / T)

    terms = []
    for wd, h, b in zip(wds, channel.wpt_gain.tolist(), state.battery.tolist()):
        weight = params.energy_scale * (capacity_of(wd) - b) * params.harvest_factor
        if weight > 0 and h > 0 and wd.eh_saturation > 0:
            terms.append((weight, h, wd))

    def cpu(p0: float) -> float:
        left = max(budget_j - p0 * T, 0.0)
        return min(f_cap, (left / (kappa0 * T)) ** (1.0 / 3.0) * (1.0 - 1e-12))

    def value(p0: float) -> float:
        harvest = sum(w * ((wd.eh_a1 * p0 * h + wd.eh_a2) / (p0 * h + wd.eh_a3) - wd.eh_a2 / wd.eh_a3)
                      for w, h, wd in terms)
        return q0 * cpu(p0) * T / params.hap_cycles_per_bit + harvest

    p_hi = min(params.hap_max_tx_power_w, budget_j / T)
    if not terms:
        # charging earns nothing; spend the budget on the CPU only
        return 0.0, cpu(0.0)
    p0 = golden_section_max(value, 0.0, p_hi, GOLDEN_TOL)
    best = max((0.0, p0, p_hi), key=lambda x: (value(x), -x))
    return best, cpu(best)


def myopic_decide(state: SystemState, channel: ChannelState, params: SystemParams, wds: Sequence[WdParams],
                  spent_history: float, cfg: BcdConfig = DEFAULT_BCD) -> Action:
    """MyopicEdge: cumulative budget t*e0th - sum(e0) enforced in every slot.

    ``spent_history`` is the HAP energy spent in all earlier slots.
    """
    budget = (state.slot + 1) * params.hap_avg_energy_budget_j - spent_history
    p0, f0 = myopic_hap_control(state, channel, params, wds, budget)
    plan = solve_execution(state, channel, params, wds, cfg)
    action = Action(p0, f0, sensing(state, params, wds), plan.tx_power_w, plan.cpu_hz, plan.offload_time_s)
    return apply_energy_guard(action, state, params)
