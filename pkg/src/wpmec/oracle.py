"""Brute-force grid verifiers for the per-slot solvers.

The oracles evaluate the per-slot objective with their own vectorised code and
only use the additive separability of that objective; they never call the
closed-form solvers. Grids contain every box endpoint, and optional candidate
points can be injected so that a solver is never beaten by discretisation alone
at its own answer. A grid of ``n`` points is a subset of the grid of ``2n - 1``
points on the same interval, so refining that way never lowers a result.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .model import (Action, ChannelParams, ChannelState, SystemParams, SystemState, WdParams, capacity_of)


class UnsupportedScaleError(ValueError):
    pass


def _harvest(p0, h, wd: WdParams, params: SystemParams):
    x = np.asarray(p0) * h
    return params.harvest_factor * ((wd.eh_a1 * x + wd.eh_a2) / (x + wd.eh_a3) - wd.eh_a2 / wd.eh_a3)


def _with(grid: np.ndarray, extra: Sequence[float], lo: float, hi: float) -> np.ndarray:
    if len(extra) == 0:
        return grid
    extra = np.clip(np.asarray(extra, dtype=float), lo, hi)
    return np.union1d(grid, extra)


# ---------------------------------------------------------------------------
# HAP charging power
# ---------------------------------------------------------------------------

def charging_values(p0: np.ndarray, state: SystemState, channel: ChannelState, params: SystemParams,
                    wds: Sequence[WdParams]) -> np.ndarray:
    value = -state.deficit_queue * params.deficit_scale * p0 * params.slot_duration_s
    for wd, h, b in zip(wds, channel.wpt_gain, state.battery):
        value = value + params.energy_scale * (capacity_of(wd) - b) * _harvest(p0, h, wd, params)
    return value


def grid_charging_power(state: SystemState, channel: ChannelState, params: SystemParams, wds: Sequence[WdParams],
                        n_points: int = 100_000, extra: Sequence[float] = ()) -> tuple[float, float]:
    """Best WPT power on a uniform grid over [0, p0max] (lowest power on ties)."""
    if n_points < 100:
        raise ValueError("n_points must be >= 100")
    p_max = params.hap_max_tx_power_w
    grid = _with(np.linspace(0.0, p_max, n_points), extra, 0.0, p_max)
    values = charging_values(grid, state, channel, params, wds)
    j = int(np.argmax(values))
    return float(grid[j]), float(values[j])


# ---------------------------------------------------------------------------
# HAP CPU and sensing
# ---------------------------------------------------------------------------

def grid_edge_cpu(state: SystemState, params: SystemParams, n_points: int = 10_001,
                  extra: Sequence[float] = ()) -> tuple[float, float]:
    T = params.slot_duration_s
    f_max = params.hap_max_cpu_hz
    f_q = state.hap_queue_bits * params.hap_cycles_per_bit / T
    grid = _with(np.linspace(0.0, f_max, n_points), [*extra, min(f_q, f_max)], 0.0, f_max)
    grid = grid[grid * T / params.hap_cycles_per_bit <= state.hap_queue_bits * (1 + 1e-12)]
    values = (state.hap_queue_bits * grid * T / params.hap_cycles_per_bit
              - state.deficit_queue * params.deficit_scale * params.hap_cpu_energy_coeff * grid ** 3 * T)
    j = int(np.argmax(values))
    return float(grid[j]), float(values[j])


def grid_sensing(state: SystemState, params: SystemParams, wds: Sequence[WdParams], n_points: int = 101,
                 extra: Optional[Sequence[float]] = None) -> tuple[np.ndarray, float]:
    r_max = params.max_sense_bits
    bt = state.battery - np.array([capacity_of(wd) for wd in wds])
    best_r, total = [], 0.0
    for i, wd in enumerate(wds):
        grid = _with(np.linspace(0.0, r_max, n_points), [] if extra is None else [extra[i]], 0.0, r_max)
        slope = (params.lyapunov_v * wd.weight - state.wd_queue_bits[i]
                 + params.energy_scale * bt[i] * params.sensing_energy_per_bit_j)
        values = slope * grid
        j = int(np.argmax(values))
        best_r.append(grid[j])
        total += float(values[j])
    return np.array(best_r), total


# ---------------------------------------------------------------------------
# Device-side execution
# ---------------------------------------------------------------------------

def execution_values(f, p, tau, qi, q0, bt, gamma, params: SystemParams, wd: WdParams):
    """Device-side objective; -inf where the data-causality constraint fails."""
    T, W = params.slot_duration_s, params.bandwidth_hz
    f, p = np.asarray(f, dtype=float), np.asarray(p, dtype=float)
    d_loc = f * T / wd.cycles_per_bit
    d_off = W * tau * np.log2(1.0 + p * gamma) if tau > 0 else np.zeros_like(p)
    energy = p * tau + wd.cpu_energy_coeff * f ** 3 * T
    value = (qi - q0) * d_off + qi * d_loc + params.energy_scale * bt * energy
    feasible = d_loc + d_off <= qi * (1 + 1e-12) + 1e-9
    return np.where(feasible, value, -np.inf)


def _per_wd_candidates(qi, tau, gamma, params: SystemParams, wd: WdParams, n: int):
    """Box grid plus points on the curve where the device's queue is exactly emptied."""
    T, W, phi = params.slot_duration_s, params.bandwidth_hz, wd.cycles_per_bit
    fg = np.linspace(0.0, wd.max_cpu_hz, n)
    pg = np.linspace(0.0, wd.max_tx_power_w, n)
    F, P = np.meshgrid(fg, pg, indexing="ij")
    fs, ps = [F.ravel()], [P.ravel()]
    if tau > 0 and gamma > 0 and qi > 0:
        with np.errstate(over="ignore"):
            p_edge = (np.exp2(np.minimum((qi - fg * T / phi) / (W * tau), 1000.0)) - 1.0) / gamma
        ok = (p_edge >= 0) & (p_edge <= wd.max_tx_power_w)
        fs.append(fg[ok])
        ps.append(p_edge[ok])
        f_edge = (qi - W * tau * np.log2(1.0 + pg * gamma)) * phi / T
        ok = (f_edge >= 0) & (f_edge <= wd.max_cpu_hz)
        fs.append(f_edge[ok])
        ps.append(pg[ok])
    f_q = min(qi * phi / T, wd.max_cpu_hz)
    fs.append(np.array([f_q]))
    ps.append(np.array([0.0]))
    return np.concatenate(fs), np.concatenate(ps)


def grid_per_wd(queue_bits: float, hap_queue_bits: float, perturbed_battery: float, snr_per_watt: float, tau: float,
                params: SystemParams, wd: WdParams, n: int = 400,
                extra: Sequence[tuple[float, float]] = ()) -> tuple[tuple[float, float], float]:
    """Feasible argmax of the device objective over an n x n (CPU, power) grid."""
    fs, ps = _per_wd_candidates(queue_bits, tau, snr_per_watt, params, wd, n)
    if extra:
        ef, ep = zip(*extra)
        fs = np.concatenate([fs, np.clip(ef, 0, wd.max_cpu_hz)])
        ps = np.concatenate([ps, np.clip(ep, 0, wd.max_tx_power_w)])
    values = execution_values(fs, ps, tau, queue_bits, hap_queue_bits, perturbed_battery, snr_per_watt, params, wd)
    j = int(np.argmax(values))
    return (float(fs[j]), float(ps[j])), float(values[j])


def _best_over_tau(taus, qi, q0, bt, gamma, params, wd, n, extra_fp):
    best = np.empty(len(taus))
    arg = []
    for j, tau in enumerate(taus):
        (f, p), v = grid_per_wd(qi, q0, bt, gamma, float(tau), params, wd, n, extra_fp)
        best[j] = v
        arg.append((f, p))
    return best, arg


def grid_execution(state: SystemState, channel: ChannelState, params: SystemParams, wds: Sequence[WdParams],
                   n: int = 100, n_tau: int = 101, candidate: Optional[Action] = None):
    """Best (f, p, tau) for K <= 2 devices; time shares live on a uniform simplex grid."""
    k = len(wds)
    if k > 2:
        raise UnsupportedScaleError(f"grid execution oracle supports K <= 2, got K={k}")
    T = params.slot_duration_s
    qi, q0 = state.wd_queue_bits, state.hap_queue_bits
    bt = state.battery - np.array([capacity_of(wd) for wd in wds])
    gamma = channel.offload_snr_per_watt
    taus = np.linspace(0.0, T, n_tau)

    per_dev = []
    for i, wd in enumerate(wds):
        extra = [] if candidate is None else [(candidate.wd_cpu_hz[i], candidate.wd_tx_power_w[i])]
        per_dev.append(_best_over_tau(taus, qi[i], q0, bt[i], gamma[i], params, wd, n, extra))

    if k == 1:
        values, args = per_dev[0]
        j = int(np.argmax(values))
        best = (float(values[j]), [taus[j]], [args[j]])
    else:
        (v1, a1), (v2, a2) = per_dev
        best = None
        for j1 in range(n_tau):
            j2 = int(np.argmax(v2[:n_tau - j1]))
            total = v1[j1] + v2[j2]
            if best is None or total > best[0]:
                best = (float(total), [taus[j1], taus[j2]], [a1[j1], a2[j2]])

    if candidate is not None and candidate.offload_time_s.sum() <= T * (1 + 1e-12):
        tau_c = candidate.offload_time_s
        total, fp = 0.0, []
        for i, wd in enumerate(wds):
            extra = [(candidate.wd_cpu_hz[i], candidate.wd_tx_power_w[i])]
            (f, p), v = grid_per_wd(qi[i], q0, bt[i], gamma[i], float(tau_c[i]), params, wd, n, extra)
            total += v
            fp.append((f, p))
        if total > best[0]:
            best = (total, list(tau_c), fp)

    value, tau, fp = best
    f = np.array([x[0] for x in fp])
    p = np.array([x[1] for x in fp])
    tau = np.array(tau, dtype=float)
    return f, np.where(tau > 0, p, 0.0), tau, value


# ---------------------------------------------------------------------------
# Full per-slot problem
# ---------------------------------------------------------------------------

def per_slot_objective(state: SystemState, channel: ChannelState, action: Action, params: SystemParams,
                       wds: Sequence[WdParams]) -> float:
    """Drift-plus-penalty objective of ``action``, evaluated independently of the solver code."""
    T, W = params.slot_duration_s, params.bandwidth_hz
    total = state.deficit_queue * params.deficit_scale * params.hap_avg_energy_budget_j
    total += float(charging_values(np.array(action.hap_tx_power_w), state, channel, params, wds))
    f0 = action.hap_cpu_hz
    total += (state.hap_queue_bits * f0 * T / params.hap_cycles_per_bit
              - state.deficit_queue * params.deficit_scale * params.hap_cpu_energy_coeff * f0 ** 3 * T)
    for i, wd in enumerate(wds):
        bt = state.battery[i] - capacity_of(wd)
        r = action.sense_bits[i]
        total += (params.lyapunov_v * wd.weight - state.wd_queue_bits[i]
                  + params.energy_scale * bt * params.sensing_energy_per_bit_j) * r
        tau = action.offload_time_s[i]
        f, p = action.wd_cpu_hz[i], action.wd_tx_power_w[i]
        d_off = W * tau * np.log2(1.0 + p * channel.offload_snr_per_watt[i]) if tau > 0 else 0.0
        total += ((state.wd_queue_bits[i] - state.hap_queue_bits) * d_off
                  + state.wd_queue_bits[i] * f * T / wd.cycles_per_bit
                  + params.energy_scale * bt * (p * tau + wd.cpu_energy_coeff * f ** 3 * T))
    return float(total)


def joint_grid_decide(state: SystemState, channel: ChannelState, params: SystemParams, wds: Sequence[WdParams],
                      n: int = 100, n_tau: int = 101, n_p0: int = 10_001,
                      candidate: Optional[Action] = None) -> tuple[Action, float]:
    """Grid maximiser of the whole per-slot problem for K <= 2."""
    if len(wds) > 2:
        raise UnsupportedScaleError(f"joint grid oracle supports K <= 2, got K={len(wds)}")
    p0, _ = grid_charging_power(state, channel, params, wds, n_p0,
                                [] if candidate is None else [candidate.hap_tx_power_w])
    f0, _ = grid_edge_cpu(state, params, n_p0, [] if candidate is None else [candidate.hap_cpu_hz])
    r, _ = grid_sensing(state, params, wds, 101, None if candidate is None else list(candidate.sense_bits))
    f, p, tau, _ = grid_execution(state, channel, params, wds, n, n_tau, candidate)
    action = Action(p0, f0, r, p, f, tau)
    return action, per_slot_objective(state, channel, action, params, wds)


# ---------------------------------------------------------------------------
# Random instances
# ---------------------------------------------------------------------------

def random_instance(rng: np.random.Generator, params: SystemParams, wds: Sequence[WdParams],
                    channel_params: ChannelParams) -> tuple[SystemState, ChannelState]:
    """A (state, channel) pair spread over every branch of the per-slot solvers."""
    from .channel import mean_gain

    k = len(wds)
    q_top = params.lyapunov_v + params.max_sense_bits
    cap = np.array([capacity_of(wd) for wd in wds])
    qi = rng.uniform(0.0, q_top, k)
    qi[rng.random(k) < 0.1] = 0.0
    q0 = rng.uniform(0.0, q_top) if rng.random() < 0.7 else rng.uniform(0.0, 0.2 * q_top)
    z0 = 0.0 if rng.random() < 0.2 else 10 ** rng.uniform(-2, 5)
    deficit = np.where(rng.random(k) < 0.2, 0.0, 10 ** rng.uniform(-2, 12, k))
    battery = np.maximum(cap - np.minimum(deficit, cap), 0.0)
    state = SystemState(0, q0, z0, qi, battery)
    fade = -np.log1p(-rng.random((k, 2)))
    hp = [fade[i, 0] * mean_gain(wd.distance_m, channel_params.wpt_carrier_hz, channel_params) for i, wd in enumerate(wds)]
    hi = [fade[i, 1] * mean_gain(wd.distance_m, channel_params.comms_carrier_hz, channel_params) for i, wd in enumerate(wds)]
    return state, ChannelState(hp, hi, params.noise_power_w)
