"""Per-slot LEESE controller.

Each slot the drift-plus-penalty problem splits into four independent blocks:
HAP charging power, HAP CPU frequency, ON-OFF sensing, and device-side task
execution. The last block is solved by block coordinate descent, alternating a
closed-form per-device (CPU, power) step with a greedy time-sharing LP.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .model import (Action, ChannelState, InvalidParameterError, SystemParams, SystemState, WdParams,
                    capacity_of)

LN2 = math.log(2.0)
_MAX_EXP2 = 1000.0
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
# time step of the one-sided derivative used by the time-exchange refinement
_TAU_STEP = 1e-7
_EXCHANGE_TOL = 1e-7


class ConvergenceError(ArithmeticError):
    """A root search did not converge; carries the final bracket."""

    def __init__(self, what: str, lo: float, hi: float, iters: int):
        self.lo, self.hi, self.iters = lo, hi, iters
        super().__init__(f"{what}: bisection did not converge after {iters} iterations (bracket [{lo!r}, {hi!r}])")


@dataclass(frozen=True)
class BisectionConfig:
    abs_tol: float = 1e-12
    rel_tol: float = 0.0
    max_iters: int = 200

    def __post_init__(self):
        if not (self.abs_tol > 0 or self.rel_tol > 0):
            raise InvalidParameterError("BisectionConfig needs a positive abs_tol or rel_tol")
        if self.max_iters < 1:
            raise InvalidParameterError("BisectionConfig.max_iters must be >= 1")


@dataclass(frozen=True)
class BcdConfig:
    tol: float = 1e-6
    max_iters: int = 50
    # None means T / K for every device
    tau_init: Optional[float] = None
    # pairwise time exchanges after the coordinate descent stalls; 0 disables
    refine_iters: int = 32

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidParameterError("BcdConfig.tol must be > 0")
        if self.max_iters < 1:
            raise InvalidParameterError("BcdConfig.max_iters must be >= 1")
        if self.refine_iters < 0:
            raise InvalidParameterError("BcdConfig.refine_iters must be >= 0")


DEFAULT_BISECTION = BisectionConfig()
DEFAULT_BCD = BcdConfig()


def bisect_decreasing(fn: Callable[[float], float], lo: float, hi: float,
                      cfg: BisectionConfig = DEFAULT_BISECTION, what: str = "root") -> float:
    """Root of a decreasing ``fn`` with ``fn(lo) > 0 >= fn(hi)``.

    Stops at the tolerance or when the bracket can no longer be split in
    floating point.
    """
    for _ in range(cfg.max_iters):
        mid = 0.5 * (lo + hi)
        if hi - lo <= max(cfg.abs_tol, cfg.rel_tol * abs(mid)) or mid <= lo or mid >= hi:
            return mid
        if fn(mid) > 0:
            lo = mid
        else:
            hi = mid
    if hi - lo <= max(cfg.abs_tol, cfg.rel_tol * abs(0.5 * (lo + hi))):
        return 0.5 * (lo + hi)
    raise ConvergenceError(what, lo, hi, cfg.max_iters)


def _exp2(x: float) -> float:
    return 2.0 ** min(x, _MAX_EXP2)


def golden_section_max(fn: Callable[[float], float], lo: float, hi: float, tol: float = 1e-9) -> float:
    """Maximiser of a unimodal ``fn`` on [lo, hi]."""
    a, b = lo, hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# HAP-side blocks
# ---------------------------------------------------------------------------

def charging_power_derivative(state: SystemState, channel: ChannelState, params: SystemParams,
                              wds: Sequence[WdParams]) -> Callable[[float], float]:
    """Slope of the charging sub-objective as a function of the HAP transmit power."""
    coefs, shifts = [], []
    for wd, h, b in zip(wds, channel.wpt_gain.tolist(), state.battery.tolist()):
        c = params.energy_scale * (capacity_of(wd) - b) * wd.eh_saturation * h * params.harvest_factor
        if c > 0 and h > 0:
            coefs.append((c, h, wd.eh_a3))
    price = state.deficit_queue * params.deficit_scale * params.slot_duration_s

    def g1_prime(p0: float) -> float:
        return sum(c / (p0 * h + a3) ** 2 for c, h, a3 in coefs) - price

    return g1_prime


def charging_power(state: SystemState, channel: ChannelState, params: SystemParams, wds: Sequence[WdParams],
                   bisection: BisectionConfig = DEFAULT_BISECTION) -> float:
    """Threshold-structured optimal WPT power."""
    p_max = params.hap_max_tx_power_w
    if state.deficit_queue <= 0:
        return p_max
    g1_prime = charging_power_derivative(state, channel, params, wds)
    if g1_prime(0.0) <= 0:
        return 0.0
    # the stationary point beyond p_max is clipped anyway
    if g1_prime(p_max) >= 0:
        return p_max
    return bisect_decreasing(g1_prime, 0.0, p_max, bisection, "charging power")


def edge_cpu(state: SystemState, params: SystemParams) -> float:
    q0, z0 = state.hap_queue_bits, state.deficit_queue
    cap = min(q0 * params.hap_cycles_per_bit / params.slot_duration_s, params.hap_max_cpu_hz)
    if cap <= 0:
        return 0.0
    if z0 <= 0:
        return cap
    unconstrained = math.sqrt(q0 / (3.0 * z0 * params.deficit_scale * params.hap_cycles_per_bit
                                    * params.hap_cpu_energy_coeff))
    return min(unconstrained, cap)


def sensing_cost(state: SystemState, params: SystemParams, wds: Sequence[WdParams]) -> np.ndarray:
    """Per-device sensing threshold; sensing is on where this is <= 0."""
    weights = np.array([wd.weight for wd in wds])
    return (state.wd_queue_bits - params.lyapunov_v * weights
            - params.energy_scale * state.perturbed_battery(wds) * params.sensing_energy_per_bit_j)


def sensing(state: SystemState, params: SystemParams, wds: Sequence[WdParams]) -> np.ndarray:
    return np.where(sensing_cost(state, params, wds) <= 0, params.max_sense_bits, 0.0)


# ---------------------------------------------------------------------------
# Device-side task execution
# ---------------------------------------------------------------------------

def per_wd_execution(queue_bits: float, hap_queue_bits: float, perturbed_battery: float, snr_per_watt: float,
                     tau: float, params: SystemParams, wd: WdParams,
                     bisection: BisectionConfig = DEFAULT_BISECTION) -> tuple[float, float]:
    """Optimal (CPU Hz, transmit W) of one device for a fixed offloading time.

    ``perturbed_battery`` is battery minus capacity (<= 0).
    """
    qi, q0, bt, g = queue_bits, hap_queue_bits, min(perturbed_battery, 0.0), snr_per_watt
    T, W, phi, kappa = params.slot_duration_s, params.bandwidth_hz, wd.cycles_per_bit, wd.cpu_energy_coeff
    lam_e = params.energy_scale
    qi = max(qi, 0.0)

    f_cap = min(wd.max_cpu_hz, qi * phi / T)
    if bt < 0 and kappa > 0:
        f_hat = min(math.sqrt(qi / (3.0 * lam_e * -bt * kappa * phi)), f_cap)
    else:
        f_hat = f_cap
    if qi - q0 < 0 or tau <= 0 or g <= 0:
        return f_hat, 0.0

    w_tau = W * tau

    def power_for(f: float) -> float:
        # transmit power that empties the queue given local CPU f
        return (_exp2((qi - f * T / phi) / w_tau) - 1.0) / g

    def cpu_for(p: float) -> float:
        return (qi - w_tau * math.log2(1.0 + p * g)) * phi / T

    p_cap = min(wd.max_tx_power_w, power_for(0.0))
    p_tilde = (q0 - qi) * W / (lam_e * bt * LN2) - 1.0 / g if bt < 0 else wd.max_tx_power_w
    p_hat = min(max(p_tilde, 0.0), p_cap)

    if f_hat * T / phi + w_tau * math.log2(1.0 + p_hat * g) <= qi:
        return f_hat, p_hat
    if bt == 0:
        return f_hat, min(max(power_for(f_hat), 0.0), p_hat)

    f_lb, f_ub = max(0.0, cpu_for(p_hat)), f_hat
    a0 = lam_e * bt * T * LN2 / (W * phi * g)

    def u_prime(f: float) -> float:
        return (3.0 * lam_e * kappa * T * bt * f * f - a0 * _exp2((qi - f * T / phi) / w_tau)
                + T * q0 / phi)

    if f_lb >= f_ub or u_prime(f_ub) >= 0:
        f = f_ub
    elif u_prime(f_lb) <= 0:
        f = f_lb
    else:
        f = bisect_decreasing(u_prime, f_lb, f_ub, bisection, "boundary CPU frequency")
    return f, min(max(power_for(f), 0.0), p_hat)


def time_allocation(weights: Sequence[float], tau_ub: Sequence[float], slot_duration_s: float) -> np.ndarray:
    """Greedy solution of max sum(C_i tau_i) s.t. sum(tau) <= T, 0 <= tau_i <= tau_ub_i.

    Devices are served in decreasing order of C_i, ties by index.
    """
    weights = list(weights)
    tau = np.zeros(len(weights))
    remaining = slot_duration_s
    for i in sorted(range(len(weights)), key=lambda j: (-weights[j], j)):
        if weights[i] <= 0 or remaining <= 0:
            continue
        tau[i] = max(min(tau_ub[i], remaining), 0.0)
        remaining -= tau[i]
    return tau


@dataclass
class ExecutionPlan:
    cpu_hz: np.ndarray
    tx_power_w: np.ndarray
    offload_time_s: np.ndarray
    objective_history: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.objective_history)


def execution_objective(qi, q0, bt, gamma, f, p, tau, params: SystemParams, wds: Sequence[WdParams]) -> float:
    """Device-side part of the per-slot objective for given (f, p, tau)."""
    T, W, lam_e = params.slot_duration_s, params.bandwidth_hz, params.energy_scale
    total = 0.0
    for i, wd in enumerate(wds):
        d_off = W * tau[i] * math.log2(1.0 + p[i] * gamma[i]) if tau[i] > 0 else 0.0
        d_loc = f[i] * T / wd.cycles_per_bit
        energy = p[i] * tau[i] + wd.cpu_energy_coeff * f[i] ** 3 * T
        total += (qi[i] - q0) * d_off + qi[i] * d_loc + lam_e * bt[i] * energy
    return total


def _offload_bound(qi: float, f: float, p: float, g: float, params: SystemParams, wd: WdParams) -> float:
    T = params.slot_duration_s
    if p <= 0 or g <= 0:
        return T
    rate = params.bandwidth_hz * math.log2(1.0 + p * g)
    if rate <= 0:
        return T
    return min(T, max(qi - f * T / wd.cycles_per_bit, 0.0) / rate)


def bcd_execution(state: SystemState, channel: ChannelState, params: SystemParams, wds: Sequence[WdParams],
                  cfg: BcdConfig = DEFAULT_BCD, bisection: BisectionConfig = DEFAULT_BISECTION) -> ExecutionPlan:
    """Alternate the per-device step and the time-sharing step until the objective stalls."""
    k = len(wds)
    T = params.slot_duration_s
    qi = state.wd_queue_bits.tolist()
    q0 = state.hap_queue_bits
    bt = np.minimum(state.perturbed_battery(wds), 0.0).tolist()
    gamma = channel.offload_snr_per_watt.tolist()
    tau0 = T / k if cfg.tau_init is None else cfg.tau_init
    # devices behind the edge queue never offload
    active = [qi[i] >= q0 and gamma[i] > 0 for i in range(k)]
    tau = [tau0 if active[i] else 0.0 for i in range(k)]

    f = [0.0] * k
    p = [0.0] * k
    history: list[float] = []
    for _ in range(cfg.max_iters):
        for i, wd in enumerate(wds):
            f[i], p[i] = per_wd_execution(qi[i], q0, bt[i], gamma[i], tau[i], params, wd, bisection)
        c = [0.0] * k
        ub = [0.0] * k
        for i, wd in enumerate(wds):
            if active[i]:
                c[i] = ((qi[i] - q0) * params.bandwidth_hz * math.log2(1.0 + p[i] * gamma[i])
                        + params.energy_scale * bt[i] * p[i])
                ub[i] = _offload_bound(qi[i], f[i], p[i], gamma[i], params, wd)
        tau = time_allocation(c, ub, T).tolist()
        obj = execution_objective(qi, q0, bt, gamma, f, p, tau, params, wds)
        converged = bool(history) and obj - history[-1] <= cfg.tol * max(abs(history[-1]), 1e-300)
        history.append(obj)
        if converged:
            break

    p = [p[i] if tau[i] > 0 else 0.0 for i in range(k)]
    return ExecutionPlan(np.array(f), np.array(p), np.array(tau), history)


def refine_time_shares(state: SystemState, channel: ChannelState, params: SystemParams, wds: Sequence[WdParams],
                       plan: ExecutionPlan, cfg: BcdConfig = DEFAULT_BCD,
                       bisection: BisectionConfig = DEFAULT_BISECTION) -> ExecutionPlan:
    """Move offloading time between devices until no exchange pays off.

    With the offloaded bits as the variable each device's problem is jointly
    concave in (CPU, bits, time), so its best value V_i(tau) is concave in tau
    and the time split is a separable concave program under sum(tau) <= T.
    Coordinate descent can stall at a kink of the queue constraint; here the
    device with the largest marginal gain takes time from the one with the
    smallest marginal loss (exact line search) until the two agree.
    """
    k = len(wds)
    T = params.slot_duration_s
    qi = state.wd_queue_bits.tolist()
    q0 = state.hap_queue_bits
    bt = np.minimum(state.perturbed_battery(wds), 0.0).tolist()
    gamma = channel.offload_snr_per_watt.tolist()
    active = [i for i in range(k) if qi[i] >= q0 and gamma[i] > 0]
    if cfg.refine_iters == 0 or not active:
        return plan
    W, lam_e = params.bandwidth_hz, params.energy_scale

    def value(i: int, tau: float) -> float:
        wd = wds[i]
        f, p = per_wd_execution(qi[i], q0, bt[i], gamma[i], tau, params, wd, bisection)
        d_off = W * tau * math.log2(1.0 + p * gamma[i]) if tau > 0 else 0.0
        return ((qi[i] - q0) * d_off + qi[i] * f * T / wd.cycles_per_bit
                + lam_e * bt[i] * (p * tau + wd.cpu_energy_coeff * f ** 3 * T))

    tau = plan.offload_time_s.astype(float).tolist()
    vals = {i: value(i, tau[i]) for i in active}
    h = _TAU_STEP * T
    scale = max(sum(abs(v) for v in vals.values()), 1e-300)
    for _ in range(cfg.refine_iters):
        gain = {i: (value(i, tau[i] + h) - vals[i]) / h for i in active if tau[i] + h <= T}
        loss = {i: (vals[i] - value(i, tau[i] - h)) / h for i in active if tau[i] >= h}
        if not gain:
            break
        j = max(gain, key=lambda i: (gain[i], -i))
        slack = T - sum(tau)
        if slack > h and gain[j] > 0:
            hi = min(slack, T - tau[j])
            d = golden_section_max(lambda x: value(j, tau[j] + x), 0.0, hi, _EXCHANGE_TOL * T)
            d = max((d, hi), key=lambda x: value(j, tau[j] + x))
            new = value(j, tau[j] + d)
            if new - vals[j] <= cfg.tol * 1e-3 * scale:
                break
            tau[j] += d
            vals[j] = new
            continue
        donors = [i for i in loss if i != j]
        if not donors:
            break
        i = min(donors, key=lambda x: (loss[x], x))
        if gain[j] <= loss[i]:
            break
        hi = min(tau[i], T - tau[j])

        def pair(x: float) -> float:
            return value(i, tau[i] - x) + value(j, tau[j] + x)

        d = golden_section_max(pair, 0.0, hi, _EXCHANGE_TOL * T)
        d = max((d, hi), key=pair)
        before = vals[i] + vals[j]
        after = pair(d)
        if after - before <= cfg.tol * 1e-3 * scale:
            break
        tau[i] = max(tau[i] - d, 0.0)
        tau[j] += d
        vals[i], vals[j] = value(i, tau[i]), value(j, tau[j])

    f = plan.cpu_hz.astype(float).copy()
    p = plan.tx_power_w.astype(float).copy()
    for i in active:
        f[i], p[i] = per_wd_execution(qi[i], q0, bt[i], gamma[i], tau[i], params, wds[i], bisection)
    tau = np.array(tau)
    p = np.where(tau > 0, p, 0.0)
    obj = execution_objective(qi, q0, bt, gamma, f, p, tau, params, wds)
    if plan.objective_history and obj < plan.objective_history[-1]:
        return plan
    return ExecutionPlan(f, p, tau, plan.objective_history + [obj])


def solve_execution(state: SystemState, channel: ChannelState, params: SystemParams, wds: Sequence[WdParams],
                    cfg: BcdConfig = DEFAULT_BCD, bisection: BisectionConfig = DEFAULT_BISECTION) -> ExecutionPlan:
    """Coordinate descent followed by the time-exchange refinement."""
    plan = bcd_execution(state, channel, params, wds, cfg, bisection)
    return refine_time_shares(state, channel, params, wds, plan, cfg, bisection)


def apply_energy_guard(action: Action, state: SystemState, params: SystemParams) -> Action:
    """Silence every device whose battery is below the management threshold."""
    low = state.battery < params.min_battery_scaled
    if not low.any():
        return action
    keep = ~low
    return Action(action.hap_tx_power_w, action.hap_cpu_hz, action.sense_bits * keep, action.wd_tx_power_w * keep,
                  action.wd_cpu_hz * keep, action.offload_time_s * keep)


def decide(state: SystemState, channel: ChannelState, params: SystemParams, wds: Sequence[WdParams],
           cfg: BcdConfig = DEFAULT_BCD, bisection: BisectionConfig = DEFAULT_BISECTION) -> Action:
    """One slot of LEESE control."""
    plan = solve_execution(state, channel, params, wds, cfg, bisection)
    action = Action(
        hap_tx_power_w=charging_power(state, channel, params, wds, bisection),
        hap_cpu_hz=edge_cpu(state, params),
        sense_bits=sensing(state, params, wds),
        wd_tx_power_w=plan.tx_power_w,
        wd_cpu_hz=plan.cpu_hz,
        offload_time_s=plan.offload_time_s,
    )
    return apply_energy_guard(action, state, params)


def slot_objective(state: SystemState, channel: ChannelState, action: Action, params: SystemParams,
                   wds: Sequence[WdParams]) -> float:
    """Per-slot drift-plus-penalty objective (to be maximised) of ``action``."""
    from .physics import harvested_all

    T, W = params.slot_duration_s, params.bandwidth_hz
    lam_e, lam_c = params.energy_scale, params.deficit_scale
    qi, q0 = state.wd_queue_bits, state.hap_queue_bits
    bt = state.perturbed_battery(wds)
    phi = np.array([wd.cycles_per_bit for wd in wds])
    kappa = np.array([wd.cpu_energy_coeff for wd in wds])
    weights = np.array([wd.weight for wd in wds])

    d_loc = action.wd_cpu_hz * T / phi
    rate = np.log2(1.0 + action.wd_tx_power_w * channel.offload_snr_per_watt)
    d_off = np.where(action.offload_time_s > 0, W * action.offload_time_s * rate, 0.0)
    e_wd = (params.sensing_energy_per_bit_j * action.sense_bits + kappa * action.wd_cpu_hz ** 3 * T
            + action.wd_tx_power_w * action.offload_time_s)
    e_h = harvested_all(action.hap_tx_power_w, channel, wds, params)
    d_edge = action.hap_cpu_hz * T / params.hap_cycles_per_bit
    e0 = action.hap_tx_power_w * T + params.hap_cpu_energy_coeff * action.hap_cpu_hz ** 3 * T
    return float(
        params.lyapunov_v * np.sum(weights * action.sense_bits)
        + np.sum(qi * (d_loc + d_off - action.sense_bits))
        + q0 * (d_edge - np.sum(d_off))
        + np.sum(lam_e * bt * (e_wd - e_h))
        + state.deficit_queue * lam_c * (params.hap_avg_energy_budget_j - e0)
    )


# ---------------------------------------------------------------------------
# Safe battery capacity
# ---------------------------------------------------------------------------

def max_wd_energy(params: SystemParams, wd: WdParams) -> float:
    T = params.slot_duration_s
    return (params.sensing_energy_per_bit_j * params.max_sense_bits + wd.max_tx_power_w * T
            + wd.cpu_energy_coeff * wd.max_cpu_hz ** 3 * T)


def capacity_residual(params: SystemParams, wd: WdParams) -> Callable[[float], float]:
    """H(capacity): worst-case low-battery spend minus the management threshold.

    Defined for capacities above ``energy_scale * max_wd_energy``; strictly decreasing there.
    """
    T, W, lam_e = params.slot_duration_s, params.bandwidth_hz, params.energy_scale
    q_max = params.lyapunov_v + params.max_sense_bits
    floor = lam_e * max_wd_energy(params, wd)
    kappa, phi = wd.cpu_energy_coeff, wd.cycles_per_bit

    def h(capacity: float) -> float:
        gap = capacity - floor
        if gap <= 0:
            return math.inf
        cpu = lam_e * kappa * math.sqrt(q_max / (3.0 * lam_e * gap * kappa * phi)) ** 3 * T if kappa > 0 else 0.0
        radio = q_max * W / (lam_e * gap * LN2) * T
        return cpu + radio - params.min_battery_scaled

    return h


def capacity_root(params: SystemParams, wd: WdParams, bisection: BisectionConfig = DEFAULT_BISECTION) -> float:
    """Unique zero of ``capacity_residual``."""
    h = capacity_residual(params, wd)
    floor = params.energy_scale * max_wd_energy(params, wd)
    gap = max(floor, 1.0)
    for _ in range(bisection.max_iters):
        if h(floor + gap) < 0:
            break
        gap *= 2.0
    else:
        raise ConvergenceError("capacity bracket", floor, floor + gap, bisection.max_iters)

    def h_gap(x: float) -> float:
        return h(floor + x)

    x = bisect_decreasing(h_gap, 0.0, gap, bisection, "capacity threshold")
    # pick the better side of the final bracket
    candidates = [x, math.nextafter(x, 0.0), math.nextafter(x, math.inf)]
    return floor + min(candidates, key=lambda c: abs(h_gap(c)))


def battery_threshold(params: SystemParams, wd: WdParams, bisection: BisectionConfig = DEFAULT_BISECTION) -> float:
    """Smallest battery capacity (scaled units) for which LEESE never breaks energy causality."""
    lam_e = params.energy_scale
    sensing_floor = params.lyapunov_v / (lam_e * params.sensing_energy_per_bit_j) + lam_e * max_wd_energy(params, wd)
    return max(sensing_floor, capacity_root(params, wd, bisection)) + lam_e * params.hap_max_tx_power_w * params.slot_duration_s
