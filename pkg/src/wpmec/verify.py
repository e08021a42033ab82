"""Acceptance criteria as callable checks.

Each ``criterion_*`` returns a :class:`CriterionResult`; the CLI ``verify``
command and the acceptance tests share them. Simulation runs are memoised in a
:class:`RunCache` so criteria that look at the same runs do not repeat them.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import engine, leese, oracle, physics
from .engine import Policy, RunConfig, RunMetrics
from .model import capacity_of, default_params

V_VALUES = (4e5, 8e5, 16e5, 32e5)
SEEDS = (0, 1, 2, 3, 4)
DOMINANCE_MARGIN = 0.05


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number}. {self.name}: {self.detail} ({self.seconds:.1f}s)"


class RunCache:
    """Memoised ``engine.run`` keyed by (policy, V, seed, K, slots)."""

    def __init__(self, num_slots: int = 20_000):
        self.num_slots = num_slots
        self._runs: dict[tuple, RunMetrics] = {}

    def get(self, policy: Policy = Policy.LEESE, v: Optional[float] = None, seed: int = 0, k: int = 8,
            num_slots: Optional[int] = None) -> RunMetrics:
        n = num_slots or self.num_slots
        key = (Policy(policy).value, v, seed, k, n)
        if key not in self._runs:
            params, wds, cp = default_params(k)
            if v is not None:
                params, wds, cp = engine.apply_axis(params, wds, cp, "V", v)
            self._runs[key] = engine.run(params, wds, cp, RunConfig(num_slots=n, policy=policy, seed=seed))
        return self._runs[key]

    def leese_runs(self) -> list[tuple[float, RunMetrics]]:
        out = []
        for (pol, v, _, k, _), m in self._runs.items():
            if pol == Policy.LEESE.value:
                out.append((v if v is not None else default_params(1)[0].lyapunov_v, m))
        return out


def _timed(number: int, name: str, fn: Callable[[], tuple[bool, str]]) -> CriterionResult:
    start = time.perf_counter()
    passed, detail = fn()
    return CriterionResult(number, name, bool(passed), detail, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# 1. solver vs oracle
# ---------------------------------------------------------------------------

def oracle_gaps(k: int, draws: int, seed: int = 11, grid: int = 80, grid_tau: int = 51,
                per_wd_grid: int = 400) -> tuple[float, float]:
    """Worst relative shortfall of (decide, per_wd_execution) against the grid oracles."""
    params, wds, cp = default_params(k)
    rng = np.random.default_rng(seed)
    worst_joint = worst_wd = -math.inf
    T = params.slot_duration_s
    for _ in range(draws):
        state, channel = oracle.random_instance(rng, params, wds, cp)
        action = leese.decide(state, channel, params, wds)
        value = oracle.per_slot_objective(state, channel, action, params, wds)
        _, best = oracle.joint_grid_decide(state, channel, params, wds, n=grid, n_tau=grid_tau, n_p0=10_001)
        worst_joint = max(worst_joint, (best - value) / max(abs(best), 1e-300))

        i = int(rng.integers(k))
        bt = state.battery[i] - capacity_of(wds[i])
        tau = T if rng.random() < 0.2 else float(rng.uniform(0.0, T))
        args = (state.wd_queue_bits[i], state.hap_queue_bits, bt, channel.offload_snr_per_watt[i], tau)
        f, p = leese.per_wd_execution(*args, params, wds[i])
        got = float(oracle.execution_values(f, p, tau, args[0], args[1], bt, args[3], params, wds[i]))
        _, best = oracle.grid_per_wd(*args, params, wds[i], per_wd_grid)
        worst_wd = max(worst_wd, (best - got) / max(abs(best), 1e-300))
    return worst_joint, worst_wd


def criterion_1(k1_draws: int = 500, k2_draws: int = 100) -> CriterionResult:
    def check():
        j1, w1 = oracle_gaps(1, k1_draws)
        j2, w2 = oracle_gaps(2, k2_draws, seed=12)
        joint, wd = max(j1, j2), max(w1, w2)
        return (joint <= 5e-3 and wd <= 1e-4,
                f"worst joint gap {joint:.2e} (<=5e-3), worst per-device gap {wd:.2e} (<=1e-4) "
                f"over {k1_draws}+{k2_draws} draws")
    return _timed(1, "solver vs grid oracle", check)


# ---------------------------------------------------------------------------
# 2./3. feasibility run and queue bound
# ---------------------------------------------------------------------------

def criterion_2(cache: RunCache, seed: int = 0) -> CriterionResult:
    def check():
        params = default_params(8)[0]
        m = cache.get(Policy.LEESE, seed=seed)
        n = m.num_slots
        z_ratio = m.final_deficit_queue / n
        z_limit = 1e-3 * params.deficit_scale * params.hap_avg_energy_budget_j
        drift_q0 = abs(m.final_window_q0 - m.prev_window_q0) / max(abs(m.prev_window_q0), 1e-300)
        drift_qi = abs(m.final_window_qi - m.prev_window_qi) / max(abs(m.prev_window_qi), 1e-300)
        checks = {
            "no violations": m.violations["causality"] == 0 and m.violations["capacity"] == 0,
            "e0": m.avg_hap_energy_j <= params.hap_avg_energy_budget_j * 1.02,
            "Z0/N": z_ratio < z_limit,
            "windows": drift_q0 < 0.2 and drift_qi < 0.2,
        }
        failed = [k for k, ok in checks.items() if not ok]
        return (not failed,
                f"N={n} violations={m.violations} avg e0={m.avg_hap_energy_j:.4f} J "
                f"Z0/N={z_ratio:.3e} (<{z_limit:.3e}) window drift Q0={drift_q0:.3f} Qi={drift_qi:.3f}"
                + (f" failed: {', '.join(failed)}" if failed else ""))
    return _timed(2, "feasibility run", check)


def criterion_3(cache: RunCache) -> CriterionResult:
    def check():
        runs = cache.leese_runs()
        if not runs:
            cache.get(Policy.LEESE)
            runs = cache.leese_runs()
        r_max = default_params(1)[0].max_sense_bits
        worst = max(m.max_wd_queue_bits - (v + r_max) for v, m in runs)
        bound_hits = sum(m.violations["queue_bound"] for _, m in runs)
        return (worst <= 0 and bound_hits == 0,
                f"{len(runs)} LEESE runs, max(Qi - (V + r_max)) = {worst:.1f} bits")
    return _timed(3, "queue bound V + r_max", check)


# ---------------------------------------------------------------------------
# 4./5. sweeps
# ---------------------------------------------------------------------------

def criterion_4(cache: RunCache, seeds=SEEDS) -> CriterionResult:
    def check():
        rate, queue = [], []
        for v in V_VALUES:
            ms = [cache.get(Policy.LEESE, v=None if v == 32e5 else v, seed=s) for s in seeds]
            rate.append(float(np.mean([m.sensing_rate for m in ms])))
            queue.append(float(np.mean([m.avg_wd_queue_bits for m in ms])))
        ok = all(b >= a for a, b in zip(rate, rate[1:])) and all(b >= a for a, b in zip(queue, queue[1:]))
        return ok, ("R=" + ", ".join(f"{x:.0f}" for x in rate) + " | E[Qi]=" + ", ".join(f"{x:.0f}" for x in queue))
    return _timed(4, "V trade-off monotone", check)


def criterion_5(cache: RunCache, seeds=SEEDS) -> CriterionResult:
    def check():
        rates = {pol: float(np.mean([cache.get(pol, seed=s).sensing_rate for s in seeds])) for pol in Policy}
        lead = rates[Policy.LEESE]
        gains = {pol.value: lead / rates[pol] - 1.0 for pol in Policy if pol is not Policy.LEESE}
        lco_weakest = all(rates[Policy.LCO] < rates[p] for p in Policy if p is not Policy.LCO)
        ok = lco_weakest and all(g >= DOMINANCE_MARGIN for g in gains.values())
        return ok, ("gains " + ", ".join(f"{k}={v * 100:+.2f}%" for k, v in gains.items())
                    + f", LCO weakest={lco_weakest}")
    return _timed(5, "benchmark dominance", check)


# ---------------------------------------------------------------------------
# 6. timing
# ---------------------------------------------------------------------------

def criterion_6(num_slots: int = 2000) -> CriterionResult:
    def check():
        t16 = engine.run(*default_params(16), RunConfig(num_slots=num_slots, seed=0)).decide_time_mean_s
        t1 = engine.run(*default_params(1), RunConfig(num_slots=num_slots, seed=0)).decide_time_mean_s
        return (t16 < 10e-3 and t1 < 1e-3, f"mean decide K=16 {t16 * 1e3:.3f} ms, K=1 {t1 * 1e3:.3f} ms")
    return _timed(6, "decide timing", check)


# ---------------------------------------------------------------------------
# 7. property suites
# ---------------------------------------------------------------------------

def _concavity(rng) -> bool:
    from .model import WdParams
    for _ in range(1000):
        a3 = rng.uniform(0.01, 5.0)
        a2 = rng.uniform(0.0, 5.0)
        a1 = a2 / a3 + rng.uniform(0.0, 5.0)
        wd = WdParams(eh_a1=a1, eh_a2=a2, eh_a3=a3)
        h = 10 ** rng.uniform(-6, 0)
        pa, pb = rng.uniform(0, 3, 2)
        e = lambda p: float(physics.energy_harvested(p, h, wd))
        if e(0.5 * (pa + pb)) < 0.5 * (e(pa) + e(pb)) - 1e-12:
            return False
        lo, hi = sorted((pa, pb))
        if e(hi) < e(lo) or e(0.0) != 0.0:
            return False
    return True


def _charging_branches(rng, params, wds, cp) -> bool:
    for _ in range(300):
        state, channel = oracle.random_instance(rng, params, wds, cp)
        p0 = leese.charging_power(state, channel, params, wds)
        if state.deficit_queue == 0 and p0 != params.hap_max_tx_power_w:
            return False
        if state.deficit_queue > 0 and leese.charging_power_derivative(state, channel, params, wds)(0.0) <= 0 and p0 != 0:
            return False
    return True


def _bcd_monotone(rng, params, wds, cp) -> bool:
    for _ in range(300):
        state, channel = oracle.random_instance(rng, params, wds, cp)
        hist = leese.bcd_execution(state, channel, params, wds).objective_history
        if any(b < a - 1e-9 * max(abs(a), 1.0) for a, b in zip(hist, hist[1:])):
            return False
    return True


def _capacity_root(params, wds) -> bool:
    wd = wds[0]
    H = leese.capacity_residual(params, wd)
    root = leese.capacity_root(params, wd)
    lo = params.energy_scale * leese.max_wd_energy(params, wd)
    xs = np.sort(lo + (10 ** np.random.default_rng(3).uniform(-3, math.log10(20 * root), 200)))
    values = [H(x) for x in xs]
    monotone = all(b < a for a, b in zip(values, values[1:]))
    return monotone and abs(H(root)) <= 1e-9


def _conservation(rng, params, wds, cp) -> bool:
    for _ in range(300):
        state, channel = oracle.random_instance(rng, params, wds, cp)
        action = leese.decide(state, channel, params, wds)
        out = physics.step_queues(state, action, channel, params, wds)
        inflow = out.next_state.hap_queue_bits - max(state.hap_queue_bits - out.edge_bits, 0.0)
        if abs(inflow - out.offload_bits.sum()) > 1e-6 * max(1.0, out.offload_bits.sum()):
            return False
        if (out.next_state.wd_queue_bits < 0).any() or out.next_state.hap_queue_bits < 0:
            return False
    return True


def criterion_7() -> CriterionResult:
    def check():
        rng = np.random.default_rng(7)
        params, wds, cp = default_params(3)
        results = {
            "concavity/monotonicity": _concavity(rng),
            "charging branches": _charging_branches(rng, params, wds, cp),
            "BCD monotone": _bcd_monotone(rng, params, wds, cp),
            "H monotone + root residual": _capacity_root(params, wds),
            "data conservation": _conservation(rng, params, wds, cp),
        }
        return all(results.values()), ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in results.items())
    return _timed(7, "property suites", check)


# ---------------------------------------------------------------------------

def run_level(level: str, report: Callable[[CriterionResult], None] = lambda r: None) -> list[CriterionResult]:
    """``quick``: K<=2 oracle checks and a 5e3-slot feasibility run. ``full``: every criterion."""
    if level == "quick":
        cache = RunCache(5_000)
        steps = [lambda: criterion_1(50, 10), lambda: criterion_2(cache), lambda: criterion_3(cache)]
    elif level == "full":
        cache = RunCache()
        steps = [criterion_1, lambda: criterion_2(cache), lambda: criterion_4(cache), lambda: criterion_5(cache),
                 lambda: criterion_3(cache), criterion_6, criterion_7]
    else:
        raise ValueError(f"unknown verification level {level!r}")
    out = []
    for step in steps:
        res = step()
        report(res)
        out.append(res)
    return sorted(out, key=lambda r: r.number)
