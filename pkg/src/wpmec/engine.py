"""Slot-by-slot simulation of a control policy and parameter sweeps."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from . import baselines, leese
from .channel import ChannelStream
from .leese import BcdConfig
from .model import (ChannelParams, ChannelState, InvalidParameterError, SystemParams, SystemState, WdParams,
                    capacity_of, resolve_capacities)
from .physics import InfeasibleActionError, step_queues

log = logging.getLogger(__name__)

SERIES_LIMIT = 10_000
SWEEP_AXES = ("V", "sigma", "e0th", "r_max", "K")
PLACEMENT_MEAN_M = 5.0
PLACEMENT_STD_M = 3.0
_PLACEMENT_KEY = 0x9A


class Policy(str, Enum):
    LEESE = "leese"
    LCO = "lco"
    EQOT = "eqot"
    MYOPIC = "myopic"


@dataclass(frozen=True)
class RunConfig:
    num_slots: int = 20_000
    policy: Policy = Policy.LEESE
    seed: int = 0
    initial_state: Optional[SystemState] = None
    moving_average_window: int = 400
    bcd: BcdConfig = field(default_factory=BcdConfig)
    keep_channel_trace: bool = False

    def __post_init__(self):
        if self.num_slots < 1:
            raise InvalidParameterError(f"num_slots must be >= 1, got {self.num_slots}")
        if self.moving_average_window < 1:
            raise InvalidParameterError("moving_average_window must be >= 1")
        object.__setattr__(self, "policy", Policy(self.policy))


SERIES_FIELDS = ("q0_bits", "mean_qi_bits", "max_qi_bits", "min_battery", "max_battery", "mean_battery",
                 "e0_j", "z0", "weighted_sensed_bits")


@dataclass
class RunMetrics:
    policy: str
    seed: int
    num_slots: int
    sensing_rate: float
    avg_hap_energy_j: float
    avg_hap_queue_bits: float
    avg_wd_queue_bits: float
    max_wd_queue_bits: float
    final_deficit_queue: float
    final_window_q0: float
    prev_window_q0: float
    final_window_qi: float
    prev_window_qi: float
    violations: dict
    decide_time_mean_s: float
    decide_time_p99_s: float
    series: dict
    final_state: SystemState
    channel_trace: list = field(default_factory=list, repr=False)

    def comparable(self) -> dict:
        """Everything except wall-clock statistics, for determinism checks."""
        out = {k: v for k, v in asdict(self).items()
               if k not in ("decide_time_mean_s", "decide_time_p99_s", "series", "final_state", "channel_trace")}
        # NaN window means (short runs) must compare equal
        out = {k: ("nan" if isinstance(v, float) and np.isnan(v) else v) for k, v in out.items()}
        out["series"] = {k: np.asarray(v).tobytes() for k, v in self.series.items()}
        out["final_state"] = (self.final_state.slot, self.final_state.hap_queue_bits,
                              self.final_state.deficit_queue, self.final_state.wd_queue_bits.tobytes(),
                              self.final_state.battery.tobytes())
        return out

    def summary(self) -> dict:
        return {
            "policy": self.policy,
            "seed": self.seed,
            "num_slots": self.num_slots,
            "sensing_rate_bits": self.sensing_rate,
            "avg_hap_energy_j": self.avg_hap_energy_j,
            "avg_hap_queue_bits": self.avg_hap_queue_bits,
            "avg_wd_queue_bits": self.avg_wd_queue_bits,
            "max_wd_queue_bits": self.max_wd_queue_bits,
            "final_deficit_queue": self.final_deficit_queue,
            "violations": dict(self.violations),
            "decide_time_mean_s": self.decide_time_mean_s,
            "decide_time_p99_s": self.decide_time_p99_s,
        }

    def downsampled_series(self, window: int = 400) -> dict:
        """Every slot up to 1e4 slots; beyond that every ceil(N/1e4)-th slot plus the final window in full."""
        n = self.num_slots
        if n <= SERIES_LIMIT:
            idx = np.arange(n)
        else:
            step = math.ceil(n / SERIES_LIMIT)
            idx = np.union1d(np.arange(0, n, step), np.arange(max(n - window, 0), n))
        out = {"slot": idx}
        out.update({k: np.asarray(v)[idx] for k, v in self.series.items()})
        return out


def _window_means(x: np.ndarray, window: int) -> tuple[float, float]:
    n = x.size
    last = x[max(n - window, 0):]
    prev = x[max(n - 2 * window, 0):max(n - window, 0)]
    return float(last.mean()), float(prev.mean()) if prev.size else float("nan")


def make_policy(policy: Policy, params: SystemParams, wds: Sequence[WdParams], bcd: BcdConfig):
    """Return ``fn(state, channel, spent_j) -> Action``."""
    policy = Policy(policy)
    if policy is Policy.LEESE:
        return lambda s, ch, spent: leese.decide(s, ch, params, wds, bcd)
    if policy is Policy.LCO:
        return lambda s, ch, spent: baselines.lco_decide(s, ch, params, wds)
    if policy is Policy.EQOT:
        return lambda s, ch, spent: baselines.eqot_decide(s, ch, params, wds)
    return lambda s, ch, spent: baselines.myopic_decide(s, ch, params, wds, spent, bcd)


def run(params: SystemParams, wds: Sequence[WdParams], channel_params: ChannelParams, cfg: RunConfig,
        channel_source=None) -> RunMetrics:
    """Simulate ``cfg.num_slots`` slots; aborts with ``InfeasibleActionError`` on a bad action.

    ``channel_source`` overrides the seeded stream (anything with ``next_slot()``).
    """
    if any(wd.battery_capacity is None for wd in wds):
        wds = resolve_capacities(params, wds)
    wds = list(wds)
    if len(wds) != params.num_devices:
        raise InvalidParameterError(f"num_devices={params.num_devices} but {len(wds)} devices given")
    if channel_source is None:
        channel_source = ChannelStream(replace(channel_params, rng_seed=cfg.seed), [wd.distance_m for wd in wds],
                                       params.noise_power_w)
    decide = make_policy(cfg.policy, params, wds, cfg.bcd)

    n, k = cfg.num_slots, len(wds)
    cap = np.array([capacity_of(wd) for wd in wds])
    weights = np.array([wd.weight for wd in wds])
    q_bound = params.lyapunov_v * weights + params.max_sense_bits
    state = cfg.initial_state or SystemState.initial(wds)

    series = {name: np.empty(n) for name in SERIES_FIELDS}
    qi_sum = np.zeros(k)
    times = np.empty(n)
    spent = 0.0
    violations = {"causality": 0, "capacity": 0, "budget": 0, "queue_bound": 0}
    trace: list[ChannelState] = []

    for t in range(n):
        channel = channel_source.next_slot()
        if cfg.keep_channel_trace:
            trace.append(channel)
        start = time.perf_counter()
        action = decide(state, channel, spent)
        times[t] = time.perf_counter() - start
        try:
            outcome = step_queues(state, action, channel, params, wds)
        except InfeasibleActionError as err:
            err.slot = t
            err.args = (f"{err.args[0]} at slot {t}",)
            raise

        qi, b = state.wd_queue_bits, state.battery
        series["q0_bits"][t] = state.hap_queue_bits
        series["mean_qi_bits"][t] = qi.mean()
        series["max_qi_bits"][t] = qi.max()
        series["min_battery"][t] = b.min()
        series["max_battery"][t] = b.max()
        series["mean_battery"][t] = b.mean()
        series["e0_j"][t] = outcome.hap_energy_j
        series["z0"][t] = state.deficit_queue
        series["weighted_sensed_bits"][t] = float(weights @ action.sense_bits)
        qi_sum += qi

        violations["queue_bound"] += int(np.count_nonzero(qi > q_bound))
        violations["capacity"] += int(np.count_nonzero((b < 0) | (b > cap)))
        violations["causality"] += int(np.count_nonzero(
            params.energy_scale * outcome.wd_energy_j > np.where(b >= params.min_battery_scaled, b, 0.0) * (1 + 1e-9) + 1e-12))
        spent += outcome.hap_energy_j
        if cfg.policy is Policy.MYOPIC and spent > (t + 1) * params.hap_avg_energy_budget_j * (1 + 1e-9):
            violations["budget"] += 1
        state = outcome.next_state

    fq0, pq0 = _window_means(series["q0_bits"], cfg.moving_average_window)
    fqi, pqi = _window_means(series["mean_qi_bits"], cfg.moving_average_window)
    return RunMetrics(
        policy=cfg.policy.value,
        seed=cfg.seed,
        num_slots=n,
        sensing_rate=float(series["weighted_sensed_bits"].mean()),
        avg_hap_energy_j=float(series["e0_j"].mean()),
        avg_hap_queue_bits=float(series["q0_bits"].mean()),
        avg_wd_queue_bits=float((qi_sum / n).mean()),
        max_wd_queue_bits=float(series["max_qi_bits"].max()),
        final_deficit_queue=float(state.deficit_queue),
        final_window_q0=fq0,
        prev_window_q0=pq0,
        final_window_qi=fqi,
        prev_window_qi=pqi,
        violations=violations,
        decide_time_mean_s=float(times.mean()),
        decide_time_p99_s=float(np.percentile(times, 99)),
        series=series,
        final_state=state,
        channel_trace=trace,
    )


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def placement(k: int, seed: int, index: int = 0) -> list[float]:
    """Truncated-Gaussian device distances, clipped to [2, 10] m."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_PLACEMENT_KEY, index)))
    return np.clip(rng.normal(PLACEMENT_MEAN_M, PLACEMENT_STD_M, size=k), 2.0, 10.0).tolist()


def apply_axis(params: SystemParams, wds: Sequence[WdParams], channel_params: ChannelParams, axis: str, value,
               seed: int = 0, placement_index: int = 0):
    """Return (params, wds, channel_params) with one sweep axis set to ``value``."""
    if axis not in SWEEP_AXES:
        raise InvalidParameterError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    wds = list(wds)
    if axis == "V":
        params = replace(params, lyapunov_v=float(value))
    elif axis == "sigma":
        channel_params = replace(channel_params, pathloss_exponent=float(value))
    elif axis == "e0th":
        params = replace(params, hap_avg_energy_budget_j=float(value))
    elif axis == "r_max":
        params = replace(params, max_sense_bits=float(value))
    else:
        k = int(value)
        params = replace(params, num_devices=k)
        template = wds[0]
        wds = [replace(template, distance_m=d) for d in placement(k, seed, placement_index)]
    return params, resolve_capacities(params, wds, force=True), channel_params


@dataclass(frozen=True)
class _Job:
    params: SystemParams
    wds: tuple
    channel_params: ChannelParams
    cfg: RunConfig
    meta: tuple


def _run_job(job: _Job) -> dict:
    m = run(job.params, list(job.wds), job.channel_params, job.cfg)
    row = dict(job.meta)
    row.update({
        "sensing_rate_bits": m.sensing_rate,
        "avg_hap_energy_j": m.avg_hap_energy_j,
        "avg_hap_queue_bits": m.avg_hap_queue_bits,
        "avg_wd_queue_bits": m.avg_wd_queue_bits,
        "max_wd_queue_bits": m.max_wd_queue_bits,
        "final_deficit_queue": m.final_deficit_queue,
        "violations": sum(m.violations.values()),
        "decide_time_mean_s": m.decide_time_mean_s,
    })
    return row


def sweep(params: SystemParams, wds: Sequence[WdParams], channel_params: ChannelParams, cfg: RunConfig, axis: str,
          values: Iterable, seeds: Iterable[int], policies: Sequence[Policy] = tuple(Policy),
          placements: int = 4, jobs: int = 1) -> list[dict]:
    """Independent runs over values x seeds x policies (x placements when sweeping K).

    Rows come back in a fixed order regardless of ``jobs``.
    """
    values, seeds = list(values), list(seeds)
    if axis not in SWEEP_AXES:
        raise InvalidParameterError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    if not values:
        raise InvalidParameterError("sweep needs at least one value")
    n_place = placements if axis == "K" else 1
    todo = []
    for value in values:
        for seed in seeds:
            for pl in range(n_place):
                p, w, c = apply_axis(params, wds, channel_params, axis, value, seed, pl)
                for pol in policies:
                    pol = Policy(pol)
                    meta = (("policy", pol.value), ("axis", axis), ("value", value), ("seed", seed),
                            ("placement", pl))
                    todo.append(_Job(p, tuple(w), c, replace(cfg, policy=pol, seed=seed), meta))
    log.info("sweep over %s: %d runs", axis, len(todo))
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_job, todo))
    return [_run_job(j) for j in todo]


def aggregate(rows: Sequence[dict], key: str = "sensing_rate_bits") -> dict:
    """Mean of ``key`` per (policy, value), averaged over seeds and placements."""
    acc: dict[tuple, list] = {}
    for row in rows:
        acc.setdefault((row["policy"], row["value"]), []).append(row[key])
    return {k: float(np.mean(v)) for k, v in acc.items()}
