import numpy as np
import pytest

from wpmec import leese, oracle
from wpmec.baselines import eqot_decide, golden_section_max, lco_decide, myopic_decide, myopic_hap_control
from wpmec.engine import Policy, RunConfig, run
from wpmec.model import ChannelState, SystemState, capacity_of, default_params
from wpmec.physics import energy_harvested, step_queues


def _ch(k, hp=1e-4, hi=1e-5):
    return ChannelState(np.full(k, hp), np.full(k, hi), 1e-10)


def test_lco_never_offloads(k3, rng):
    p, wds, cp = k3
    for _ in range(50):
        s, ch = oracle.random_instance(rng, p, wds, cp)
        a = lco_decide(s, ch, p, wds)
        assert not a.wd_tx_power_w.any() and not a.offload_time_s.any()
        step_queues(s, a, ch, p, wds)


def test_lco_shares_charging(k3):
    p, wds, _ = k3
    s = SystemState(0, 0.0, 0.0, [0, 0, 0], [1.0, 1.0, 1.0])
    assert lco_decide(s, _ch(3), p, wds).hap_tx_power_w == 3.0


def test_lco_empty_queue_idles_cpu(k1):
    p, wds, _ = k1
    s = SystemState(0, 0.0, 0.0, [0.0], [capacity_of(wds[0]) - 1e6])
    assert lco_decide(s, _ch(1), p, wds).wd_cpu_hz[0] == 0.0


def test_eqot_k1_matches_leese_full_slot(k1, rng):
    p, wds, cp = k1
    seen = 0
    for _ in range(100):
        s, ch = oracle.random_instance(rng, p, wds, cp)
        a = leese.decide(s, ch, p, wds)
        if a.offload_time_s[0] != p.slot_duration_s:
            continue
        seen += 1
        b = eqot_decide(s, ch, p, wds)
        assert a == b or (np.array_equal(a.wd_cpu_hz, b.wd_cpu_hz) and np.array_equal(a.wd_tx_power_w, b.wd_tx_power_w))
    assert seen > 10


def test_eqot_behind_edge(k3):
    p, wds, _ = k3
    s = SystemState(0, 9e6, 0.0, [1e6, 2e6, 3e6], [capacity_of(w) - 1e8 for w in wds])
    a = eqot_decide(s, _ch(3), p, wds)
    assert not a.wd_tx_power_w.any()


def test_eqot_time_sum():
    p, wds, cp = default_params(4)
    s, ch = oracle.random_instance(np.random.default_rng(3), p, wds, cp)
    s = SystemState(0, s.hap_queue_bits, s.deficit_queue, s.wd_queue_bits, [capacity_of(w) for w in wds])
    assert eqot_decide(s, ch, p, wds).offload_time_s.sum() == pytest.approx(p.slot_duration_s)


def test_golden_section():
    assert golden_section_max(lambda x: -(x - 0.3) ** 2, 0.0, 1.0) == pytest.approx(0.3, abs=1e-8)


def test_myopic_zero_budget(k2):
    p, wds, _ = k2
    s = SystemState(0, 1e6, 0.0, [0, 0], [1.0, 1.0])
    assert myopic_hap_control(s, _ch(2), p, wds, 0.0) == (0.0, 0.0)


def test_myopic_flat_objective(k2):
    p, wds, _ = k2
    s = SystemState(0, 0.0, 0.0, [0, 0], [capacity_of(w) for w in wds])
    assert myopic_hap_control(s, _ch(2), p, wds, 1e9) == (0.0, 0.0)


def _myopic_grid(s, ch, p, wds, budget, n=2001):
    T = p.slot_duration_s
    p0 = np.linspace(0, min(p.hap_max_tx_power_w, budget / T), n)
    f_cap = min(p.hap_max_cpu_hz, s.hap_queue_bits * p.hap_cycles_per_bit / T)
    f0 = np.linspace(0, f_cap, n)
    P, F = np.meshgrid(p0, f0, indexing="ij")
    value = s.hap_queue_bits * F * T / p.hap_cycles_per_bit
    for wd, h, b in zip(wds, ch.wpt_gain, s.battery):
        value = value + p.energy_scale * (capacity_of(wd) - b) * energy_harvested(P, h, wd)
    ok = P * T + p.hap_cpu_energy_coeff * F ** 3 * T <= budget
    return float(np.where(ok, value, -np.inf).max())


def test_myopic_vs_grid(k2, rng):
    p, wds, cp = k2
    T = p.slot_duration_s
    for _ in range(30):
        s, ch = oracle.random_instance(rng, p, wds, cp)
        s = SystemState(0, rng.uniform(0, 2e7), 0.0, s.wd_queue_bits, s.battery)
        p0, f0 = myopic_hap_control(s, ch, p, wds, 8.0)
        assert p0 * T + p.hap_cpu_energy_coeff * f0 ** 3 * T <= 8.0 * (1 + 1e-9)
        value = s.hap_queue_bits * f0 * T / p.hap_cycles_per_bit + sum(
            p.energy_scale * (capacity_of(wd) - b) * float(energy_harvested(p0, h, wd))
            for wd, h, b in zip(wds, ch.wpt_gain, s.battery))
        best = _myopic_grid(s, ch, p, wds, 8.0)
        assert value >= best - 1e-3 * abs(best)


def test_myopic_cumulative_budget():
    p, wds, cp = default_params(3)
    m = run(p, wds, cp, RunConfig(num_slots=1500, policy=Policy.MYOPIC, seed=2))
    spent = np.cumsum(m.series["e0_j"])
    assert (spent <= np.arange(1, 1501) * 8.0 * (1 + 1e-9)).all()
    assert m.violations["budget"] == 0


@pytest.mark.parametrize("policy", [Policy.LCO, Policy.EQOT, Policy.MYOPIC])
def test_baselines_feasible_runs(policy):
    p, wds, cp = default_params(4)
    m = run(p, wds, cp, RunConfig(num_slots=800, policy=policy, seed=5))
    assert sum(m.violations.values()) == 0


def test_myopic_decide_feasible(k3, rng):
    p, wds, cp = k3
    for t in range(30):
        s, ch = oracle.random_instance(rng, p, wds, cp)
        a = myopic_decide(s, ch, p, wds, spent_history=0.0)
        step_queues(s, a, ch, p, wds)
