import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wpmec.model import Action, ChannelState, SystemState, WdParams, capacity_of
from wpmec.physics import (InfeasibleActionError, edge_compute, energy_harvested, local_compute, offload,
                           step_queues)

WD = WdParams()


def test_eh_zero_input():
    assert energy_harvested(0.0, 1e-3, WD) == 0.0


def test_eh_saturation():
    sat = (2.463 * 0.826 - 1.635) / 0.826
    assert sat == pytest.approx(0.48358, abs=1e-5)
    assert float(energy_harvested(1e12, 1.0, WD)) == pytest.approx(sat, rel=1e-9)


def test_eh_example():
    # (2.463*0.003 + 1.635) / 0.829 - 1.635 / 0.826
    assert float(energy_harvested(3.0, 1e-3, WD)) == pytest.approx(1.7496e-3, rel=1e-3)


def test_eh_slot_scaling():
    assert float(energy_harvested(3.0, 1e-3, WD, scale=5.0)) == pytest.approx(5 * float(energy_harvested(3.0, 1e-3, WD)))


@st.composite
def eh_triples(draw):
    a3 = draw(st.floats(0.01, 10.0))
    a2 = draw(st.floats(0.0, 10.0))
    a1 = a2 / a3 * (1 + 1e-12) + draw(st.floats(0.0, 10.0))
    return WdParams(eh_a1=a1, eh_a2=a2, eh_a3=a3)


@given(eh_triples(), st.floats(1e-7, 1.0), st.floats(0, 3), st.floats(0, 3))
def test_eh_concave_and_monotone(wd, h, pa, pb):
    e = lambda p: float(energy_harvested(p, h, wd))
    assert e(0.5 * (pa + pb)) >= 0.5 * (e(pa) + e(pb)) - 1e-12
    lo, hi = sorted((pa, pb))
    assert e(hi) >= e(lo) - 1e-15


def test_eh_concave_1000_triples():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        a3 = rng.uniform(0.01, 10)
        a2 = rng.uniform(0, 10)
        wd = WdParams(eh_a1=a2 / a3 + rng.uniform(0, 10), eh_a2=a2, eh_a3=a3)
        h = 10 ** rng.uniform(-6, 0)
        pa, pb = rng.uniform(0, 3, 2)
        e = lambda p: float(energy_harvested(p, h, wd))
        assert e(0.5 * (pa + pb)) >= 0.5 * (e(pa) + e(pb)) - 1e-12


def test_local_compute(k1):
    p = k1[0]
    assert local_compute(0.0, WD, p) == (0.0, 0.0)
    bits, joules = local_compute(16e6, WD, p)
    assert bits == pytest.approx(80_000) and joules == pytest.approx(2.048e-4)
    b2, j2 = local_compute(8e6, WD, p)
    assert bits / b2 == pytest.approx(2) and joules / j2 == pytest.approx(8)
    with pytest.raises(InfeasibleActionError):
        local_compute(17e6, WD, p)


def test_offload(k1):
    p = k1[0]
    assert [float(x) for x in offload(0.003, 0.0, 1e3, p)] == [0.0, 0.0]
    assert float(offload(0.0, 2.0, 1e3, p)[0]) == 0.0
    bits, joules = offload(1.0, 1.0, 1.0, p)
    assert float(bits) == pytest.approx(30_000) and float(joules) == 1.0


def test_edge_compute(k1):
    p = k1[0]
    bits, joules = edge_compute(2e9, p)
    # kappa0 f0^3 T = 1e-26 * 8e27 * 5
    assert bits == pytest.approx(1e7) and joules == pytest.approx(400.0)
    assert edge_compute(0.0, p) == (0.0, 0.0)
    f = (p.hap_avg_energy_budget_j / (p.hap_cpu_energy_coeff * p.slot_duration_s)) ** (1 / 3)
    assert edge_compute(f, p)[1] == pytest.approx(8.0)


def _channel(k, hp=1e-4, hi=1e-5):
    return ChannelState(np.full(k, hp), np.full(k, hi), 1e-10)


def test_zero_action_only_drains_deficit(k2):
    p, wds, _ = k2
    s = SystemState(3, 100.0, 50.0, [10.0, 20.0], [capacity_of(w) - 1.0 for w in wds])
    out = step_queues(s, Action.idle(2), _channel(2), p, wds)
    n = out.next_state
    assert n.hap_queue_bits == 100.0 and np.array_equal(n.wd_queue_bits, s.wd_queue_bits)
    assert np.array_equal(n.battery, s.battery)
    assert n.deficit_queue == max(50.0 - p.deficit_scale * 8.0, 0.0)
    assert n.slot == 4


def test_exact_drain_leaves_sensed_bits(k1):
    p, wds, _ = k1
    s = SystemState(0, 0.0, 0.0, [80_000.0], [capacity_of(wds[0])])
    a = Action(0.0, 0.0, [1234.0], [0.0], [16e6], [0.0])
    assert step_queues(s, a, _channel(1), p, wds).next_state.wd_queue_bits[0] == 1234.0


def test_battery_clamped_at_capacity(k1):
    p, wds, _ = k1
    s = SystemState(0, 0.0, 0.0, [0.0], [capacity_of(wds[0])])
    out = step_queues(s, Action(3.0, 0.0, [0.0], [0.0], [0.0], [0.0]), _channel(1, hp=1.0), p, wds)
    assert out.harvested_j[0] > 0
    assert out.next_state.battery[0] == capacity_of(wds[0])


@pytest.mark.parametrize("action,constraint", [
    (Action(0.0, 0.0, [0.0], [0.0], [16e6], [0.0]), "data_causality"),
    (Action(0.0, 0.0, [0.0], [0.0], [0.0], [6.0]), "time_box"),
    (Action(4.0, 0.0, [0.0], [0.0], [0.0], [0.0]), "hap_power_box"),
    (Action(0.0, 2e6, [0.0], [0.0], [0.0], [0.0]), "edge_data_causality"),
    (Action(0.0, 0.0, [6e5], [0.0], [0.0], [0.0]), "sensing_box"),
])
def test_violations_name_constraint(k1, action, constraint):
    p, wds, _ = k1
    s = SystemState(0, 0.0, 0.0, [10.0], [capacity_of(wds[0])])
    with pytest.raises(InfeasibleActionError) as err:
        step_queues(s, action, _channel(1), p, wds)
    assert err.value.constraint == constraint


def test_time_budget(k2):
    p, wds, _ = k2
    s = SystemState(0, 0.0, 0.0, [1e6, 1e6], [capacity_of(w) for w in wds])
    with pytest.raises(InfeasibleActionError) as err:
        step_queues(s, Action(0.0, 0.0, [0, 0], [0, 0], [0, 0], [3.0, 3.0]), _channel(2), p, wds)
    assert err.value.constraint == "time_budget"


def test_energy_causality(k1):
    p, wds, _ = k1
    wd = dataclasses.replace(wds[0], battery_capacity=10.0, unsafe_capacity=True)
    s = SystemState(0, 0.0, 0.0, [2e6], [5.0])
    # transmitting at 3.16 mW for 5 s costs 15.8 scaled units > 5
    with pytest.raises(InfeasibleActionError) as err:
        step_queues(s, Action(0.0, 0.0, [0.0], [wd.max_tx_power_w], [0.0], [5.0]), _channel(1), p, [wd])
    assert err.value.constraint == "energy_causality" and err.value.device == 0


def test_below_management_threshold_must_idle(k1):
    p, wds, _ = k1
    wd = dataclasses.replace(wds[0], battery_capacity=10.0, unsafe_capacity=True)
    s = SystemState(0, 0.0, 0.0, [1e6], [0.5])  # below lambda_e * B_min = 1
    with pytest.raises(InfeasibleActionError):
        step_queues(s, Action(0.0, 0.0, [1.0], [0.0], [0.0], [0.0]), _channel(1), p, [wd])
    step_queues(s, Action.idle(1), _channel(1), p, [wd])


@given(st.lists(st.floats(0, 1), min_size=6, max_size=6), st.floats(0, 5e6), st.floats(0, 4e6), st.floats(0, 4e6))
def test_conservation_and_nonnegativity(u, q0, qa, qb):
    u = np.array(u)
    from wpmec.model import default_params
    p, wds, _ = default_params(2)
    s = SystemState(0, q0, 0.0, [qa, qb], [capacity_of(w) for w in wds])
    ch = _channel(2, hi=1e-6)
    tau = np.array([u[0], u[1]]) * 2.5
    f = np.array([min(u[2] * 16e6, qa * 1000 / 5), min(u[3] * 16e6, qb * 1000 / 5)])
    room = np.array([qa, qb]) - f * 5 / 1000
    gamma = ch.offload_snr_per_watt
    pw = np.minimum(u[4:6] * wds[0].max_tx_power_w,
                    np.where(tau > 0, (2 ** np.minimum(room / (30e3 * np.maximum(tau, 1e-300)), 1000) - 1) / gamma, 0.0))
    f0 = min(u[0] * 2e9, q0 * 1000 / 5)
    a = Action(u[1] * 3, f0, [0, 0], np.clip(pw * (1 - 1e-9), 0, None), f, tau)
    out = step_queues(s, a, ch, p, wds)
    n = out.next_state
    assert n.hap_queue_bits - max(q0 - out.edge_bits, 0) == pytest.approx(out.offload_bits.sum(), abs=1e-6)
    assert (n.wd_queue_bits >= 0).all() and n.hap_queue_bits >= 0 and n.deficit_queue >= 0
    assert (n.battery >= 0).all()
