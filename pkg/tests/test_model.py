import dataclasses
import math

import numpy as np
import pytest

from wpmec.leese import battery_threshold
from wpmec.model import (Action, ChannelParams, InvalidParameterError, SystemParams, SystemState, WdParams,
                         capacity_of, dbm_to_watt, default_params, drift_bound, linear_distances,
                         resolve_capacities)


def test_table_defaults(k8):
    p, wds, cp = k8
    assert (p.slot_duration_s, p.bandwidth_hz, p.noise_power_w) == (5.0, 30e3, 1e-10)
    assert (p.hap_max_tx_power_w, p.hap_max_cpu_hz, p.hap_cpu_energy_coeff, p.hap_cycles_per_bit) == (3.0, 2e9, 1e-26, 1000.0)
    assert (p.hap_avg_energy_budget_j, p.sensing_energy_per_bit_j, p.max_sense_bits) == (8.0, 1e-9, 512e3)
    assert (p.lyapunov_v, p.energy_scale, p.min_battery_j, p.num_devices) == (32e5, 1000.0, 1e-3, 8)
    assert p.eh_times_T is False
    for wd in wds:
        assert (wd.weight, wd.max_cpu_hz, wd.cpu_energy_coeff, wd.cycles_per_bit) == (1.0, 16e6, 1e-26, 1000.0)
        assert (wd.eh_a1, wd.eh_a2, wd.eh_a3) == (2.463, 1.635, 0.826)
        assert wd.battery_capacity == battery_threshold(p, wd)
    assert (cp.wpt_carrier_hz, cp.comms_carrier_hz, cp.antenna_gain, cp.pathloss_exponent) == (915e6, 2.4e9, 4.11, 2.4)


def test_deficit_scale_default():
    # moved off 1.0, see the project notes; still configurable
    assert SystemParams().deficit_scale == 10.0
    assert SystemParams(deficit_scale=1.0).deficit_scale == 1.0


def test_distances_k8():
    d = [wd.distance_m for wd in default_params(8)[1]]
    assert d[0] == 2.0 and d[-1] == pytest.approx(10.0)
    assert d[1] == pytest.approx(2 + 8 / 7)
    assert np.allclose(np.diff(d), 8 / 7)


def test_distances_k1():
    assert linear_distances(1) == [2.0]
    assert default_params(1)[1][0].distance_m == 2.0


def test_dbm_conversion():
    assert dbm_to_watt(5.0) == pytest.approx(3.1623e-3, rel=1e-4)
    assert default_params(8)[1][0].max_tx_power_w == pytest.approx(10 ** 0.5 * 1e-3)


def test_zero_devices_rejected():
    with pytest.raises(InvalidParameterError):
        default_params(0)


def test_defaults_deterministic():
    assert default_params(5) == default_params(5)


@pytest.mark.parametrize("a1,a2,a3", [(1.0, 2.0, 1.0), (2.0, 1.0, 0.0), (2.0, 1.0, -1.0)])
def test_bad_eh_triple(a1, a2, a3):
    with pytest.raises(InvalidParameterError):
        WdParams(eh_a1=a1, eh_a2=a2, eh_a3=a3)


def test_eh_triple_boundary_ok():
    WdParams(eh_a1=2.0, eh_a2=2.0, eh_a3=1.0)


@pytest.mark.parametrize("field,value", [("slot_duration_s", 0.0), ("noise_power_w", -1.0), ("energy_scale", 0.5),
                                         ("lyapunov_v", 0.0), ("deficit_scale", 0.0), ("num_devices", 0)])
def test_system_params_invariants(field, value):
    with pytest.raises(InvalidParameterError):
        SystemParams(**{field: value})


def test_pathloss_exponent_floor():
    with pytest.raises(InvalidParameterError):
        ChannelParams(pathloss_exponent=1.9)
    ChannelParams(pathloss_exponent=2.0)


def test_capacity_below_threshold_rejected(k1):
    p, wds, _ = k1
    low = dataclasses.replace(wds[0], battery_capacity=1.0)
    with pytest.raises(InvalidParameterError):
        resolve_capacities(p, [low])
    ok = resolve_capacities(p, [dataclasses.replace(low, unsafe_capacity=True)])
    assert capacity_of(ok[0]) == 1.0


def test_unresolved_capacity():
    with pytest.raises(InvalidParameterError):
        capacity_of(WdParams())


def test_state_invariants(k1):
    _, wds, _ = k1
    s = SystemState.initial(wds)
    assert s.hap_queue_bits == 0 and s.deficit_queue == 0
    assert s.battery[0] == capacity_of(wds[0]) and s.perturbed_battery(wds)[0] == 0
    with pytest.raises(InvalidParameterError):
        SystemState(0, -1.0, 0.0, [0.0], [1.0])
    with pytest.raises(ValueError):
        s.battery[0] = 3.0  # arrays are read-only


def test_action_idle():
    a = Action.idle(3)
    assert a.hap_tx_power_w == 0 and not a.sense_bits.any() and a.offload_time_s.shape == (3,)


def test_drift_bound_examples(k8):
    p, wds, cp = k8
    db = drift_bound(p, wds, cp, samples=20_000)
    assert db.local_max_bits[0] == pytest.approx(80_000)
    assert db.edge_max_bits == pytest.approx(1e7)
    assert db.c_constant > 0
    # D_O^max against the closed form W T E[log2(1 + a X)] = W T e^{1/a} E1(1/a) / ln 2
    from scipy.special import exp1
    a = wds[0].max_tx_power_w * 4.11 * (3e8 / (4 * math.pi * 2.4e9 * 2.0)) ** 2.4 / p.noise_power_w
    exact = p.bandwidth_hz * p.slot_duration_s * math.exp(1 / a) * exp1(1 / a) / math.log(2)
    assert db.offload_max_bits[0] == pytest.approx(exact, rel=0.02)


def test_drift_bound_zero_cpu(k1):
    p, wds, cp = k1
    wd = dataclasses.replace(wds[0], max_cpu_hz=0.0)
    db = drift_bound(p, [wd], cp, samples=1000)
    assert db.local_max_bits[0] == 0
    assert db.wd_energy_max_j[0] == pytest.approx(p.sensing_energy_per_bit_j * p.max_sense_bits + wd.max_tx_power_w * p.slot_duration_s)


@pytest.mark.parametrize("which", ["r_max", "fmax", "pmax", "p0max"])
def test_drift_bound_monotone(k3, which):
    p, wds, cp = k3
    base = drift_bound(p, wds, cp, samples=5000).c_constant
    if which == "r_max":
        p = dataclasses.replace(p, max_sense_bits=2 * p.max_sense_bits)
    elif which == "p0max":
        p = dataclasses.replace(p, hap_max_tx_power_w=2 * p.hap_max_tx_power_w)
    elif which == "fmax":
        wds = [dataclasses.replace(w, max_cpu_hz=2 * w.max_cpu_hz) for w in wds]
    else:
        wds = [dataclasses.replace(w, max_tx_power_w=2 * w.max_tx_power_w) for w in wds]
    assert drift_bound(p, wds, cp, samples=5000).c_constant >= base
