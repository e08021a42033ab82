import numpy as np
import pytest

from wpmec import leese, oracle
from wpmec.model import Action, ChannelState, SystemState, capacity_of, default_params


def _ch(k, hp=1e-4, hi=1e-5):
    return ChannelState(np.full(k, hp), np.full(k, hi), 1e-10)


def test_grid_charging_zero_deficit(k3):
    p, wds, _ = k3
    s = SystemState(0, 0.0, 0.0, [0, 0, 0], [1.0, 1.0, 1.0])
    assert oracle.grid_charging_power(s, _ch(3), p, wds, 1000)[0] == 3.0


def test_grid_charging_min_points(k1):
    p, wds, _ = k1
    with pytest.raises(ValueError):
        oracle.grid_charging_power(SystemState.initial(wds), _ch(1), p, wds, 10)


def test_grid_charging_unimodal(k3, rng):
    p, wds, cp = k3
    for _ in range(20):
        s, ch = oracle.random_instance(rng, p, wds, cp)
        v = oracle.charging_values(np.linspace(0, 3, 2001), s, ch, p, wds)
        d = np.sign(np.diff(v))
        d = d[d != 0]
        # concave: increasing then decreasing, at most one sign change
        assert np.count_nonzero(np.diff(d) != 0) <= 1


def test_grid_per_wd_behind_edge(k1):
    p, wds, _ = k1
    (f, pw), _ = oracle.grid_per_wd(1e5, 2e5, -1e8, 1e5, 3.0, p, wds[0], 100)
    assert pw == 0.0


def test_grid_per_wd_origin_feasible(k1):
    p, wds, _ = k1
    v = oracle.execution_values(0.0, 0.0, 5.0, 0.0, 1e6, -1e9, 1e5, p, wds[0])
    assert np.isfinite(v)
    _, best = oracle.grid_per_wd(0.0, 1e6, -1e9, 1e5, 5.0, p, wds[0], 50)
    assert best == 0.0


def test_joint_grid_scale_limit():
    p, wds, cp = default_params(3)
    with pytest.raises(oracle.UnsupportedScaleError):
        oracle.joint_grid_decide(SystemState.initial(wds), _ch(3), p, wds)


def test_joint_grid_zero_backlog_senses(k2):
    p, wds, _ = k2
    a, _ = oracle.joint_grid_decide(SystemState.initial(wds), _ch(2), p, wds, n=20, n_tau=11, n_p0=101)
    assert (a.sense_bits == p.max_sense_bits).all()


def test_joint_grid_k1_vs_leese(k1):
    p, wds, cp = k1
    rng = np.random.default_rng(50)
    for _ in range(50):
        s, ch = oracle.random_instance(rng, p, wds, cp)
        v = oracle.per_slot_objective(s, ch, leese.decide(s, ch, p, wds), p, wds)
        _, best = oracle.joint_grid_decide(s, ch, p, wds, n=60, n_tau=41, n_p0=2001)
        assert v >= best - 5e-3 * abs(best)


def test_refinement_is_nested(k2, rng):
    p, wds, cp = k2
    for _ in range(10):
        s, ch = oracle.random_instance(rng, p, wds, cp)
        _, coarse = oracle.joint_grid_decide(s, ch, p, wds, n=11, n_tau=6, n_p0=101)
        _, fine = oracle.joint_grid_decide(s, ch, p, wds, n=21, n_tau=11, n_p0=201)
        assert fine >= coarse


def test_oracle_result_feasible(k2, rng):
    from wpmec.physics import step_queues
    p, wds, cp = k2
    for _ in range(10):
        s, ch = oracle.random_instance(rng, p, wds, cp)
        s = SystemState(0, s.hap_queue_bits, s.deficit_queue, s.wd_queue_bits, [capacity_of(w) for w in wds])
        a, _ = oracle.joint_grid_decide(s, ch, p, wds, n=21, n_tau=11, n_p0=201)
        step_queues(s, a, ch, p, wds)


def test_oracle_detects_bad_solver(k1, rng):
    # a deliberately suboptimal action must show a gap
    p, wds, cp = k1
    s = SystemState(0, 1e5, 1.0, [2e6], [capacity_of(wds[0]) - 1e9])
    ch = _ch(1)
    good = leese.decide(s, ch, p, wds)
    bad = Action(good.hap_tx_power_w, good.hap_cpu_hz, good.sense_bits, good.wd_tx_power_w * 0.2,
                 good.wd_cpu_hz * 0.5, good.offload_time_s * 0.5)
    _, best = oracle.joint_grid_decide(s, ch, p, wds, n=40, n_tau=21, n_p0=1001)
    assert (best - oracle.per_slot_objective(s, ch, bad, p, wds)) / abs(best) > 1e-3


def test_random_instance_valid(k3, rng):
    p, wds, cp = k3
    for _ in range(50):
        s, ch = oracle.random_instance(rng, p, wds, cp)
        assert (s.battery <= np.array([capacity_of(w) for w in wds])).all()
        assert (s.wd_queue_bits <= p.lyapunov_v + p.max_sense_bits).all()
        assert (ch.wpt_gain > 0).all()
