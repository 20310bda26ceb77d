import numpy as np
import pytest

from snnloop.analysis import rollout
from snnloop.crpi import CrpiState, begin_decision_step, end_decision_step, residual_error
from snnloop.envs import make_env
from snnloop.errors import ProtocolError, ValidationError
from snnloop.spiking import calibrate_thresholds, convert, infer

from .conftest import identity_net, random_policy


def one_neuron_net(kind="if"):
    return convert(identity_net(), kind, 8, [np.array([1.0])])


def seeded_state(alpha, v0, vT, sx):
    return CrpiState(alpha, k=1, v0_prev=[np.array([v0])], vT_prev=[np.array([vT])],
                     sumx_prev=[np.array([sx])])


def test_alpha_range_validated():
    for bad in (-0.1, 1.01):
        with pytest.raises(ValidationError):
            CrpiState(bad)


def test_alpha_zero_ignores_history():
    net = one_neuron_net()
    begin_decision_step(net, seeded_state(0.0, 0.5, 0.9, 2.0))
    assert net.layers[0].v.tolist() == [0.5]


def test_carry_examples():
    net = one_neuron_net()
    begin_decision_step(net, seeded_state(1.0, 0.5, 0.9, 2.0))
    assert net.layers[0].v[0] == pytest.approx(0.9)
    begin_decision_step(net, seeded_state(1.0, 0.5, 0.1, 0.0))
    assert net.layers[0].v.tolist() == [0.5]


def test_upper_clip_and_symmetric_variant():
    net = one_neuron_net()
    begin_decision_step(net, seeded_state(1.0, 0.0, 3.0, 5.0))
    assert net.layers[0].v.tolist() == [1.0]
    st = seeded_state(1.0, 0.9, 0.0, 5.0)
    begin_decision_step(net, st)
    assert net.layers[0].v[0] == pytest.approx(0.0, abs=1e-15)
    st.symmetric_clip = True
    st.vT_prev = [np.array([-3.0])]
    begin_decision_step(net, st)
    assert net.layers[0].v.tolist() == [-1.0]


def test_first_step_is_fresh():
    net = one_neuron_net()
    net.layers[0].v[:] = 7.0
    begin_decision_step(net, CrpiState(0.8))
    assert net.layers[0].v.tolist() == [0.5]


def test_auxiliary_state_resets_each_step():
    net = convert(identity_net(), "dc", 4, [np.array([1.0])])
    L = net.layers[0]
    L.c[:] = 3.0
    L.m_r[:] = 2.0
    begin_decision_step(net, seeded_state(1.0, 0.0, 0.4, 1.0))
    assert L.c.tolist() == [0.0] and L.m_r.tolist() == [0.0] and L.t == 0


def test_end_step_captures_and_guards():
    net = one_neuron_net()
    st = CrpiState(0.5)
    with pytest.raises(ProtocolError):
        end_decision_step(net, st)
    infer(net, [0.3], st)
    assert st.k == 1
    assert np.array_equal(st.vT_prev[0], net.layers[0].v)
    with pytest.raises(ProtocolError):
        end_decision_step(net, st)


def test_captured_sum_matches_trace_replay():
    p = random_policy([3, 6, 5, 1], 2)
    th = calibrate_thresholds(p, np.random.default_rng(0).normal(size=(30, 3)))
    net = convert(p, "if", 8, th)
    st = CrpiState(0.7)
    obs = np.array([0.2, -0.5, 0.9])
    infer(net, obs, st)
    infer(net, obs, st)
    # replay the second decision step by hand from its recorded start membrane
    v = [v0.copy() for v0 in st.v0_prev]
    sums = [np.zeros_like(x) for x in v]
    for _ in range(8):
        cur = net.layers[0].weights @ obs + net.layers[0].bias
        for i, L in enumerate(net.layers):
            m = v[i] + cur
            x = np.where(m >= L.theta, L.theta, 0.0)
            v[i] = m - x
            sums[i] += x
            if i + 1 < len(net.layers):
                cur = net.layers[i + 1].weights @ x + net.layers[i + 1].bias
    for a, b in zip(sums, st.sumx_prev):
        np.testing.assert_array_equal(a, b)


def test_residual_error_examples():
    assert residual_error([0.3], [0.3], 4).tolist() == [0.0]
    assert residual_error([0.5], [0.9], 8)[0] == pytest.approx(0.05)
    assert residual_error([0.5], [0.9], 16)[0] == pytest.approx(0.025)
    with pytest.raises(ValidationError):
        residual_error([0.0], [0.0], 0)


@pytest.mark.parametrize("kind", ["if", "snm", "mt:4", "dc"])
def test_alpha_zero_rollout_equivalence_short(kind, di_setup):
    env, policy, states = di_setup
    net = convert(policy, kind, 4, calibrate_thresholds(policy, states))
    base = rollout(env, net, 40, (1, 0))
    n1 = sum(l.spike_events for l in net.layers)
    crpi = rollout(env, net, 40, (1, 0), alpha=0.0)
    n2 = sum(l.spike_events for l in net.layers) - n1
    assert np.array_equal(base.actions, crpi.actions)
    assert np.array_equal(base.rewards, crpi.rewards)
    assert base.states == crpi.states
    assert n1 == n2


def test_clip_containment_in_closed_loop():
    env = make_env("double_integrator", horizon=60)
    p = random_policy([2, 16, 16, 1], 3)
    th = calibrate_thresholds(p, np.random.default_rng(0).uniform(-1, 1, size=(200, 2)))
    for kind in ("if", "snm", "mt:4", "dc"):
        net = convert(p, kind, 4, th)
        for alpha in (0.25, 1.0):
            st = CrpiState(alpha)
            s = env.reset((0, 1))
            for _ in range(60):
                a = infer(net, env.observe(s), st)
                for L in net.layers:
                    assert np.all(L.v0 >= 0) and np.all(L.v0 <= L.theta)
                s, _ = env.step(s, a)


def test_first_decision_identical_for_any_alpha():
    p = random_policy([2, 16, 1], 3)
    net = convert(p, "if", 8, calibrate_thresholds(p, np.eye(2)))
    obs = np.array([0.4, -0.2])
    ref = infer(net, obs)
    for alpha in (0.0, 0.3, 1.0):
        assert infer(net, obs, CrpiState(alpha)).tobytes() == ref.tobytes()
