import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mpbn_snn.errors import ConfigError, DimensionError
from mpbn_snn.neuron import FiringRule, LifConfig, LifState, fire_reset, mp_update, surrogate_grad


def test_lif_config_defaults_and_validation():
    cfg = LifConfig()
    assert cfg.tau == 0.25 and cfg.v_th == 0.5
    with pytest.raises(ConfigError):
        LifConfig(tau=1.0)
    with pytest.raises(ConfigError):
        LifConfig(v_th=0.0)


def test_mp_update_examples():
    c = np.array([0.3, -0.2])
    assert np.array_equal(mp_update(np.zeros(2), c, 0.25), c)
    assert mp_update(np.array([0.4]), np.array([0.1]), 0.25)[0] == pytest.approx(0.2, abs=1e-15)
    with pytest.raises(DimensionError):
        mp_update(np.zeros(2), np.zeros(3), 0.25)


def test_mp_update_scalar_loop_oracle():
    rng = np.random.default_rng(0)
    u, c = rng.normal(size=50), rng.normal(size=50)
    got = mp_update(u, c, 0.25)
    want = np.array([0.25 * a + b for a, b in zip(u.tolist(), c.tolist())])
    assert np.array_equal(got, want)


def test_fire_reset_examples():
    rule = FiringRule.scalar(0.5, np.float64)
    o, u = fire_reset(np.array([0.6]), rule)
    assert o[0] == 1 and u[0] == 0
    o, u = fire_reset(np.array([0.5]), rule)
    assert o[0] == 0 and u[0] == 0.5
    flipped = FiringRule(np.array(0.5), np.array(-1, dtype=np.int8))
    o, u = fire_reset(np.array([0.2]), flipped)
    assert o[0] == 1 and u[0] == 0


def test_firing_rule_validation():
    with pytest.raises(ConfigError):
        FiringRule(np.array([np.inf]))
    with pytest.raises(ConfigError):
        FiringRule(np.array([0.5]), np.array([0], dtype=np.int8))
    with pytest.raises(DimensionError):
        FiringRule(np.array([0.5, 0.5]), np.array([1], dtype=np.int8))


def test_surrogate_examples():
    assert surrogate_grad(np.array(0.5)) == 1.0
    assert surrogate_grad(np.array(-0.1)) == 0.0
    assert surrogate_grad(np.array(1.0)) == 1.0
    assert surrogate_grad(np.array(0.0)) == 1.0
    assert surrogate_grad(np.array(1.0 + 1e-12)) == 0.0


def test_surrogate_scalar_oracle():
    u = np.random.default_rng(1).uniform(-1, 2, 200)
    want = np.array([1.0 if 0 <= v <= 1 else 0.0 for v in u.tolist()])
    assert np.array_equal(surrogate_grad(u), want)


@settings(max_examples=200)
@given(seed=st.integers(0, 2**31 - 1), dtype=st.sampled_from([np.float32, np.float64]))
def test_reset_and_binary_spikes(seed, dtype):
    rng = np.random.default_rng(seed)
    u_pre = rng.normal(0.5, 1.0, (3, 4)).astype(dtype)
    th = rng.normal(0.5, 0.3, (3, 1)).astype(dtype)
    direction = rng.choice(np.array([-1, 1], dtype=np.int8), size=(3, 1))
    o, u = fire_reset(u_pre, FiringRule(th, direction))
    assert set(np.unique(o)) <= {0.0, 1.0}
    assert np.all(u[o == 1] == 0)
    assert np.array_equal(u[o == 0], u_pre[o == 0])
    want = (direction * u_pre > direction * th).astype(dtype)
    assert np.array_equal(o, want)


@settings(max_examples=100)
@given(seed=st.integers(0, 2**31 - 1), pivot=st.floats(-2, 2))
def test_direction_mirror(seed, pivot):
    rng = np.random.default_rng(seed)
    u_pre = rng.normal(size=20)
    th = rng.normal(size=20)
    o, _ = fire_reset(u_pre, FiringRule(th, np.ones(20, dtype=np.int8)))
    mirrored, _ = fire_reset(2 * pivot - u_pre, FiringRule(2 * pivot - th, -np.ones(20, dtype=np.int8)))
    # reflection is exact up to rounding; skip near-ties
    ok = np.abs(u_pre - th) > 1e-9
    assert np.array_equal(o[ok], mirrored[ok])


def test_geometric_decay_without_input():
    u0 = np.random.default_rng(2).normal(size=10)
    state = LifState(u0.copy())
    rule = FiringRule.scalar(1e9, np.float64)
    for k in range(1, 8):
        state.step(np.zeros(10), 0.25, rule)
        assert np.max(np.abs(state.u - 0.25 ** k * u0)) < 1e-12
    assert len(state.u_pre_history) == len(state.spike_history) == 7
