import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from mpbn_snn import tensor as K
from mpbn_snn.errors import ConfigError, DimensionError

from helpers import central_fd, naive_conv2d, rel_err, two_pass_moments


def test_conv_zero_input():
    x = np.zeros((2, 3, 5, 5))
    w = np.random.default_rng(0).normal(size=(4, 3, 3, 3))
    assert np.all(K.conv2d(x, w, padding=1) == 0)


def test_conv_scalar_weight():
    out = K.conv2d(np.ones((1, 1, 3, 3)), np.full((1, 1, 1, 1), 2.0))
    assert out.shape == (1, 1, 3, 3)
    assert np.all(out == 2.0)


def test_conv_matches_naive_loop():
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, (2, 3, 8, 8))
    w = rng.uniform(-1, 1, (4, 3, 3, 3))
    b = rng.uniform(-1, 1, 4)
    got = K.conv2d(x, w, b, stride=1, padding=1)
    want = naive_conv2d(x, w, b, 1, 1)
    assert np.max(np.abs(got - want)) < 1e-12
    assert rel_err(got, want) < 1e-6


@pytest.mark.parametrize("stride,padding", [(2, 0), (2, 1), (1, 2)])
def test_conv_strided_matches_naive_loop(stride, padding):
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, (1, 2, 7, 7))
    w = rng.uniform(-1, 1, (3, 2, 3, 3))
    assert np.max(np.abs(K.conv2d(x, w, None, stride, padding) - naive_conv2d(x, w, None, stride, padding))) < 1e-12


def test_conv_shape_errors():
    with pytest.raises(DimensionError):
        K.conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)))
    with pytest.raises(ConfigError):
        K.conv2d(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 3, 3)), stride=2)
    with pytest.raises(DimensionError):
        K.conv2d_backward(np.zeros((1, 1, 3, 3)), np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 3, 3)))


def test_conv_backward_zero_grad():
    rng = np.random.default_rng(3)
    x, w = rng.normal(size=(2, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3))
    gi, gw, gb = K.conv2d_backward(np.zeros((2, 3, 5, 5)), x, w, 1, 1)
    assert not gi.any() and not gw.any() and not gb.any()


def test_conv_backward_1x1_closed_form():
    rng = np.random.default_rng(4)
    x, w = rng.normal(size=(3, 2, 4, 4)), rng.normal(size=(5, 2, 1, 1))
    g = rng.normal(size=(3, 5, 4, 4))
    _, gw, _ = K.conv2d_backward(g, x, w)
    want = np.zeros((5, 2))
    for o in range(5):
        for c in range(2):
            want[o, c] = np.sum(g[:, o] * x[:, c])
    assert np.allclose(gw[:, :, 0, 0], want, rtol=1e-12, atol=1e-12)


def _conv_fd_case(seed, n, c, o, h, k, stride, padding):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (n, c, h, h))
    w = rng.uniform(-1, 1, (o, c, k, k))
    b = rng.uniform(-1, 1, o)
    out = K.conv2d(x, w, b, stride, padding)
    proj = rng.normal(size=out.shape)

    def loss():
        return float(np.sum(K.conv2d(x, w, b, stride, padding) * proj))

    gi, gw, gb = K.conv2d_backward(proj, x, w, stride, padding)
    return [(gi, central_fd(loss, x, 1e-4)), (gw, central_fd(loss, w, 1e-4)),
            (gb, central_fd(loss, b, 1e-4))]


def test_conv_backward_finite_difference():
    for got, want in _conv_fd_case(5, 2, 3, 4, 6, 3, 1, 1):
        assert rel_err(got, want) < 1e-6


@settings(max_examples=100)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 2), c=st.integers(1, 2),
       o=st.integers(1, 3), k=st.sampled_from([1, 3]), stride=st.integers(1, 2),
       padding=st.integers(0, 1), h=st.integers(3, 6))
def test_conv_backward_fd_property(seed, n, c, o, k, stride, padding, h):
    assume((h + 2 * padding - k) % stride == 0)
    for got, want in _conv_fd_case(seed, n, c, o, h, k, stride, padding):
        assert rel_err(got, want) < 1e-6


def test_linear_examples():
    x = np.random.default_rng(0).normal(size=(4, 3))
    assert np.array_equal(K.linear(x, np.eye(3), np.zeros(3)), x)
    out = K.linear(np.array([[1.0, 2.0, 3.0]]), np.ones((2, 3)))
    assert np.all(out == 6.0)
    with pytest.raises(DimensionError):
        K.linear(x, np.ones((2, 4)))


@settings(max_examples=100)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 4), din=st.integers(1, 5), dout=st.integers(1, 4))
def test_linear_backward_fd_property(seed, n, din, dout):
    rng = np.random.default_rng(seed)
    x, w, b = rng.normal(size=(n, din)), rng.normal(size=(dout, din)), rng.normal(size=dout)
    proj = rng.normal(size=(n, dout))

    def loss():
        return float(np.sum(K.linear(x, w, b) * proj))

    gi, gw, gb = K.linear_backward(proj, x, w)
    assert rel_err(gi, central_fd(loss, x, 1e-4)) < 1e-6
    assert rel_err(gw, central_fd(loss, w, 1e-4)) < 1e-6
    assert rel_err(gb, central_fd(loss, b, 1e-4)) < 1e-6


def test_moments_examples():
    m, v = K.moments(np.full((3, 4), 2.5), axes=(0, 1))
    assert m == 2.5 and v == 0
    m, v = K.moments(np.array([[1.0], [3.0]]), axes=0)
    assert m[0] == 2.0 and v[0] == 1.0
    with pytest.raises(ConfigError):
        K.moments(np.zeros(3), axes=())
    with pytest.raises(ConfigError):
        K.moments(np.zeros(3), axes=(1,))


@pytest.mark.parametrize("axes", [(0,), (0, 2, 3), (1, 2)])
def test_moments_two_pass_oracle(axes):
    x = np.random.default_rng(7).normal(3.0, 2.0, (4, 3, 2, 5))
    m, v = K.moments(x, axes)
    om, ov = two_pass_moments(x, axes)
    assert rel_err(m, om) < 1e-7
    assert rel_err(v, ov) < 1e-7


def test_maxpool_first_index_ties_and_backward():
    x = np.zeros((1, 1, 2, 2))
    out, idx = K.maxpool2d(x)
    assert out.shape == (1, 1, 1, 1) and idx[0, 0, 0, 0] == 0
    g = K.maxpool2d_backward(np.ones((1, 1, 1, 1)), idx, x.shape)
    assert g[0, 0, 0, 0] == 1 and g.sum() == 1


@settings(max_examples=100)
@given(seed=st.integers(0, 2**31 - 1))
def test_maxpool_backward_fd_property(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 2, 4, 4))
    proj = rng.normal(size=(2, 2, 2, 2))
    out, idx = K.maxpool2d(x)

    def loss():
        return float(np.sum(K.maxpool2d(x)[0] * proj))

    got = K.maxpool2d_backward(proj, idx, x.shape)
    assert rel_err(got, central_fd(loss, x, 1e-6)) < 1e-6


def test_deterministic():
    rng = np.random.default_rng(9)
    x, w = rng.normal(size=(3, 2, 6, 6)), rng.normal(size=(4, 2, 3, 3))
    a = K.conv2d(x, w, padding=1)
    b = K.conv2d(x.copy(), w.copy(), padding=1)
    assert a.tobytes() == b.tobytes()


def test_check_finite():
    with pytest.raises(FloatingPointError):
        K.check_finite(np.array([1.0, np.nan]))
