import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import oracle
from dcreg import diffcore as dc


def run(root, **inputs):
    out, tape = dc.forward(root, inputs)
    return out, tape


def test_identity_graph():
    out, _ = run(dc.var("x"), x=np.array([1.0, 2.0, 3.0]))
    assert np.array_equal(out.array(), [1, 2, 3])


def test_matmul_identity():
    out, _ = run(dc.matmul(dc.var("W"), dc.var("x")), W=np.eye(2), x=np.array([3.0, 4.0]))
    assert np.array_equal(out.array(), [3, 4])


def test_softplus_zero():
    out, _ = run(dc.activation(dc.var("x"), "softplus", 1.0), x=np.array(0.0))
    assert abs(out.array().item() - math.log(2.0)) < 1e-15


def test_backward_square():
    x = dc.var("x")
    _, tape = run(x * x, x=np.array(3.0))
    assert dc.backward(tape)["x"].item() == 6.0


def test_backward_softplus_at_zero():
    _, tape = run(dc.activation(dc.var("x"), "softplus", 1.0), x=np.array(0.0))
    assert dc.backward(tape)["x"].item() == 0.5


def test_relu_subgradient_convention():
    _, tape = run(dc.reduce_sum(dc.activation(dc.var("x"), "relu")), x=np.array([-1.0, 2.0]))
    assert np.array_equal(dc.backward(tape)["x"], [0.0, 1.0])


def test_finite_diff_examples():
    g = dc.finite_diff_gradient(lambda x: 0.5 * float(x @ x), np.array([1.0, -2.0]), 1e-5)
    assert np.allclose(g, [1, -2], atol=1e-6)
    g = dc.finite_diff_gradient(lambda x: float(np.abs(x).sum()), np.array([2.0]), 1e-5)
    assert np.allclose(g, [1.0], atol=1e-9)
    with pytest.raises(ValueError):
        dc.finite_diff_gradient(lambda x: 0.0, np.zeros(1), 0.0)


def test_shape_error():
    with pytest.raises(dc.ShapeError):
        run(dc.matmul(dc.var("a"), dc.var("b")), a=np.ones((2, 3)), b=np.ones((2, 3)))


def test_backward_before_forward():
    with pytest.raises(dc.TapeError):
        dc.Tape().backward()


def _mlp():
    x, W, b = dc.var("x"), dc.var("W"), dc.var("b")
    h = dc.activation(dc.add(dc.matmul(x, W), b), "softplus", 2.0)
    return dc.reduce_sum(dc.mul(h, h))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-2, 2)), arrays(np.float64, (4, 5), elements=st.floats(-2, 2)),
       arrays(np.float64, (5,), elements=st.floats(-2, 2)))
def test_reverse_mode_matches_finite_differences(x, W, b):
    root = _mlp()
    _, tape = run(root, x=x, W=W, b=b)
    g = dc.backward(tape)
    for name, val in (("x", x), ("W", W), ("b", b)):
        def f(v, name=name):
            inp = {"x": x, "W": W, "b": b, name: v}
            return dc.forward(root, inp)[0].array().item()
        fd = oracle.fd_gradient(f, val, 1e-6)
        assert np.allclose(g[name], fd, rtol=1e-5, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (6,), elements=st.floats(-30, 30)), st.sampled_from(["relu", "leaky_relu", "softplus"]))
def test_activations_convex_nondecreasing(t, kind):
    param = {"relu": 0.0, "leaky_relu": 0.2, "softplus": 3.0}[kind]
    f, d, _ = dc.ACTIVATIONS[kind]
    s = np.sort(t)
    v = f(s, param)
    assert np.all(np.diff(v) >= -1e-12)
    assert np.all(d(s, param) >= 0)
    mid = f(0.5 * (s[:-1] + s[1:]), param)
    assert np.all(mid <= 0.5 * (v[:-1] + v[1:]) + 1e-12)


def test_softplus_stable_for_large_inputs():
    out, _ = run(dc.activation(dc.var("x"), "softplus", 10.0), x=np.array([-1e4, 1e4]))
    assert out.is_finite() and out.array()[1] == 1e4
