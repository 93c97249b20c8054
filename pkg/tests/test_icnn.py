import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracle
from dcreg.icnn import (DcRegularizer, IcnnParams, checkpoint_bytes, dc_eval, dc_eval_batch, dc_grad,
                        estimate_smoothness, icnn_eval, icnn_eval_batch, icnn_grad_x, icnn_grad_x_batch, init_icnn,
                        load_checkpoint, project_nonneg, quadratic_icnn, save_checkpoint)
from dcreg.stargeom import jensen_check
from dcreg.train import Adam


def hand_net(act="relu", param=0.0, W1=((2.0,), (3.0,))):
    return IcnnParams(
        Wt=[np.array([[1.0, 0.0], [0.0, -1.0]]), np.array([[1.0], [1.0]])],
        W=[None, np.array(W1)],
        b=[np.array([0.0, 1.0]), np.array([-1.0])],
        w_out=np.array([0.5]),
        activation=act,
        act_param=param if act != "leaky_relu" else (param or 1.0),
    )


def test_zero_network():
    p = init_icnn(3, [4, 4], "relu", 0.0, 0)
    p = p.with_named({k: np.zeros_like(v) for k, v in p.named().items()})
    for x in np.random.default_rng(0).standard_normal((5, 3)):
        assert icnn_eval(p, x) == 0.0
        assert np.array_equal(icnn_grad_x(p, x), np.zeros(3))


def test_one_layer_relu_by_hand():
    p = IcnnParams([np.array([[1.0]])], [None], [np.zeros(1)], np.array([1.0]), "relu", 0.0)
    assert icnn_eval(p, np.array([-2.0])) == 0.0
    assert icnn_eval(p, np.array([3.0])) == 3.0


def test_depth_two_by_hand():
    # layer 1: relu([1, -1] + [0, 1]) = [1, 0]; layer 2: relu(2 + 2 - 1) = 3; output 0.5 * 3
    assert icnn_eval(hand_net(), np.array([1.0, 1.0])) == 1.5


def test_linear_network_gradient():
    p = hand_net("leaky_relu", 1.0)
    want = (p.Wt[0] @ p.W[1] + p.Wt[1]) @ p.w_out
    for x in np.random.default_rng(0).standard_normal((4, 2)):
        assert np.allclose(icnn_grad_x(p, x), want, atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_gradient_matches_finite_differences(seed, d):
    p = init_icnn(d, [6, 5], "softplus", 2.0, seed)
    x = np.random.default_rng(seed).standard_normal(d)
    fd = oracle.fd_gradient(lambda z: icnn_eval(p, z), x, 1e-6)
    assert np.allclose(icnn_grad_x(p, x), fd, rtol=1e-5, atol=1e-7)


def test_batch_matches_single():
    p = init_icnn(3, [5, 5, 5], "leaky_relu", 0.2, 4)
    X = np.random.default_rng(1).standard_normal((7, 3))
    assert np.allclose(icnn_eval_batch(p, X), [icnn_eval(p, x) for x in X])
    assert np.allclose(icnn_grad_x_batch(p, X), [icnn_grad_x(p, x) for x in X])


def test_project_nonneg_examples():
    p = hand_net(W1=((-1.0,), (2.0,)))
    q = project_nonneg(p)
    assert np.array_equal(q.W[1], [[0.0], [2.0]])
    r = project_nonneg(q)
    for k, v in q.named().items():
        assert r.named()[k].tobytes() == v.tobytes()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-4, 1.0))
def test_projection_after_optimizer_step(seed, lr):
    r = DcRegularizer(init_icnn(2, [4, 4], "softplus", 1.0, seed), init_icnn(2, [4, 4], "softplus", 1.0, seed + 1))
    rng = np.random.default_rng(seed)
    opt = Adam(lr)
    for _ in range(3):
        grads = {k: rng.standard_normal(v.shape) * 10 for k, v in r.named().items()}
        r = r.with_named(opt.step(r.named(), grads)).projected()
        for net, pfx in ((r.r1, "r1."), (r.r2, "r2.")):
            for name in net.constrained_names(pfx):
                assert np.all(r.named()[name] >= 0)


def test_random_networks_are_convex():
    for seed in range(5):
        for act, prm in (("leaky_relu", 0.2), ("softplus", 1.0), ("relu", 0.0)):
            p = init_icnn(2, [8, 8], act, prm, seed)
            assert jensen_check(lambda X: icnn_eval_batch(p, X), triples=2000, seed=seed).passed


def test_dc_eval_examples():
    p = init_icnn(2, [4], "softplus", 1.0, 0)
    x = np.array([1.0, 1.0])
    assert dc_eval(DcRegularizer(p, mode="convex"), x) == icnn_eval(p, x)
    X = np.random.default_rng(0).standard_normal((6, 2))
    assert np.all(dc_eval_batch(DcRegularizer(p, p.copy()), X) == 0.0)
    wc = DcRegularizer(p, mode="weakly_convex", rho=2.0)
    assert dc_eval(wc, x) == icnn_eval(p, x) - 2.0
    g1, g2 = dc_grad(wc, x)
    assert np.array_equal(g2, 2.0 * x)


def test_dc_regularizer_validation():
    p = init_icnn(2, [3], "softplus", 1.0, 0)
    with pytest.raises(ValueError):
        DcRegularizer(p, mode="dc")
    with pytest.raises(ValueError):
        DcRegularizer(p, mode="nope")
    with pytest.raises(ValueError):
        IcnnParams([np.ones((1, 1))], [None], [np.zeros(1)], np.ones(1), "leaky_relu", 1.5)


def test_smoothness_of_quadratic_network():
    est = estimate_smoothness(quadratic_icnn(3, 0.01), (-1.0, 1.0), 200, 0)
    assert abs(est.L_hat - 1.0) < 0.05


def test_smoothness_of_linear_network():
    # softplus far in its linear regime is exactly affine in floating point
    p = IcnnParams([np.zeros((2, 1)), np.array([[0.5], [-1.0]])], [None, np.array([[1.0]])],
                   [np.zeros(1), np.array([1000.0])], np.array([1.0]), "softplus", 1.0)
    assert estimate_smoothness(p, (-1.0, 1.0), 50, 0).L_hat == 0.0


def test_smoothness_monotone_in_pairs():
    p = init_icnn(2, [8, 8], "softplus", 3.0, 1)
    vals = [estimate_smoothness(p, (-2, 2), k, 5).L_hat for k in (5, 20, 80, 200)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        estimate_smoothness(init_icnn(2, [3]), (-1, 1))


def test_checkpoint_roundtrip(tmp_path):
    for mode in ("dc", "convex", "weakly_convex"):
        r = DcRegularizer(init_icnn(3, [4, 5], "softplus", 2.0, 0),
                          init_icnn(3, [4, 5], "softplus", 2.0, 1) if mode == "dc" else None, mode, 0.3)
        h = save_checkpoint(tmp_path / "a.ckpt", r)
        r2 = load_checkpoint(tmp_path / "a.ckpt")
        assert checkpoint_bytes(r2) == checkpoint_bytes(r)
        assert len(h) == 64
    raw = bytearray((tmp_path / "a.ckpt").read_bytes())
    raw[40] ^= 1
    (tmp_path / "b.ckpt").write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="checksum"):
        load_checkpoint(tmp_path / "b.ckpt")
