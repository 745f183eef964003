import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crlkit.errors import ConfigurationError
from crlkit.nn import (AdamState, MLPSpec, adam_step, mlp_backward, mlp_forward, mlp_forward_cache,
                       mlp_grad, unpack, xavier_init)


def fd_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        g[i] = (f(xp) - f(xm)) / (2 * eps)
    return g


def test_layout_and_param_count():
    spec = MLPSpec(3, (4, 5), 2)
    assert spec.n_params == 3 * 4 + 4 + 4 * 5 + 5 + 5 * 2 + 2
    layers = unpack(np.arange(spec.n_params, dtype=float), spec)
    assert [W.shape for W, _ in layers] == [(3, 4), (4, 5), (5, 2)]
    assert [b.shape for _, b in layers] == [(4,), (5,), (2,)]


def test_bad_spec_rejected():
    with pytest.raises(ConfigurationError):
        MLPSpec(3, (4,), 2, "tanh")
    with pytest.raises(ConfigurationError):
        mlp_forward(np.zeros(3), MLPSpec(3, (4,), 2), np.zeros(3))


def test_xavier_bounds_and_zero_bias():
    spec = MLPSpec(30, (40,), 20)
    p = xavier_init(spec, 0)
    (W1, b1), (W2, b2) = p.layers()
    assert np.abs(W1).max() <= np.sqrt(6 / 70) and np.abs(W2).max() <= np.sqrt(6 / 60)
    assert not b1.any() and not b2.any()
    # uniform on [-a, a] has variance a^2 / 3
    assert np.var(W1) == pytest.approx(6 / 70 / 3, rel=0.1)


def test_forward_matches_manual():
    spec = MLPSpec(2, (3,), 1, "relu")
    p = xavier_init(spec, 1).flat
    (W1, b1), (W2, b2) = unpack(p, spec)
    x = np.array([[0.3, -0.7], [1.0, 2.0]])
    want = np.maximum(x @ W1 + b1, 0) @ W2 + b2
    np.testing.assert_allclose(mlp_forward(p, spec, x), want)
    np.testing.assert_allclose(mlp_forward(p, spec, x[0]), want[0])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), act=st.sampled_from(["elu", "relu"]))
def test_backward_matches_finite_differences(seed, act):
    rng = np.random.default_rng(seed)
    spec = MLPSpec(3, (5, 4), 2, act)
    p = xavier_init(spec, rng).flat + 0.1 * rng.standard_normal(spec.n_params)
    x = rng.standard_normal((6, 3))
    up = rng.standard_normal((6, 2))
    f = lambda q: float(np.sum(mlp_forward(q, spec, x) * up))
    g, gx = mlp_grad(p, spec, x, up)
    fd = fd_grad(f, p)
    assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(fd))
    fx = lambda z: float(np.sum(mlp_forward(p, spec, z.reshape(6, 3)) * up))
    np.testing.assert_allclose(gx.ravel(), fd_grad(fx, x.ravel()), atol=1e-6)


def test_backward_without_input_grad():
    spec = MLPSpec(3, (4,), 2)
    p = xavier_init(spec, 0).flat
    _, cache = mlp_forward_cache(p, spec, np.ones((2, 3)))
    g, gx = mlp_backward(p, spec, cache, np.ones((2, 2)), need_x=False)
    assert gx is None and g.shape == p.shape


def test_adam_matches_textbook_update():
    rng = np.random.default_rng(0)
    p = rng.standard_normal(7)
    ref = p.copy()
    st_ = AdamState.zeros(7)
    m = np.zeros(7)
    v = np.zeros(7)
    b1, b2, eps, lr = 0.9, 0.999, 1e-8, 1e-2
    for t in range(1, 6):
        g = rng.standard_normal(7)
        adam_step(st_, p, g, lr)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        ref -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    np.testing.assert_allclose(p, ref, rtol=1e-12, atol=1e-15)
    assert st_.step_count == 5


def test_adam_first_step_is_lr_times_sign():
    p = np.zeros(3)
    adam_step(AdamState.zeros(3), p, np.array([2.0, -0.5, 1e-3]), 0.1)
    np.testing.assert_allclose(p, [-0.1, 0.1, -0.1], rtol=1e-4)
