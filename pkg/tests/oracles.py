"""Independent reference computations used by the tests."""

import numpy as np

from crlkit.dynamics import Batch, Normalizer
from crlkit.hypernet import HypernetState, new_task_embedding, snapshot, total_loss_and_grads
from crlkit.nn import MLPSpec


def central_diff(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in range(len(x)):
        keep = x[i]
        x[i] = keep + eps
        hi = f()
        x[i] = keep - eps
        lo = f()
        x[i] = keep
        g[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def toy_hypernet_problem(seed, squared):
    """A task-2 hypernetwork (regularizer active) with < 500 parameters in total."""
    rng = np.random.default_rng(seed)
    sd, ad = 2, 1
    target = MLPSpec(sd + ad, (4,), sd, "elu")                 # 26 weights
    hn = HypernetState.create(target, (5,), "elu", beta_reg=float(rng.uniform(0.1, 1.0)),
                              rng=rng, embedding_dim=3)       # 176 weights
    hn.add_embedding(new_task_embedding(rng, 1, 3))
    hn.theta += 0.1 * rng.standard_normal(hn.theta.shape)
    snapshot(hn)
    hn.add_embedding(new_task_embedding(rng, 2, 3))
    hn.theta += 0.05 * rng.standard_normal(hn.theta.shape)    # move off the snapshot
    n = 8
    batch = Batch(rng.standard_normal((n, sd)), rng.standard_normal((n, ad)),
                  rng.standard_normal((n, sd)), np.full(n, 2))
    norms = {2: Normalizer(rng.standard_normal(sd + ad), rng.uniform(0.5, 2.0, sd + ad))}
    assert hn.spec.n_params + target.input_dim <= 500
    loss = lambda: total_loss_and_grads(hn, batch, norms, squared)[0]
    return hn, batch, norms, loss


def gradient_check(seed, squared):
    """(relative error for Theta, relative error for the current embedding)."""
    hn, batch, norms, loss = toy_hypernet_problem(seed, squared)
    _, g_theta, g_e = total_loss_and_grads(hn, batch, norms, squared)
    fd_theta = central_diff(loss, hn.theta)
    fd_e = central_diff(loss, hn.current.values)
    return rel_err(g_theta, fd_theta), rel_err(g_e, fd_e)


def grid_argmax(f, lo, hi, step):
    grid = np.arange(lo, hi + step / 2, step)
    return float(grid[np.argmax(f(grid))])


def stopping_distance(v, mu, g=9.81):
    return v * v / (2 * mu * g)


def two_rect_centroid(rho_left, rho_right, width, depth):
    """x of the centroid of two side-by-side halves of a width x depth block."""
    m_l = rho_left * (width / 2) * depth
    m_r = rho_right * (width / 2) * depth
    return (m_l * (-width / 4) + m_r * (width / 4)) / (m_l + m_r)
