"""Flat-parameter MLPs with analytic backprop, Xavier init and Adam.

All parameters of a network live in one contiguous float64 vector. Weight
matrices are stored row-major with shape ``(fan_in, fan_out)`` so a layer is
``x @ W + b``. Every function accepts a single input vector or a batch of
row vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, TrainingDivergence

ACTIVATIONS = ("relu", "elu")


@dataclass(frozen=True)
class MLPSpec:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}, expected one of {ACTIVATIONS}")
        if len(self.hidden) < 1:
            raise ConfigurationError("MLPSpec needs at least one hidden layer")
        if min(self.input_dim, self.output_dim, *self.hidden) < 1:
            raise ConfigurationError(f"all layer sizes must be >= 1, got {self.sizes}")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)

    @property
    def layout(self) -> list[tuple[int, int, int, int]]:
        """(weight offset, fan_in, fan_out, bias offset) for every layer."""
        out = []
        off = 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            out.append((off, fan_in, fan_out, off + fan_in * fan_out))
            off += fan_in * fan_out + fan_out
        return out

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in zip(self.sizes[:-1], self.sizes[1:]))

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "hidden": list(self.hidden),
                "output_dim": self.output_dim, "activation": self.activation}

    @classmethod
    def from_dict(cls, d: dict) -> "MLPSpec":
        return cls(d["input_dim"], tuple(d["hidden"]), d["output_dim"], d.get("activation", "relu"))


@dataclass
class MLPParams:
    """A flat parameter vector bound to the spec that gives it structure."""

    spec: MLPSpec
    flat: np.ndarray

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.spec.n_params,):
            raise ConfigurationError(
                f"parameter vector has shape {self.flat.shape}, spec needs ({self.spec.n_params},)")

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return unpack(self.flat, self.spec)

    def copy(self) -> "MLPParams":
        return MLPParams(self.spec, self.flat.copy())


def unpack(flat: np.ndarray, spec: MLPSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views (W, b) into ``flat`` for each layer."""
    return [
        (flat[w: w + fi * fo].reshape(fi, fo), flat[b: b + fo])
        for w, fi, fo, b in spec.layout
    ]


def _flat(params) -> np.ndarray:
    return params.flat if isinstance(params, MLPParams) else params


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def _act_deriv(z: np.ndarray, kind: str) -> np.ndarray:
    # relu'(0) = 0, elu'(0) = 1
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    return np.where(z >= 0, 1.0, np.exp(np.minimum(z, 0.0)))


def _check_input(x: np.ndarray, dim: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (dim,) or x.ndim > 2:
        raise ConfigurationError(f"{what} has shape {x.shape}, expected (..., {dim})")
    return x


def mlp_forward(params, spec: MLPSpec, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on one input vector or on a batch of rows."""
    flat = _flat(params)
    if flat.shape != (spec.n_params,):
        raise ConfigurationError(f"params length {flat.shape} does not match spec ({spec.n_params},)")
    h = _check_input(x, spec.input_dim, "input")
    layers = unpack(flat, spec)
    for W, b in layers[:-1]:
        h = _act(h @ W + b, spec.activation)
    W, b = layers[-1]
    return h @ W + b


def mlp_forward_cache(params, spec: MLPSpec, x: np.ndarray):
    """Forward pass keeping (layer inputs, pre-activations) for :func:`mlp_backward`."""
    flat = _flat(params)
    if flat.shape != (spec.n_params,):
        raise ConfigurationError(f"params length {flat.shape} does not match spec ({spec.n_params},)")
    x = _check_input(x, spec.input_dim, "input")
    single = x.ndim == 1
    h = x[None, :] if single else x
    layers = unpack(flat, spec)
    inputs, pre = [], []
    for W, b in layers[:-1]:
        inputs.append(h)
        z = h @ W + b
        pre.append(z)
        h = _act(z, spec.activation)
    inputs.append(h)
    W, b = layers[-1]
    y = h @ W + b
    return (y[0] if single else y), (inputs, pre, single)


def mlp_backward(params, spec: MLPSpec, cache, upstream: np.ndarray, need_x: bool = True):
    """Gradients of ``sum(upstream * f(x))`` w.r.t. parameters and inputs."""
    flat = _flat(params)
    inputs, pre, single = cache
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape[-1:] != (spec.output_dim,):
        raise ConfigurationError(f"upstream has shape {g.shape}, expected (..., {spec.output_dim})")
    if single:
        g = g[None, :]
    grad = np.empty(spec.n_params)
    layers = unpack(flat, spec)
    gl = unpack(grad, spec)
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        gW, gb = gl[li]
        np.matmul(inputs[li].T, g, out=gW)
        gb[:] = g.sum(axis=0)
        if li == 0 and not need_x:
            return grad, None
        g = g @ W.T
        if li > 0:
            g = g * _act_deriv(pre[li - 1], spec.activation)
    return grad, (g[0] if single else g)


def mlp_sq_grad_sum(params, spec: MLPSpec, cache, upstream: np.ndarray):
    """Sum over rows of the squared per-row parameter gradients.

    Per row the weight gradient is ``outer(h, g)``, so its elementwise square
    is ``outer(h**2, g**2)`` and the row sum is one matmul. Also returns the
    per-row input gradients, which callers chaining networks need.
    """
    flat = _flat(params)
    inputs, pre, _ = cache
    g = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    out = np.empty(spec.n_params)
    layers = unpack(flat, spec)
    ol = unpack(out, spec)
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        oW, ob = ol[li]
        g2 = g * g
        np.matmul((inputs[li] ** 2).T, g2, out=oW)
        ob[:] = g2.sum(axis=0)
        g = g @ W.T
        if li > 0:
            g = g * _act_deriv(pre[li - 1], spec.activation)
    return out, g


def mlp_grad(params, spec: MLPSpec, x: np.ndarray, upstream: np.ndarray):
    """Returns ``(grad_params, grad_x)`` of ``upstream . f(x)``.

    For a batch, ``grad_params`` is summed over rows and ``grad_x`` keeps one
    row per input.
    """
    x = _check_input(x, spec.input_dim, "input")
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape[:-1] != x.shape[:-1]:
        raise ConfigurationError(f"upstream batch shape {up.shape} does not match input {x.shape}")
    _, cache = mlp_forward_cache(params, spec, x)
    return mlp_backward(params, spec, cache, up)


def xavier_init(spec: MLPSpec, rng_seed) -> MLPParams:
    """Glorot-uniform weights, zero biases. ``rng_seed`` may be an int or a Generator."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    flat = np.zeros(spec.n_params)
    for W, _ in unpack(flat, spec):
        bound = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
        W[:] = rng.uniform(-bound, bound, size=W.shape)
    return MLPParams(spec, flat)


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    # reused work array; large temporaries dominate the cost of a step otherwise
    _scratch: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def zeros(cls, n: int, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **kw)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray, lr: float):
    """One bias-corrected Adam update, applied in place.

    Returns ``(params, state)`` for convenience. Non-finite gradients raise
    :class:`TrainingDivergence` before anything is modified.
    """
    if params.shape != grads.shape or state.first_moment.shape != params.shape:
        raise ConfigurationError(
            f"adam shapes differ: params {params.shape}, grads {grads.shape}, "
            f"moments {state.first_moment.shape}")
    if not np.isfinite(grads).all():
        raise TrainingDivergence("non-finite gradient in adam_step")
    b1, b2 = state.beta1, state.beta2
    state.step_count += 1
    t = state.step_count
    m, v = state.first_moment, state.second_moment
    if state._scratch is None or state._scratch.shape != m.shape:
        state._scratch = np.empty_like(m)
    tmp = state._scratch
    m *= b1
    np.multiply(grads, 1.0 - b1, out=tmp)
    m += tmp
    v *= b2
    np.multiply(grads, grads, out=tmp)
    tmp *= 1.0 - b2
    v += tmp
    # eps is added to the bias-corrected second-moment root
    np.sqrt(v, out=tmp)
    tmp *= 1.0 / np.sqrt(1.0 - b2 ** t)
    tmp += state.epsilon
    np.divide(m, tmp, out=tmp)
    tmp *= lr / (1.0 - b1 ** t)
    params -= tmp
    return params, state


def concat(vectors: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.ravel(v) for v in vectors]) if vectors else np.zeros(0)
