"""Continual-learning baselines that share the target-network architecture.

The baselines use a multi-head version of the dynamics MLP: a shared trunk
plus one linear output layer per task. Their parameters live in one growing
vector ``[trunk | head_1 | head_2 | ...]`` so that the EWC and SI penalties
can be written over a prefix of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Batch, Normalizer, ReplayBuffer, normalizer_apply
from .errors import ConfigurationError, DataError, PreconditionError
from .hypernet import HypernetState, hypernet_step
from .nn import (MLPSpec, _act, _act_deriv, mlp_backward, mlp_forward, mlp_forward_cache,
                 mlp_sq_grad_sum, xavier_init)


# ---------------------------------------------------------------- multi-head net

@dataclass
class MultiHeadNet:
    trunk_spec: MLPSpec
    out_dim: int
    params: np.ndarray
    head_ids: list = field(default_factory=list)
    active_head: int = 0

    @classmethod
    def create(cls, target: MLPSpec, rng) -> "MultiHeadNet":
        if len(target.hidden) < 2:
            raise ConfigurationError("a multi-head net needs at least two hidden layers")
        trunk = MLPSpec(target.input_dim, target.hidden[:-1], target.hidden[-1], target.activation)
        return cls(trunk, target.output_dim, xavier_init(trunk, rng).flat)

    @property
    def feature_dim(self) -> int:
        return self.trunk_spec.output_dim

    @property
    def head_size(self) -> int:
        return self.feature_dim * self.out_dim + self.out_dim

    @property
    def n_trunk(self) -> int:
        return self.trunk_spec.n_params

    @property
    def n_heads(self) -> int:
        return len(self.head_ids)

    def add_head(self, task_id: int, rng) -> int:
        """Append a Xavier-initialized output layer for ``task_id`` and make it active."""
        if task_id in self.head_ids:
            raise ConfigurationError(f"task {task_id} already has a head")
        bound = np.sqrt(6.0 / (self.feature_dim + self.out_dim))
        W = rng.uniform(-bound, bound, size=(self.feature_dim, self.out_dim))
        self.params = np.concatenate([self.params, W.ravel(), np.zeros(self.out_dim)])
        self.head_ids.append(task_id)
        self.active_head = task_id
        return task_id

    def head_slice(self, task_id: int) -> slice:
        if task_id not in self.head_ids:
            raise DataError(f"no head for task {task_id}; heads exist for {self.head_ids}")
        start = self.n_trunk + self.head_ids.index(task_id) * self.head_size
        return slice(start, start + self.head_size)

    def head(self, task_id: int, params=None):
        p = self.params if params is None else params
        h = p[self.head_slice(task_id)]
        k = self.feature_dim * self.out_dim
        return h[:k].reshape(self.feature_dim, self.out_dim), h[k:]

    def features(self, x, params=None):
        p = self.params if params is None else params
        z = mlp_forward(p[: self.n_trunk], self.trunk_spec, x)
        return _act(z, self.trunk_spec.activation)

    def forward(self, x, task_id: int | None = None, params=None) -> np.ndarray:
        W, b = self.head(task_id or self.active_head, params)
        return self.features(x, params) @ W + b

    def frozen(self, task_id: int):
        """Copies of the trunk and one head; stays valid while training continues."""
        trunk = self.params[: self.n_trunk].copy()
        W, b = (m.copy() for m in self.head(task_id))
        spec = self.trunk_spec

        def f(x):
            return _act(mlp_forward(trunk, spec, x), spec.activation) @ W + b
        return f

    def _backward(self, x, task_id, upstream, grad, sq=False):
        """Accumulate the (squared per-row) gradient of ``upstream . f(x)`` into ``grad``."""
        trunk = self.params[: self.n_trunk]
        z, cache = mlp_forward_cache(trunk, self.trunk_spec, x)
        h = _act(z, self.trunk_spec.activation)
        W, _ = self.head(task_id)
        sl = self.head_slice(task_id)
        k = self.feature_dim * self.out_dim
        gz = (upstream @ W.T) * _act_deriv(z, self.trunk_spec.activation)
        if sq:
            grad[sl][:k] += ((h * h).T @ (upstream * upstream)).ravel()
            grad[sl][k:] += (upstream * upstream).sum(axis=0)
            g_trunk, _ = mlp_sq_grad_sum(trunk, self.trunk_spec, cache, gz)
        else:
            grad[sl][:k] += (h.T @ upstream).ravel()
            grad[sl][k:] += upstream.sum(axis=0)
            g_trunk, _ = mlp_backward(trunk, self.trunk_spec, cache, gz, need_x=False)
        grad[: self.n_trunk] += g_trunk


def _err_upstream(err, squared, denom):
    if squared:
        return float(np.sum(err * err)) / denom, 2.0 * err / denom
    norms = np.linalg.norm(err, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    up = np.where(norms[:, None] > 0, err / safe[:, None], 0.0)
    return float(norms.sum()) / denom, up / denom


def _norm_for(normalizers, task_id):
    if isinstance(normalizers, Normalizer):
        return normalizers
    try:
        return normalizers[task_id]
    except KeyError:
        raise DataError(f"no normalizer for task {task_id}") from None


def multihead_loss_and_grad(net: MultiHeadNet, batches, normalizers, squared=False):
    """Sum of per-batch mean dynamics losses; each row uses its own task's head."""
    if isinstance(batches, Batch):
        batches = [batches]
    grad = np.zeros_like(net.params)
    loss = 0.0
    for batch in batches:
        n = len(batch)
        for task_id, sub in batch.groups():
            x = normalizer_apply(_norm_for(normalizers, task_id), sub.s, sub.a)
            err = sub.s + net.forward(x, task_id) - sub.s_next
            l, up = _err_upstream(err, squared, n)
            loss += l
            net._backward(x, task_id, up, grad)
    return loss, grad


# ---------------------------------------------------------------- EWC

@dataclass
class EWCState:
    lam: float = 100.0
    anchors: list = field(default_factory=list)   # (theta_star, fisher) per finished task


def empirical_fisher(net: MultiHeadNet, data: Batch, norm: Normalizer, squared=False,
                     chunk: int = 512) -> np.ndarray:
    """Mean over ``data`` of squared per-transition gradients of the dynamics loss."""
    if len(data) == 0:
        raise PreconditionError("cannot estimate a Fisher diagonal from an empty buffer")
    fisher = np.zeros_like(net.params)
    for start in range(0, len(data), chunk):
        sub = data.select(slice(start, start + chunk))
        for task_id, part in sub.groups():
            x = normalizer_apply(norm, part.s, part.a)
            err = part.s + net.forward(x, task_id) - part.s_next
            _, up = _err_upstream(err, squared, 1)
            net._backward(x, task_id, up, fisher, sq=True)
    return fisher / len(data)


def ewc_consolidate(net: MultiHeadNet, data, state: EWCState, norm: Normalizer, squared=False) -> EWCState:
    """Anchor the current parameters with their empirical Fisher diagonal."""
    if isinstance(data, ReplayBuffer):
        data = data.all()
    fisher = empirical_fisher(net, data, norm, squared)
    state.anchors.append((net.params.copy(), fisher))
    return state


def ewc_penalty(theta: np.ndarray, state: EWCState) -> float:
    return ewc_penalty_and_grad(theta, state)[0]


def ewc_penalty_and_grad(theta: np.ndarray, state: EWCState):
    """``lam/2 * sum_tasks sum_j F_j (theta_j - theta*_j)^2`` and its gradient."""
    total = 0.0
    grad = np.zeros_like(theta)
    for star, fisher in state.anchors:
        n = len(star)
        d = theta[:n] - star
        total += 0.5 * state.lam * float(np.sum(fisher * d * d))
        grad[:n] += state.lam * fisher * d
    return total, grad


# ---------------------------------------------------------------- SI

@dataclass
class SIState:
    c: float
    omega: np.ndarray
    theta_anchor: np.ndarray
    path: np.ndarray
    xi: float = 0.1

    @classmethod
    def start(cls, theta: np.ndarray, c: float = 0.1, xi: float = 0.1) -> "SIState":
        n = len(theta)
        return cls(c, np.zeros(n), theta.copy(), np.zeros(n), xi)

    def resize(self, theta: np.ndarray):
        """Extend to a longer parameter vector (new heads start unimportant)."""
        extra = len(theta) - len(self.omega)
        if extra > 0:
            self.omega = np.concatenate([self.omega, np.zeros(extra)])
            self.path = np.concatenate([self.path, np.zeros(extra)])
            self.theta_anchor = np.concatenate([self.theta_anchor, theta[-extra:]])


def si_track(state: SIState, theta_before, theta_after, grad) -> SIState:
    """Accumulate ``-grad * delta_theta`` along the optimization path."""
    state.path -= grad * (theta_after - theta_before)
    return state


def si_consolidate(state: SIState, theta_end: np.ndarray) -> SIState:
    delta = theta_end - state.theta_anchor
    state.omega += np.maximum(state.path, 0.0) / (delta * delta + state.xi)
    state.theta_anchor = theta_end.copy()
    state.path[:] = 0.0
    return state


def si_penalty(theta: np.ndarray, state: SIState) -> float:
    return si_penalty_and_grad(theta, state)[0]


def si_penalty_and_grad(theta: np.ndarray, state: SIState):
    d = theta - state.theta_anchor
    return state.c * float(np.sum(state.omega * d * d)), 2.0 * state.c * state.omega * d


# ---------------------------------------------------------------- replay stores

@dataclass
class Coreset:
    """Transitions kept from finished tasks.

    ``fraction=0.01`` is the 1% coreset; ``fraction=1.0`` keeps every
    transition (the multi-task oracle's store).
    """
    state_dim: int
    action_dim: int
    fraction: float = 0.01
    quotas: dict = field(default_factory=dict)
    kept: Batch | None = None

    def __post_init__(self):
        if self.kept is None:
            self.kept = Batch.empty(self.state_dim, self.action_dim)

    def __len__(self):
        return len(self.kept)

    def quota(self, n: int) -> int:
        return min(n, max(1, math.ceil(self.fraction * n - 1e-9)))


def coreset_update(coreset: Coreset, buffer, rng: np.random.Generator) -> Coreset:
    """Keep ``ceil(fraction * N)`` of the finished task's transitions, without replacement."""
    data = buffer.all() if isinstance(buffer, ReplayBuffer) else buffer
    n = len(data)
    if n == 0:
        return coreset
    q = coreset.quota(n)
    idx = np.sort(rng.choice(n, size=q, replace=False))
    chosen = data.select(idx)
    task_ids = np.unique(chosen.task)
    if len(task_ids) != 1:
        raise DataError("a finished-task buffer must hold exactly one task")
    coreset.quotas[int(task_ids[0])] = q
    coreset.kept = Batch.cat([coreset.kept, chosen])
    return coreset


def mixed_batch(buffer: ReplayBuffer, store: Coreset | None, batch_size: int, rng: np.random.Generator):
    """``(current batch, past batch)``; the past batch is empty while nothing is stored."""
    current = buffer.sample(batch_size, rng)
    if store is None or len(store) == 0:
        return current, Batch.empty(buffer.state_dim, buffer.action_dim)
    idx = rng.integers(0, len(store), size=batch_size)
    return current, store.kept.select(idx)


# ---------------------------------------------------------------- HyperCRL-MT

def hypercrl_mt_step(state: HypernetState, batches, normalizers, opt_theta, opt_e,
                     lr_theta: float, lr_e: float, squared: bool = False) -> float:
    """Hypernetwork update on mixed-task data with the output regularizer off."""
    saved = state.beta_reg
    state.beta_reg = 0.0
    try:
        return hypernet_step(state, batches, normalizers, opt_theta, opt_e, lr_theta, lr_e, squared)
    finally:
        state.beta_reg = saved
