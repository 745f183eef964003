"""Delta-predicting dynamics model, input normalization and per-task replay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, PreconditionError
from .nn import MLPSpec, mlp_backward, mlp_forward, mlp_forward_cache

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    task: np.ndarray

    def __len__(self) -> int:
        return len(self.s)

    @classmethod
    def empty(cls, state_dim: int, action_dim: int) -> "Batch":
        return cls(np.zeros((0, state_dim)), np.zeros((0, action_dim)),
                   np.zeros((0, state_dim)), np.zeros(0, dtype=np.int64))

    @classmethod
    def cat(cls, batches) -> "Batch":
        batches = list(batches)
        return cls(*(np.concatenate([getattr(b, f) for b in batches])
                     for f in ("s", "a", "s_next", "task")))

    def select(self, idx) -> "Batch":
        return Batch(self.s[idx], self.a[idx], self.s_next[idx], self.task[idx])

    def groups(self):
        """Yield ``(task_id, sub-batch)`` for every task present, in id order."""
        for t in np.unique(self.task):
            yield int(t), self.select(self.task == t)


def target_spec(state_dim: int, action_dim: int, hidden=(200, 200), activation="relu") -> MLPSpec:
    return MLPSpec(state_dim + action_dim, tuple(hidden), state_dim, activation)


class ReplayBuffer:
    """Transitions of the current task only.

    ``reset`` is called at every task boundary; anything sampled afterwards
    carries the new task id.
    """

    def __init__(self, state_dim: int, action_dim: int, capacity: int, task_id: int = 0):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.capacity = int(capacity)
        self._s = np.zeros((self.capacity, state_dim))
        self._a = np.zeros((self.capacity, action_dim))
        self._sn = np.zeros((self.capacity, state_dim))
        self._task = np.zeros(self.capacity, dtype=np.int64)
        self.size = 0
        self.task_id = task_id

    def __len__(self):
        return self.size

    def reset(self, task_id: int):
        self.size = 0
        self.task_id = task_id
        # old rows are wiped so nothing of a past task stays reachable
        self._s[:] = 0.0
        self._a[:] = 0.0
        self._sn[:] = 0.0
        self._task[:] = 0

    def add(self, s, a, s_next):
        if self.size >= self.capacity:
            raise PreconditionError(f"replay buffer full ({self.capacity} transitions)")
        s, a, s_next = (np.asarray(v, dtype=np.float64) for v in (s, a, s_next))
        if not (np.isfinite(s).all() and np.isfinite(a).all() and np.isfinite(s_next).all()):
            raise PreconditionError("non-finite transition")
        self._s[self.size] = s
        self._a[self.size] = a
        self._sn[self.size] = s_next
        self._task[self.size] = self.task_id
        self.size += 1

    def add_transition(self, tr: Transition):
        self.add(tr.s, tr.a, tr.s_next)

    def all(self) -> Batch:
        n = self.size
        return Batch(self._s[:n].copy(), self._a[:n].copy(), self._sn[:n].copy(),
                     self._task[:n].copy())

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform sampling with replacement."""
        if self.size == 0:
            raise PreconditionError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(self._s[idx], self._a[idx], self._sn[idx], self._task[idx])

    def state_dict(self) -> dict:
        return {"s": self._s[: self.size].copy(), "a": self._a[: self.size].copy(),
                "s_next": self._sn[: self.size].copy(), "task": self._task[: self.size].copy(),
                "task_id": np.array(self.task_id), "capacity": np.array(self.capacity)}

    def load_state_dict(self, d: dict):
        self.__init__(self.state_dim, self.action_dim, int(d["capacity"]), int(d["task_id"]))
        n = len(d["s"])
        self._s[:n], self._a[:n], self._sn[:n] = d["s"], d["a"], d["s_next"]
        self._task[:n] = d["task"]
        self.size = n


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray
    count: int = 0

    @classmethod
    def identity(cls, dim: int) -> "Normalizer":
        return cls(np.zeros(dim), np.ones(dim), 0)

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.mean, self.std, [self.count]])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Normalizer":
        d = (len(arr) - 1) // 2
        return cls(arr[:d].copy(), arr[d:2 * d].copy(), int(arr[-1]))


def normalizer_fit(data, actions=None, floor: float = STD_FLOOR) -> Normalizer:
    """Per-dimension mean and std of the concatenated (s, a) inputs.

    ``data`` is a ReplayBuffer, a Batch, or an array of states (then
    ``actions`` must be given). Columns whose std is below ``floor`` carry
    no information; they get a unit std so they still normalize to 0 but a
    model rollout that drifts along them is not amplified by ``1/floor``.
    """
    if isinstance(data, ReplayBuffer):
        data = data.all()
    if isinstance(data, Batch):
        s, a = data.s, data.a
    else:
        s, a = np.asarray(data, dtype=np.float64), np.asarray(actions, dtype=np.float64)
    if len(s) == 0:
        raise PreconditionError("cannot fit a normalizer on an empty buffer")
    x = np.concatenate([s, a], axis=-1)
    std = x.std(axis=0)
    return Normalizer(x.mean(axis=0), np.where(std < floor, 1.0, std), len(x))


def normalizer_apply(norm: Normalizer, s, a) -> np.ndarray:
    x = np.concatenate([np.asarray(s, dtype=np.float64), np.asarray(a, dtype=np.float64)], axis=-1)
    if x.shape[-1] != norm.mean.shape[0]:
        raise ConfigurationError(f"normalizer has {norm.mean.shape[0]} dims, input has {x.shape[-1]}")
    return (x - norm.mean) / norm.std


def predict_next(theta, spec: MLPSpec, norm: Normalizer, s, a) -> np.ndarray:
    """``s + f_theta(normalize(s, a))``; works on single vectors or batches."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != spec.output_dim:
        raise ConfigurationError(f"state has {s.shape[-1]} dims, model predicts {spec.output_dim}")
    return s + mlp_forward(theta, spec, normalizer_apply(norm, s, a))


def dyn_loss(pred: np.ndarray, target: np.ndarray, squared: bool = False) -> float:
    """Mean over the batch of the Euclidean prediction error (or its square)."""
    pred = np.atleast_2d(pred)
    target = np.atleast_2d(target)
    if len(pred) == 0:
        raise PreconditionError("dyn_loss needs a non-empty batch")
    err = pred - target
    if squared:
        return float(np.mean(np.sum(err * err, axis=1)))
    return float(np.mean(np.linalg.norm(err, axis=1)))


def dyn_loss_and_grad(theta, spec: MLPSpec, norm: Normalizer, batch: Batch,
                      squared: bool = False, denom: int | None = None):
    """Dynamics loss on ``batch`` and its gradient w.r.t. the target parameters.

    The loss is ``sum(||err||) / denom`` with ``denom`` defaulting to the
    batch size, which lets callers split a batch by task and still get the
    mean over the whole batch.
    """
    n = len(batch)
    if n == 0:
        raise PreconditionError("dyn_loss needs a non-empty batch")
    denom = n if denom is None else denom
    x = normalizer_apply(norm, batch.s, batch.a)
    delta, cache = mlp_forward_cache(theta, spec, x)
    err = batch.s + delta - batch.s_next
    if squared:
        loss = float(np.sum(err * err)) / denom
        up = 2.0 * err / denom
    else:
        norms = np.linalg.norm(err, axis=1)
        loss = float(norms.sum()) / denom
        safe = np.where(norms > 0, norms, 1.0)
        up = np.where(norms[:, None] > 0, err / safe[:, None], 0.0) / denom
    grad, _ = mlp_backward(theta, spec, cache, up, need_x=False)
    return loss, grad
