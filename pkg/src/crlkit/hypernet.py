"""Task-conditional hypernetwork that emits the full dynamics-model weight vector.

The hypernetwork ``H`` maps a 10-d task embedding to every weight of the
target network. Forgetting is controlled by an output-space penalty that
keeps ``H(e_i)`` of all finished tasks close to what a frozen snapshot of
``H`` produced when the previous task ended.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import Batch, Normalizer, dyn_loss_and_grad
from .errors import ConfigurationError, DataError, StateError, TrainingDivergence
from .nn import MLPSpec, adam_step, mlp_backward, mlp_forward, mlp_forward_cache, xavier_init

EMBEDDING_DIM = 10


@dataclass
class TaskEmbedding:
    values: np.ndarray
    task_id: int
    trainable: bool = True


def new_task_embedding(rng_seed, task_id: int = 1, dim: int = EMBEDDING_DIM) -> TaskEmbedding:
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return TaskEmbedding(rng.standard_normal(dim), task_id, True)


@dataclass
class HypernetState:
    spec: MLPSpec
    target: MLPSpec
    theta: np.ndarray
    beta_reg: float
    embeddings: list = field(default_factory=list)
    snapshot: np.ndarray | None = None
    # snapshot outputs for the frozen embeddings; constant for a whole task
    _snap_out: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.spec.output_dim != self.target.n_params:
            raise ConfigurationError(
                f"hypernetwork emits {self.spec.output_dim} values, target needs {self.target.n_params}")
        if self.theta.shape != (self.spec.n_params,):
            raise ConfigurationError("hypernetwork parameter vector does not match its spec")

    @classmethod
    def create(cls, target: MLPSpec, hidden=(50, 50), activation="relu", beta_reg=0.5,
               rng=None, embedding_dim: int = EMBEDDING_DIM) -> "HypernetState":
        spec = MLPSpec(embedding_dim, tuple(hidden), target.n_params, activation)
        return cls(spec, target, xavier_init(spec, rng).flat, float(beta_reg))

    @property
    def task_index(self) -> int:
        return len(self.embeddings)

    @property
    def current(self) -> TaskEmbedding:
        if not self.embeddings:
            raise StateError("no task embedding has been created yet")
        return self.embeddings[-1]

    def embedding(self, task_id: int) -> TaskEmbedding:
        if not 1 <= task_id <= len(self.embeddings):
            raise DataError(f"unknown task id {task_id}; {len(self.embeddings)} embeddings exist")
        return self.embeddings[task_id - 1]

    def add_embedding(self, emb: TaskEmbedding):
        if emb.values.shape != (self.spec.input_dim,):
            raise ConfigurationError(f"embedding has shape {emb.values.shape}, expected ({self.spec.input_dim},)")
        if self.embeddings and self.snapshot is None:
            raise StateError("take a snapshot before starting task >= 2")
        for old in self.embeddings:
            old.trainable = False
        emb.trainable = True
        self.embeddings.append(emb)

    def frozen_embeddings(self) -> np.ndarray:
        return np.array([e.values for e in self.embeddings[:-1]]).reshape(-1, self.spec.input_dim)

    def snapshot_outputs(self) -> np.ndarray:
        if self._snap_out is None or len(self._snap_out) != self.task_index - 1:
            self._snap_out = mlp_forward(self.snapshot, self.spec, self.frozen_embeddings())
        return self._snap_out


def generate(state: HypernetState, e) -> np.ndarray:
    """Target-network weights ``H(e)`` as one flat vector."""
    values = e.values if isinstance(e, TaskEmbedding) else np.asarray(e, dtype=np.float64)
    if values.shape != (state.spec.input_dim,):
        raise ConfigurationError(f"embedding has shape {values.shape}, expected ({state.spec.input_dim},)")
    theta = mlp_forward(state.theta, state.spec, values)
    if theta.shape != (state.target.n_params,):
        raise ConfigurationError("generated weight vector does not match the target layout")
    return theta


def snapshot(state: HypernetState) -> HypernetState:
    """Freeze a copy of the current hypernetwork weights as the regularization target."""
    snap = state.theta.copy()
    snap.flags.writeable = False
    state.snapshot = snap
    state._snap_out = None
    return state


def _reg_terms(state: HypernetState):
    t = state.task_index
    if t < 2:
        return 0.0, None
    if state.snapshot is None:
        raise StateError(f"task {t} needs a hypernetwork snapshot for the regularizer")
    E = state.frozen_embeddings()
    out, cache = mlp_forward_cache(state.theta, state.spec, E)
    diff = out - state.snapshot_outputs()
    scale = state.beta_reg / (t - 1)
    return scale * float(np.sum(diff * diff)), (cache, 2.0 * scale * diff)


def reg_loss(state: HypernetState) -> float:
    """``beta/(t-1) * sum_i ||H_snapshot(e_i) - H(e_i)||^2`` over frozen embeddings."""
    return _reg_terms(state)[0]


def _norm_for(normalizers, task_id: int) -> Normalizer:
    if isinstance(normalizers, Normalizer):
        return normalizers
    try:
        return normalizers[task_id]
    except KeyError:
        raise DataError(f"no normalizer for task {task_id}") from None


def total_loss_and_grads(state: HypernetState, batches, normalizers, squared: bool = False):
    """Dynamics loss plus output regularizer, with gradients.

    ``batches`` is one Batch or a list of them; each contributes its own
    batch mean. Transitions are routed through the embedding of their own
    task. Returns ``(loss, grad_theta, grad_e)`` where ``grad_e`` is the
    gradient for the current (trainable) embedding only.
    """
    if isinstance(batches, Batch):
        batches = [batches]
    groups = [(task_id, sub, len(batch)) for batch in batches if len(batch) for task_id, sub in batch.groups()]
    tasks = sorted({task_id for task_id, _, _ in groups})
    row = {task_id: k for k, task_id in enumerate(tasks)}
    rows = [state.embedding(task_id).values for task_id in tasks]
    t = state.task_index
    n_reg = t - 1 if t >= 2 else 0
    if n_reg and state.snapshot is None:
        raise StateError(f"task {t} needs a hypernetwork snapshot for the regularizer")
    cur = state.current
    grad_e = np.zeros_like(cur.values)
    if not rows and not n_reg:
        return 0.0, np.zeros_like(state.theta), grad_e

    # one pass through H for every embedding involved: the tasks in the
    # batches first, then the frozen ones the regularizer looks at
    parts = [np.array(rows).reshape(-1, state.spec.input_dim)]
    if n_reg:
        parts.append(state.frozen_embeddings())
    E = np.vstack(parts)
    out, cache = mlp_forward_cache(state.theta, state.spec, E)
    upstream = np.zeros_like(out)
    loss = 0.0
    for task_id, sub, n in groups:
        k = row[task_id]
        l_dyn, g_w = dyn_loss_and_grad(out[k], state.target, _norm_for(normalizers, task_id), sub,
                                       squared=squared, denom=n)
        upstream[k] += g_w
        loss += l_dyn
    if n_reg:
        diff = out[len(rows):] - state.snapshot_outputs()
        scale = state.beta_reg / (t - 1)
        loss += scale * float(np.sum(diff * diff))
        upstream[len(rows):] = 2.0 * scale * diff
    grad_theta, g_x = mlp_backward(state.theta, state.spec, cache, upstream, need_x=cur.task_id in row)
    if cur.task_id in row:
        grad_e += g_x[row[cur.task_id]]
    if not np.isfinite(loss):
        raise TrainingDivergence("non-finite hypernetwork loss")
    return loss, grad_theta, grad_e


def output_drift(state: HypernetState, task_id: int, reference: np.ndarray) -> float:
    """``||H(e_task) - reference||`` for a stored reference weight vector."""
    return float(np.linalg.norm(generate(state, state.embedding(task_id)) - reference))


def hypernet_step(state: HypernetState, batches, normalizers, opt_theta, opt_e,
                  lr_theta: float, lr_e: float, squared: bool = False) -> float:
    """One gradient step on the hypernetwork and the current embedding.

    Both gradients are taken at the same point before either update, so the
    order of the two Adam steps does not matter. Raises TrainingDivergence
    (parameters untouched) if the loss or a gradient is non-finite.
    """
    loss, g_theta, g_e = total_loss_and_grads(state, batches, normalizers, squared=squared)
    if not (np.isfinite(g_theta).all() and np.isfinite(g_e).all()):
        raise TrainingDivergence("non-finite hypernetwork gradient")
    adam_step(opt_theta, state.theta, g_theta, lr_theta)
    adam_step(opt_e, state.current.values, g_e, lr_e)
    return loss
