"""One interface over every method the runner can train.

A learner owns its parameters, optimizer state and per-task input
normalizers. The runner drives it through ``begin_task``, ``train``,
``end_task`` and asks it for frozen planning models with ``model``.
Every batch a learner reads passes through a :class:`DataAudit`, which
counts transitions from tasks the method is not allowed to see.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baselines import (Coreset, EWCState, MultiHeadNet, SIState, coreset_update, ewc_consolidate,
                        ewc_penalty_and_grad, hypercrl_mt_step, mixed_batch, multihead_loss_and_grad,
                        si_consolidate, si_penalty_and_grad, si_track)
from .dynamics import Batch, Normalizer, ReplayBuffer, normalizer_apply, normalizer_fit, predict_next, target_spec
from .errors import ConfigurationError, StateError, TrainingDivergence
from .hypernet import HypernetState, TaskEmbedding, generate, hypernet_step, new_task_embedding, snapshot
from .nn import ACTIVATIONS, AdamState, adam_step

METHODS = ("hypercrl", "hypercrl-mt", "finetune", "ewc", "si", "coreset", "multitask")
REPLAY_METHODS = ("hypercrl-mt", "coreset", "multitask")


@dataclass
class LearnerConfig:
    target_hidden: tuple = (200, 200)
    target_activation: str = "relu"
    hnet_hidden: tuple = (50, 50)
    hnet_activation: str = "relu"
    beta_reg: float = 0.5
    lr_theta: float = 1e-4
    lr_e: float = 1e-4
    ewc_lambda: float = 100.0
    si_c: float = 0.1
    si_xi: float = 0.1
    coreset_fraction: float = 0.01
    squared_loss: bool = False
    clip_margin: float | None = None   # clip planned states to the data range +- margin * range

    def __post_init__(self):
        for name in ("target_activation", "hnet_activation"):
            if getattr(self, name) not in ACTIVATIONS:
                raise ConfigurationError(f"{name} must be one of {ACTIVATIONS}, got {getattr(self, name)!r}")
        if not self.target_hidden or not self.hnet_hidden or min(*self.target_hidden, *self.hnet_hidden) < 1:
            raise ConfigurationError("hidden layer sizes must be positive and non-empty")
        if min(self.beta_reg, self.ewc_lambda, self.si_c) < 0 or self.si_xi <= 0:
            raise ConfigurationError("beta_reg, ewc_lambda and si_c must be >= 0 and si_xi > 0")
        if not 0 < self.coreset_fraction <= 1:
            raise ConfigurationError(f"coreset_fraction must be in (0, 1], got {self.coreset_fraction}")
        if self.clip_margin is not None and self.clip_margin < 0:
            raise ConfigurationError("clip_margin must be >= 0 or None")


class DataAudit:
    """Counts transitions read from tasks other than the current one.

    ``prior_rows`` counts reads of earlier tasks for every method; for
    methods without replay each such read is also a violation.
    """

    def __init__(self, replay_allowed: bool):
        self.replay_allowed = replay_allowed
        self.rows_read = 0
        self.prior_rows = 0
        self.violations = 0

    def check(self, batch: Batch, current_task: int):
        self.rows_read += len(batch)
        self.prior_rows += int(np.count_nonzero(batch.task < current_task))
        if self.replay_allowed:
            bad = batch.task > current_task   # the future is off limits for everyone
        else:
            bad = batch.task != current_task
        self.violations += int(np.count_nonzero(bad))


# small packing helpers for state_dict ------------------------------------

def _adam_out(prefix, opt: AdamState | None, out: dict):
    if opt is not None:
        out[prefix + ".m"] = opt.first_moment.copy()
        out[prefix + ".v"] = opt.second_moment.copy()
        out[prefix + ".t"] = np.array(opt.step_count)


def _adam_in(prefix, d: dict) -> AdamState | None:
    if prefix + ".m" not in d:
        return None
    return AdamState(d[prefix + ".m"].copy(), d[prefix + ".v"].copy(), int(d[prefix + ".t"]))


def _store_out(store: Coreset | None, out: dict):
    if store is None:
        return
    k = store.kept
    out.update({"store.s": k.s.copy(), "store.a": k.a.copy(), "store.s_next": k.s_next.copy(),
                "store.task": k.task.copy(),
                "store.quotas": np.array(sorted(store.quotas.items()), dtype=np.int64).reshape(-1, 2)})


def _store_in(store: Coreset | None, d: dict):
    if store is None:
        return
    store.kept = Batch(d["store.s"].copy(), d["store.a"].copy(), d["store.s_next"].copy(),
                       d["store.task"].astype(np.int64))
    store.quotas = {int(t): int(q) for t, q in d["store.quotas"]}


class Learner:
    method = ""

    def __init__(self, state_dim: int, action_dim: int, cfg: LearnerConfig):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.cfg = cfg
        self.task = 0
        self.normalizers: dict[int, Normalizer] = {}
        self.bounds: dict[int, np.ndarray] = {}     # (2, state_dim) lo/hi of observed states
        self.audit = DataAudit(self.method in REPLAY_METHODS)
        self.diverged = 0
        self.store: Coreset | None = None

    def refit_normalizer(self, buffer: ReplayBuffer):
        data = buffer.all()
        self.audit.check(data, self.task)
        self.normalizers[self.task] = normalizer_fit(data)
        states = np.concatenate([data.s, data.s_next])
        self.bounds[self.task] = np.stack([states.min(axis=0), states.max(axis=0)])

    def _planning_model(self, task_id, step):
        """Wrap a one-step predictor; optionally keep rollouts inside the seen state range."""
        if self.cfg.clip_margin is None:
            return step
        lo, hi = self.bounds[task_id]
        pad = self.cfg.clip_margin * (hi - lo)
        lo, hi = lo - pad, hi + pad

        def f(s, a):
            return np.clip(step(s, a), lo, hi)
        return f

    def _batches(self, buffer, batch_size, rng):
        cur, past = mixed_batch(buffer, self.store, batch_size, rng)
        self.audit.check(cur, self.task)
        self.audit.check(past, self.task)
        return [cur, past] if len(past) else [cur]

    def _check_begin(self, task_id):
        if task_id <= self.task:
            raise StateError(f"tasks must arrive in increasing order: got {task_id} after {self.task}")
        self.task = task_id

    def _store_end(self, buffer, rng):
        if self.store is not None:
            data = buffer.all()
            self.audit.check(data, self.task)
            coreset_update(self.store, data, rng)

    def _common_state(self) -> dict:
        out = {"task": np.array(self.task), "diverged": np.array(self.diverged),
               "audit": np.array([self.audit.rows_read, self.audit.prior_rows, self.audit.violations])}
        for t, n in self.normalizers.items():
            out[f"norm.{t}"] = n.to_array()
        for t, b in self.bounds.items():
            out[f"bounds.{t}"] = b.copy()
        _store_out(self.store, out)
        return out

    def _load_common(self, d: dict):
        self.task = int(d["task"])
        self.diverged = int(d["diverged"])
        self.audit.rows_read, self.audit.prior_rows, self.audit.violations = (int(x) for x in d["audit"])
        self.normalizers = {int(k.split(".")[1]): Normalizer.from_array(v)
                            for k, v in d.items() if k.startswith("norm.")}
        self.bounds = {int(k.split(".")[1]): v.copy() for k, v in d.items() if k.startswith("bounds.")}
        _store_in(self.store, d)

    # subclasses fill these in
    def begin_task(self, task_id: int, rng): raise NotImplementedError
    def train(self, buffer, n_steps: int, batch_size: int, rng) -> list: raise NotImplementedError
    def end_task(self, buffer, rng): raise NotImplementedError
    def model(self, task_id: int): raise NotImplementedError
    def state_dict(self) -> dict: raise NotImplementedError
    def load_state_dict(self, d: dict): raise NotImplementedError


class HyperLearner(Learner):
    """HyperCRL, or HyperCRL-MT when ``multitask`` is set (full replay, no regularizer)."""

    def __init__(self, state_dim, action_dim, cfg: LearnerConfig, rng, multitask: bool = False):
        self.method = "hypercrl-mt" if multitask else "hypercrl"
        super().__init__(state_dim, action_dim, cfg)
        self.multitask = multitask
        self.target = target_spec(state_dim, action_dim, cfg.target_hidden, cfg.target_activation)
        beta = 0.0 if multitask else cfg.beta_reg
        self.hnet = HypernetState.create(self.target, cfg.hnet_hidden, cfg.hnet_activation, beta, rng)
        if multitask:
            self.store = Coreset(state_dim, action_dim, 1.0)
        self.opt_theta = self.opt_e = None

    def begin_task(self, task_id, rng):
        if task_id != self.task + 1:
            raise StateError(f"hypernetwork tasks must be 1, 2, ...; expected {self.task + 1}, got {task_id}")
        self._check_begin(task_id)
        if self.hnet.embeddings:
            snapshot(self.hnet)
        self.hnet.add_embedding(new_task_embedding(rng, task_id, self.hnet.spec.input_dim))
        self.opt_theta = AdamState.zeros(len(self.hnet.theta))
        self.opt_e = AdamState.zeros(self.hnet.spec.input_dim)

    def train(self, buffer, n_steps, batch_size, rng):
        step = hypercrl_mt_step if self.multitask else hypernet_step
        losses = []
        for _ in range(n_steps):
            batches = self._batches(buffer, batch_size, rng)
            try:
                losses.append(step(self.hnet, batches, self.normalizers, self.opt_theta, self.opt_e,
                                   self.cfg.lr_theta, self.cfg.lr_e, self.cfg.squared_loss))
            except TrainingDivergence:
                # parameters were left at their last finite values
                self.diverged += 1
                break
        return losses

    def end_task(self, buffer, rng):
        self._store_end(buffer, rng)

    def weights(self, task_id: int) -> np.ndarray:
        return generate(self.hnet, self.hnet.embedding(task_id))

    def model(self, task_id):
        theta = self.weights(task_id)
        norm, spec = self.normalizers[task_id], self.target

        def f(s, a):
            return predict_next(theta, spec, norm, s, a)
        return self._planning_model(task_id, f)

    def state_dict(self):
        out = self._common_state()
        out["hnet.theta"] = self.hnet.theta.copy()
        if self.hnet.snapshot is not None:
            out["hnet.snapshot"] = np.array(self.hnet.snapshot)
        out["hnet.embeddings"] = np.array([e.values for e in self.hnet.embeddings]).reshape(
            -1, self.hnet.spec.input_dim)
        _adam_out("opt_theta", self.opt_theta, out)
        _adam_out("opt_e", self.opt_e, out)
        return out

    def load_state_dict(self, d):
        self._load_common(d)
        self.hnet.theta = d["hnet.theta"].copy()
        self.hnet.snapshot = None
        if "hnet.snapshot" in d:
            snap = d["hnet.snapshot"].copy()
            snap.flags.writeable = False
            self.hnet.snapshot = snap
        self.hnet._snap_out = None
        E = d["hnet.embeddings"]
        self.hnet.embeddings = [TaskEmbedding(E[i].copy(), i + 1, i == len(E) - 1) for i in range(len(E))]
        self.opt_theta = _adam_in("opt_theta", d)
        self.opt_e = _adam_in("opt_e", d)


class MultiHeadLearner(Learner):
    """Finetuning, EWC, SI, 1% coreset and the multi-task oracle.

    All share the multi-head target architecture and differ only in the
    penalty added to the loss and the replay store they sample from.
    """

    def __init__(self, method, state_dim, action_dim, cfg: LearnerConfig, rng):
        if method not in ("finetune", "ewc", "si", "coreset", "multitask"):
            raise ConfigurationError(f"{method!r} is not a multi-head method")
        self.method = method
        super().__init__(state_dim, action_dim, cfg)
        self.net = MultiHeadNet.create(target_spec(state_dim, action_dim, cfg.target_hidden,
                                                   cfg.target_activation), rng)
        self.ewc = EWCState(cfg.ewc_lambda) if method == "ewc" else None
        self.si: SIState | None = None
        if method == "coreset":
            self.store = Coreset(state_dim, action_dim, cfg.coreset_fraction)
        elif method == "multitask":
            self.store = Coreset(state_dim, action_dim, 1.0)
        self.opt = None

    def begin_task(self, task_id, rng):
        self._check_begin(task_id)
        self.net.add_head(task_id, rng)
        if self.method == "si":
            if self.si is None:
                self.si = SIState.start(self.net.params, self.cfg.si_c, self.cfg.si_xi)
            else:
                self.si.resize(self.net.params)
        self.opt = AdamState.zeros(len(self.net.params))

    def train(self, buffer, n_steps, batch_size, rng):
        losses = []
        for _ in range(n_steps):
            batches = self._batches(buffer, batch_size, rng)
            loss, grad = multihead_loss_and_grad(self.net, batches, self.normalizers, self.cfg.squared_loss)
            if self.ewc is not None:
                pen, g = ewc_penalty_and_grad(self.net.params, self.ewc)
                loss += pen
                grad += g
            if self.si is not None:
                pen, g = si_penalty_and_grad(self.net.params, self.si)
                loss += pen
                grad += g
            if not (np.isfinite(loss) and np.isfinite(grad).all()):
                self.diverged += 1
                break
            before = self.net.params.copy() if self.si is not None else None
            adam_step(self.opt, self.net.params, grad, self.cfg.lr_theta)
            if self.si is not None:
                si_track(self.si, before, self.net.params, grad)
            losses.append(loss)
        return losses

    def end_task(self, buffer, rng):
        if self.ewc is not None:
            data = buffer.all()
            self.audit.check(data, self.task)
            ewc_consolidate(self.net, data, self.ewc, self.normalizers[self.task], self.cfg.squared_loss)
        if self.si is not None:
            si_consolidate(self.si, self.net.params)
        self._store_end(buffer, rng)

    def model(self, task_id):
        f = self.net.frozen(task_id)
        norm = self.normalizers[task_id]

        def g(s, a):
            s = np.asarray(s, dtype=np.float64)
            return s + f(normalizer_apply(norm, s, a))
        return self._planning_model(task_id, g)

    def state_dict(self):
        out = self._common_state()
        out["net.params"] = self.net.params.copy()
        out["net.heads"] = np.array(self.net.head_ids, dtype=np.int64)
        _adam_out("opt", self.opt, out)
        if self.ewc is not None:
            for k, (star, fisher) in enumerate(self.ewc.anchors):
                out[f"ewc.{k}.star"] = star.copy()
                out[f"ewc.{k}.fisher"] = fisher.copy()
        if self.si is not None:
            out["si.omega"] = self.si.omega.copy()
            out["si.anchor"] = self.si.theta_anchor.copy()
            out["si.path"] = self.si.path.copy()
        return out

    def load_state_dict(self, d):
        self._load_common(d)
        self.net.params = d["net.params"].copy()
        self.net.head_ids = [int(h) for h in d["net.heads"]]
        self.net.active_head = self.net.head_ids[-1] if self.net.head_ids else 0
        self.opt = _adam_in("opt", d)
        if self.ewc is not None:
            n = sum(1 for k in d if k.startswith("ewc.") and k.endswith(".star"))
            self.ewc.anchors = [(d[f"ewc.{k}.star"].copy(), d[f"ewc.{k}.fisher"].copy()) for k in range(n)]
        if "si.omega" in d:
            self.si = SIState(self.cfg.si_c, d["si.omega"].copy(), d["si.anchor"].copy(),
                              d["si.path"].copy(), self.cfg.si_xi)


def make_learner(method: str, state_dim: int, action_dim: int, cfg: LearnerConfig, rng) -> Learner:
    if method == "hypercrl":
        return HyperLearner(state_dim, action_dim, cfg, rng)
    if method == "hypercrl-mt":
        return HyperLearner(state_dim, action_dim, cfg, rng, multitask=True)
    if method in METHODS:
        return MultiHeadLearner(method, state_dim, action_dim, cfg, rng)
    raise ConfigurationError(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")
