"""The training loop over a task sequence, evaluation, and single-task references.

Per task: reset the buffer, open a new embedding or head, collect ``P``
random episodes, then ``M`` MPC episodes each followed by ``S`` update
steps. After task ``j`` the frozen models for tasks ``1..j`` are evaluated,
filling column ``j`` of the evaluation matrix.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import ReplayBuffer
from .envs import Env, EnvSpec
from .errors import ConfigurationError
from .learners import Learner, LearnerConfig, MultiHeadLearner, make_learner
from .planner import CEMConfig, mpc_episode, random_episode
from .rng import RNGStreams

log = logging.getLogger(__name__)


@dataclass
class Schedule:
    P: int = 10
    M: int = 100
    K: int = 150
    S: int = 500
    B: int = 100
    alpha_theta: float = 1e-4
    alpha_e: float = 1e-4
    eval_episodes: int = 10

    def __post_init__(self):
        for name in ("P", "M", "K", "B", "eval_episodes"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"schedule.{name} must be >= 1, got {getattr(self, name)}")
        if self.S < 0:
            raise ConfigurationError(f"schedule.S must be >= 0, got {self.S}")
        if self.alpha_theta <= 0 or self.alpha_e <= 0:
            raise ConfigurationError("learning rates must be positive")


@dataclass
class RunRecord:
    method: str
    env: str
    seed: int
    n_tasks: int
    trace: list = field(default_factory=list)     # (episode, task, reward)
    eval: np.ndarray | None = None                # eval[i-1, j-1] = r[i][j]
    failed_episodes: int = 0
    env_steps: int = 0
    audit_rows: int = 0
    audit_prior_rows: int = 0
    audit_violations: int = 0

    def __post_init__(self):
        if self.eval is None:
            self.eval = np.full((self.n_tasks, self.n_tasks), np.nan)

    def r(self, i: int, j: int) -> float:
        return float(self.eval[i - 1, j - 1])

    def to_state(self) -> dict:
        return {"meta": {"method": self.method, "env": self.env, "seed": self.seed, "n_tasks": self.n_tasks,
                         "failed_episodes": self.failed_episodes, "env_steps": self.env_steps,
                         "audit_rows": self.audit_rows,
                         "audit_prior_rows": self.audit_prior_rows, "audit_violations": self.audit_violations},
                "trace": np.array(self.trace, dtype=np.float64).reshape(-1, 3),
                "eval": self.eval.copy()}

    @classmethod
    def from_state(cls, d: dict) -> "RunRecord":
        m = d["meta"]
        rec = cls(m["method"], m["env"], int(m["seed"]), int(m["n_tasks"]), eval=d["eval"].copy())
        rec.trace = [(int(e), int(t), float(r)) for e, t, r in d["trace"]]
        for k in ("failed_episodes", "env_steps", "audit_rows", "audit_prior_rows", "audit_violations"):
            setattr(rec, k, int(m[k]))
        return rec


def cem_config_for(spec: EnvSpec, horizon: int = 20, population: int = 500, iterations: int = 5) -> CEMConfig:
    return CEMConfig(horizon, population, spec.action_low, spec.action_high, iterations)


def _episode_steps(trace) -> int:
    return len(trace)


def run_task(learner: Learner, env: Env, schedule: Schedule, cem: CEMConfig, streams: RNGStreams,
             buffer: ReplayBuffer, record: RunRecord) -> list[float]:
    """Seed episodes, then ``M`` rounds of (MPC episode, ``S`` updates) on one task.

    The task boundary (buffer reset, new embedding or head) must already
    have happened. Returns the reward of every episode, seed episodes first.
    """
    t = env.task_id
    rewards = []

    def keep(s, a, s_next):
        buffer.add(s, a, s_next)

    def log_episode(tr):
        record.env_steps += _episode_steps(tr)
        record.failed_episodes += int(tr.failed)
        record.trace.append((len(record.trace) + 1, t, tr.total_reward))
        rewards.append(tr.total_reward)

    for _ in range(schedule.P):
        env.reset()
        log_episode(random_episode(env, schedule.K, streams["explore"], keep))
    learner.refit_normalizer(buffer)
    for m in range(schedule.M):
        env.reset()
        tr = mpc_episode(env, learner.model(t), env.reward, schedule.K, cem, streams["cem"], keep)
        log_episode(tr)
        if schedule.S:
            learner.refit_normalizer(buffer)
            learner.train(buffer, schedule.S, schedule.B, streams["train"])
        log.debug("task %d episode %d reward %.4f", t, m + 1, tr.total_reward)
    return rewards


def evaluate(learner: Learner, env_spec: EnvSpec, task_id: int, K: int, cem: CEMConfig,
             streams: RNGStreams, episodes: int) -> float:
    """Mean reward of ``episodes`` MPC episodes with the frozen model for ``task_id``."""
    env = Env(env_spec, task_id)
    model = learner.model(task_id)
    total = 0.0
    for e in range(episodes):
        env.reset()
        total += mpc_episode(env, model, env.reward, K, cem, streams.eval_rng(task_id, e)).total_reward
    return total / episodes


def _learner_config(cfg: LearnerConfig, schedule: Schedule) -> LearnerConfig:
    # the schedule's learning rates are the ones that count
    return replace(cfg, lr_theta=schedule.alpha_theta, lr_e=schedule.alpha_e)


def run_sequence(method: str, env_spec: EnvSpec, schedule: Schedule, cem: CEMConfig, seed: int,
                 learner_cfg: LearnerConfig | None = None, n_tasks: int | None = None,
                 on_task_end=None, resume: dict | None = None) -> RunRecord:
    """Train ``method`` on tasks ``1..n_tasks`` in order and fill the evaluation matrix.

    ``on_task_end(payload)`` receives a checkpoint payload after each task
    (learner state, rng state, record so far). Passing such a payload as
    ``resume`` continues the run from that point with identical results.
    """
    T = n_tasks or env_spec.n_tasks
    if not 1 <= T <= env_spec.n_tasks:
        raise ConfigurationError(f"n_tasks must be in 1..{env_spec.n_tasks}, got {T}")
    cfg = _learner_config(learner_cfg or LearnerConfig(), schedule)
    streams = RNGStreams(seed)
    learner = make_learner(method, env_spec.state_dim, env_spec.action_dim, cfg, streams["init"])
    record = RunRecord(method, env_spec.name, seed, T)
    start = 1
    if resume is not None:
        if resume["meta"]["method"] != method:
            raise ConfigurationError(f"checkpoint is for {resume['meta']['method']!r}, not {method!r}")
        learner.load_state_dict(resume["learner"])
        streams.load_state_dict(resume["rng"])
        record = RunRecord.from_state(resume["record"])
        start = int(resume["meta"]["task"]) + 1
    buffer = ReplayBuffer(env_spec.state_dim, env_spec.action_dim, (schedule.P + schedule.M) * schedule.K)
    for t in range(start, T + 1):
        t0 = time.perf_counter()
        buffer.reset(t)
        learner.begin_task(t, streams["init"])
        run_task(learner, Env(env_spec, t), schedule, cem, streams, buffer, record)
        learner.end_task(buffer, streams["store"])
        for i in range(1, t + 1):
            record.eval[i - 1, t - 1] = evaluate(learner, env_spec, i, schedule.K, cem, streams,
                                                 schedule.eval_episodes)
        record.audit_rows = learner.audit.rows_read
        record.audit_prior_rows = learner.audit.prior_rows
        record.audit_violations = learner.audit.violations
        log.info("%s seed %d task %d done in %.1fs; r[.][%d] = %s", method, seed, t,
                 time.perf_counter() - t0, t, np.round(record.eval[:t, t - 1], 3).tolist())
        if on_task_end is not None:
            on_task_end(checkpoint_payload(learner, streams, record, t))
    return record


def checkpoint_payload(learner: Learner, streams: RNGStreams, record: RunRecord, task: int) -> dict:
    return {"meta": {"method": learner.method, "task": task, "seed": streams.seed},
            "learner": learner.state_dict(), "rng": streams.state_dict(), "record": record.to_state()}


def restore_learner(payload: dict, env_spec: EnvSpec, learner_cfg: LearnerConfig | None = None,
                    schedule: Schedule | None = None) -> Learner:
    """Rebuild a learner from a checkpoint payload (for evaluation only)."""
    cfg = learner_cfg or LearnerConfig()
    if schedule is not None:
        cfg = _learner_config(cfg, schedule)
    learner = make_learner(payload["meta"]["method"], env_spec.state_dim, env_spec.action_dim, cfg,
                           np.random.default_rng(0))
    learner.load_state_dict(payload["learner"])
    return learner


def run_single_task_baseline(env_spec: EnvSpec, task_id: int, schedule: Schedule, cem: CEMConfig, seed: int,
                             learner_cfg: LearnerConfig | None = None) -> float:
    """Mean evaluation reward r*_i of a fresh model trained on task ``task_id`` alone."""
    cfg = _learner_config(learner_cfg or LearnerConfig(), schedule)
    streams = RNGStreams(seed, namespace=f"single-{task_id}")
    learner = MultiHeadLearner("finetune", env_spec.state_dim, env_spec.action_dim, cfg, streams["init"])
    record = RunRecord("single", env_spec.name, seed, env_spec.n_tasks)
    buffer = ReplayBuffer(env_spec.state_dim, env_spec.action_dim, (schedule.P + schedule.M) * schedule.K)
    buffer.reset(task_id)
    learner.begin_task(task_id, streams["init"])
    run_task(learner, Env(env_spec, task_id), schedule, cem, streams, buffer, record)
    learner.end_task(buffer, streams["store"])
    return evaluate(learner, env_spec, task_id, schedule.K, cem, streams, schedule.eval_episodes)
