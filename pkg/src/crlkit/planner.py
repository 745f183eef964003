"""Cross-entropy-method trajectory optimization and the receding-horizon loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, PlannerFailure


@dataclass
class CEMConfig:
    horizon: int
    population: int
    action_low: np.ndarray
    action_high: np.ndarray
    iterations: int = 5
    elite_frac: float = 0.1
    init_std: np.ndarray | None = None
    sigma_floor: float = 1e-3

    def __post_init__(self):
        self.action_low = np.asarray(self.action_low, dtype=np.float64)
        self.action_high = np.asarray(self.action_high, dtype=np.float64)
        if self.init_std is None:
            self.init_std = 0.5 * (self.action_high - self.action_low) / 2.0
        self.init_std = np.broadcast_to(np.asarray(self.init_std, dtype=np.float64),
                                        self.action_low.shape).copy()
        if self.horizon < 1 or self.iterations < 1:
            raise ConfigurationError("horizon and iterations must be >= 1")
        if not 0.0 < self.elite_frac <= 1.0:
            raise ConfigurationError(f"elite_frac must be in (0, 1], got {self.elite_frac}")
        if self.n_elite < 2:
            raise ConfigurationError(
                f"elite set of {self.n_elite} is too small; raise population or elite_frac")
        if np.any(self.action_high < self.action_low):
            raise ConfigurationError("action_high below action_low")

    @property
    def action_dim(self) -> int:
        return len(self.action_low)

    @property
    def n_elite(self) -> int:
        return math.ceil(self.elite_frac * self.population)


@dataclass
class Plan:
    mu: np.ndarray      # (horizon, action_dim)
    sigma: np.ndarray   # (horizon, action_dim)

    @classmethod
    def initial(cls, config: CEMConfig) -> "Plan":
        h, d = config.horizon, config.action_dim
        mid = 0.5 * (config.action_low + config.action_high)
        return cls(np.tile(mid, (h, 1)), np.tile(config.init_std, (h, 1)))

    def shifted(self, config: CEMConfig) -> "Plan":
        """Drop the executed step and pad the tail with (0, init_std)."""
        mu = np.vstack([self.mu[1:], np.zeros((1, config.action_dim))])
        sigma = np.vstack([self.sigma[1:], config.init_std[None, :]])
        return Plan(mu, sigma)


def rollout_returns(model, reward_fn, s0, actions) -> np.ndarray:
    """Sum of predicted rewards for a batch of action sequences ``(N, h, d)``.

    Any sequence whose predicted states become non-finite gets ``-inf``.
    """
    actions = np.asarray(actions, dtype=np.float64)
    n, h, _ = actions.shape
    s = np.tile(np.asarray(s0, dtype=np.float64), (n, 1))
    total = np.zeros(n)
    valid = np.ones(n, dtype=bool)
    with np.errstate(all="ignore"):
        for k in range(h):
            s = model(s, actions[:, k])
            ok = np.isfinite(s).all(axis=1)
            valid &= ok
            s = np.where(ok[:, None], s, 0.0)
            total += np.where(valid, reward_fn(s, actions[:, k]), 0.0)
    return np.where(valid & np.isfinite(total), total, -np.inf)


def rollout_return(model, reward_fn, s0, action_seq) -> float:
    return float(rollout_returns(model, reward_fn, s0, np.asarray(action_seq)[None])[0])


def cem_plan(model, reward_fn, s0, config: CEMConfig, warm_start: Plan | None = None,
             rng: np.random.Generator | None = None):
    """Optimize an action sequence under ``model``; returns ``(elite mean, Plan)``."""
    rng = rng if rng is not None else np.random.default_rng()
    plan = warm_start if warm_start is not None else Plan.initial(config)
    mu, sigma = plan.mu.copy(), plan.sigma.copy()
    if mu.shape != (config.horizon, config.action_dim):
        raise ConfigurationError(f"warm start has shape {mu.shape}, expected "
                                 f"({config.horizon}, {config.action_dim})")
    n_elite = config.n_elite
    for _ in range(config.iterations):
        noise = rng.standard_normal((config.population, config.horizon, config.action_dim))
        cand = np.clip(mu + sigma * noise, config.action_low, config.action_high)
        returns = rollout_returns(model, reward_fn, s0, cand)
        finite = np.isfinite(returns)
        if not finite.any():
            raise PlannerFailure("every candidate rollout diverged")
        order = np.argsort(-np.where(finite, returns, -np.inf), kind="stable")
        elite = cand[order[: min(n_elite, int(finite.sum()))]]
        mu = elite.mean(axis=0)
        sigma = np.maximum(elite.std(axis=0), config.sigma_floor)
    return mu.copy(), Plan(mu, sigma)


@dataclass
class EpisodeTrace:
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    next_states: list = field(default_factory=list)
    failed: bool = False

    def __len__(self):
        return len(self.actions)

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.rewards)) if self.rewards else 0.0


def mpc_episode(env, model, reward_fn, K: int, config: CEMConfig, rng: np.random.Generator,
                on_transition=None) -> EpisodeTrace:
    """Replan every step and execute only the first action.

    ``env`` must already be reset. ``on_transition(s, a, s_next)`` is called
    after every executed step (the runner uses it to fill the replay buffer).
    A planner failure ends the episode early with ``trace.failed`` set.
    """
    trace = EpisodeTrace()
    s = env.state.copy()
    plan = None
    for _ in range(K):
        try:
            seq, plan = cem_plan(model, reward_fn, s, config,
                                 plan.shifted(config) if plan is not None else None, rng)
        except PlannerFailure:
            trace.failed = True
            break
        a = np.clip(seq[0], config.action_low, config.action_high)
        s_next, r, done = env.step(a)
        trace.states.append(s)
        trace.actions.append(a)
        trace.rewards.append(r)
        trace.next_states.append(s_next)
        if on_transition is not None:
            on_transition(s, a, s_next)
        s = s_next
        if done:
            break
    return trace


def random_episode(env, K: int, rng: np.random.Generator, on_transition=None) -> EpisodeTrace:
    """Uniformly random actions within the env's bounds."""
    trace = EpisodeTrace()
    s = env.state.copy()
    lo, hi = env.spec.action_low, env.spec.action_high
    for _ in range(K):
        a = rng.uniform(lo, hi)
        s_next, r, done = env.step(a)
        trace.states.append(s)
        trace.actions.append(a)
        trace.rewards.append(r)
        trace.next_states.append(s_next)
        if on_transition is not None:
            on_transition(s, a, s_next)
        s = s_next
        if done:
            break
    return trace
