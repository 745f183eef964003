import numpy as np
import pytest

from crlkit.envs import Env, make_env_spec
from crlkit.errors import ConfigurationError
from crlkit.planner import CEMConfig, Plan, cem_plan, mpc_episode, random_episode, rollout_returns

from oracles import grid_argmax

TARGET = 0.37


def step_model(s, a):
    return s + a


def quad_reward(s, a):
    return -((s[..., 0] - TARGET) ** 2) - 0.1 * a[..., 0] ** 2


def test_cem_finds_quadratic_optimum():
    cfg = CEMConfig(1, 200, [-1.0], [1.0], iterations=8)
    best = grid_argmax(lambda a: -(a - TARGET) ** 2 - 0.1 * a ** 2, -1, 1, 1e-4)
    for seed in range(5):
        mu, _ = cem_plan(step_model, quad_reward, np.zeros(1), cfg, rng=np.random.default_rng(seed))
        assert abs(mu[0, 0] - best) < 0.02


def test_elite_size_and_config_checks():
    assert CEMConfig(5, 500, [-1], [1]).n_elite == 50
    with pytest.raises(ConfigurationError):
        CEMConfig(5, 10, [-1], [1])          # a single elite cannot define a spread
    with pytest.raises(ConfigurationError):
        CEMConfig(0, 100, [-1], [1])
    with pytest.raises(ConfigurationError):
        CEMConfig(5, 100, [1], [-1])


def test_plan_shift_drops_first_step():
    cfg = CEMConfig(3, 20, [-1, -1], [1, 1])
    p = Plan(np.arange(6.0).reshape(3, 2), np.ones((3, 2)))
    q = p.shifted(cfg)
    np.testing.assert_array_equal(q.mu[:2], p.mu[1:])
    np.testing.assert_array_equal(q.mu[2], [0, 0])
    np.testing.assert_array_equal(q.sigma[2], cfg.init_std)


def test_rollouts_with_nonfinite_states_get_minus_inf():
    def model(s, a):
        return np.where(a > 0.5, np.nan, s + a)
    acts = np.array([[[0.1], [0.2]], [[0.9], [0.0]]])
    with np.errstate(invalid="ignore"):
        r = rollout_returns(model, quad_reward, np.zeros(1), acts)
    assert np.isfinite(r[0]) and r[1] == -np.inf


def test_mpc_with_true_model_pushes_block_to_goal():
    spec = make_env_spec("slide")
    env = Env(spec, 1)
    env.reset()
    cfg = CEMConfig(10, 100, spec.action_low, spec.action_high)
    tr = mpc_episode(env, env.dynamics, env.reward, spec.K, cfg, np.random.default_rng(0))
    env.reset()
    rand = random_episode(env, spec.K, np.random.default_rng(0))
    assert len(tr) == spec.K and not tr.failed
    assert tr.total_reward > 3 * rand.total_reward


def test_mpc_reports_planner_failure():
    spec = make_env_spec("slide")
    env = Env(spec, 1)
    env.reset()
    cfg = CEMConfig(2, 20, spec.action_low, spec.action_high)
    with np.errstate(invalid="ignore"):
        tr = mpc_episode(env, lambda s, a: s * np.nan, env.reward, 5, cfg, np.random.default_rng(0))
    assert tr.failed and len(tr) == 0


def test_random_episode_respects_bounds_and_reports_transitions():
    spec = make_env_spec("latch")
    env = Env(spec, 2)
    env.reset()
    seen = []
    tr = random_episode(env, 15, np.random.default_rng(0), lambda s, a, sn: seen.append(a))
    assert len(seen) == 15 == len(tr)
    acts = np.array(tr.actions)
    assert (acts >= spec.action_low).all() and (acts <= spec.action_high).all()
