"""Tour of the three scenes with the true dynamics in the planner's seat.

Before any learning happens it helps to know what "good" looks like. Here
the CEM/MPC loop plans with each task's exact step function, which gives an
upper reference for what a learned model can reach, next to what random
actions score.

    python demos/01_scenes_and_planner.py
"""

import numpy as np

from crlkit.envs import ENV_NAMES, Env, SlideTaskParams, make_env_spec, slide_state, slide_step
from crlkit.planner import CEMConfig, mpc_episode, random_episode

rng = np.random.default_rng(0)

# one physics sanity check first: a block coasting to rest on the slide table
v, mu = 1.2, 0.3
s = slide_state(ee=(-0.2, 0.15), b2=(0.06, 0.0), v2=v)
x0 = s[10:18].reshape(4, 2)[:, 0].mean()
for _ in range(40):
    s, _ = slide_step(s, np.zeros(2), SlideTaskParams(mu))
travel = s[10:18].reshape(4, 2)[:, 0].mean() - x0
print(f"block 2 coasted {travel:.6f} m; v^2/(2 mu g) = {v * v / (2 * mu * 9.81):.6f} m\n")

print(f"{'env':6} {'task':>4} {'random':>9} {'true-model MPC':>15}")
for name in ENV_NAMES:
    spec = make_env_spec(name)
    cem = CEMConfig(10, 100, spec.action_low, spec.action_high)
    for task in (1, spec.n_tasks):
        env = Env(spec, task)
        env.reset()
        rand = random_episode(env, spec.K, rng).total_reward
        env.reset()
        planned = mpc_episode(env, env.dynamics, env.reward, spec.K, cem, rng).total_reward
        print(f"{name:6} {task:>4} {rand:9.2f} {planned:15.2f}")
