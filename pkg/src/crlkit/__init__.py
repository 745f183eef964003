"""Continual model-based reinforcement learning with task-conditioned hypernetworks.

A hypernetwork maps a learned task embedding to the weights of a dynamics
model; a CEM planner acts with that model. Fine-tuning, EWC, SI, coreset and
multi-task baselines, three analytic environments, a seeded runner and
retention metrics come with it.
"""

from .config import RunConfig, resolve
from .envs import Env, make_env_spec
from .learners import METHODS, LearnerConfig, make_learner
from .metrics import aggregate, forward_transfer, format_table, retention
from .planner import CEMConfig, cem_plan, mpc_episode
from .runner import RunRecord, Schedule, run_sequence, run_single_task_baseline
from .storage import load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "CEMConfig", "Env", "LearnerConfig", "METHODS", "RunConfig", "RunRecord", "Schedule", "aggregate",
    "cem_plan", "format_table", "forward_transfer", "load_checkpoint", "make_env_spec", "make_learner",
    "mpc_episode", "resolve", "retention", "run_sequence", "run_single_task_baseline", "save_checkpoint",
]
