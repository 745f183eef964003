import numpy as np
import pytest

from crlkit.config import RunConfig, defaults, merge


def tiny_config(env="slide", **sections) -> RunConfig:
    """Desk profile shrunk to seconds: short schedule, small nets, cheap CEM."""
    base = merge(defaults(env, "desk"), {
        "schedule": {"M": 2, "S": 5, "eval_episodes": 1},
        "model": {"target_hidden": [16, 16], "hnet_hidden": [8, 8]},
        "cem": {"horizon": 3, "population": 20, "iterations": 2},
    })
    return RunConfig(merge(base, sections))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
