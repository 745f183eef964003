"""Run configuration: built-in defaults, then a JSON file, then command-line overrides.

Two profiles exist for every environment. ``full``, the default, carries the
published hyper-parameters; ``desk`` shrinks the schedule and networks so a
five-task comparison runs in minutes on one core. The resolved config is a
plain nested dict that is echoed to every run directory.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, fields

from .envs import ENV_NAMES, EnvSpec, make_env_spec
from .errors import ConfigurationError
from .learners import METHODS, LearnerConfig
from .planner import CEMConfig
from .runner import Schedule

PROFILES = ("full", "desk")
# "single" trains every task from scratch; it yields the r* references, not a continual run
CLI_METHODS = METHODS + ("single",)

_SCHEDULE_KEYS = tuple(f.name for f in fields(Schedule))
_MODEL_KEYS = tuple(f.name for f in fields(LearnerConfig) if f.name not in ("lr_theta", "lr_e"))

# published values per environment; K is each environment's own episode length
_FULL = {
    "slide": {"schedule": {"M": 100, "S": 500}, "model": {"beta_reg": 0.5, "hnet_hidden": [50, 50]}},
    "push": {"schedule": {"M": 20, "S": 2000},
             "model": {"beta_reg": 0.05, "hnet_activation": "elu", "hnet_hidden": [50, 50]}},
    "latch": {"schedule": {"M": 300, "S": 200},
              "model": {"beta_reg": 0.5, "hnet_hidden": [256, 256], "target_hidden": [200, 200, 200, 200]},
              "cem": {"horizon": 10, "population": 2000}},
}

_DESK_COMMON = {
    "schedule": {"M": 30, "S": 300, "alpha_theta": 1e-3, "alpha_e": 1e-3, "eval_episodes": 5},
    "model": {"target_hidden": [64, 64], "squared_loss": True, "clip_margin": 0.0},
    "cem": {"horizon": 10, "population": 100},
}
_DESK = {
    "slide": {},
    "push": {},
    "latch": {"model": {"hnet_hidden": [50, 50]}},
}


def merge(base: dict, over: dict) -> dict:
    """Recursive dict update returning a new dict."""
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def defaults(env: str = "slide", profile: str = "full") -> dict:
    """Fully populated config dict for ``env`` under ``profile``."""
    if env not in ENV_NAMES:
        raise ConfigurationError(f"env: unknown value {env!r}; valid: {', '.join(ENV_NAMES)}")
    if profile not in PROFILES:
        raise ConfigurationError(f"profile: unknown value {profile!r}; valid: {', '.join(PROFILES)}")
    spec = make_env_spec(env)
    model = {k: getattr(LearnerConfig, k) for k in _MODEL_KEYS}
    model = {k: list(v) if isinstance(v, tuple) else v for k, v in model.items()}
    base = {
        "env": env, "profile": profile, "method": "hypercrl", "seeds": [0], "n_tasks": spec.n_tasks,
        "out_dir": "runs",
        "schedule": {k: getattr(Schedule, k) for k in _SCHEDULE_KEYS} | {"K": spec.K},
        "cem": {"horizon": 20, "population": 500, "iterations": 5, "elite_frac": 0.1},
        "model": model,
    }
    cfg = merge(base, _FULL[env])
    if profile == "desk":
        cfg = merge(merge(cfg, _DESK_COMMON), _DESK[env])
    return cfg


# ---------------------------------------------------------------- validation

def _kind(key: str, default):
    if key == "model.clip_margin":
        return "float?"
    if isinstance(default, bool):
        return "bool"
    if isinstance(default, int):
        return "int"
    if isinstance(default, float):
        return "float"
    if isinstance(default, str):
        return "str"
    if isinstance(default, list):
        return "int-list"
    raise AssertionError(key)


def _check_value(key: str, kind: str, v):
    ok = {
        "bool": lambda x: isinstance(x, bool),
        "int": lambda x: isinstance(x, int) and not isinstance(x, bool),
        "float": lambda x: isinstance(x, (int, float)) and not isinstance(x, bool),
        "float?": lambda x: x is None or (isinstance(x, (int, float)) and not isinstance(x, bool)),
        "str": lambda x: isinstance(x, str),
        "int-list": lambda x: isinstance(x, list) and all(isinstance(i, int) and not isinstance(i, bool) for i in x),
    }[kind](v)
    if not ok:
        raise ConfigurationError(f"{key}: expected {kind}, got {type(v).__name__} {v!r}")
    if kind == "float" and isinstance(v, int):
        return float(v)
    return v


def _validate(over: dict, ref: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in over.items():
        key = prefix + k
        if k not in ref:
            raise ConfigurationError(f"unknown config key {key!r}")
        if isinstance(ref[k], dict):
            if not isinstance(v, dict):
                raise ConfigurationError(f"{key}: expected a section, got {v!r}")
            out[k] = _validate(v, ref[k], key + ".")
        else:
            out[k] = _check_value(key, _kind(key, ref[k]), v)
    return out


def parse_set(items) -> dict:
    """``["schedule.M=30", "method=ewc"]`` as a nested override dict.

    Values are read as JSON when possible (numbers, booleans, lists, null),
    otherwise kept as strings.
    """
    out: dict = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        node = out
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = val
    return out


def parse_seeds(text) -> list:
    """``"0..3"`` -> [0, 1, 2, 3]; ``"0,2,5"`` -> [0, 2, 5]; an int -> [int]."""
    if isinstance(text, int):
        return [text]
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = text.split("..")
            seeds = list(range(int(lo), int(hi) + 1))
        else:
            seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigurationError(f"seeds: cannot parse {text!r}; use e.g. 0..3 or 0,1,2") from None
    if not seeds:
        raise ConfigurationError(f"seeds: empty selection {text!r}")
    return seeds


def resolve(file_cfg: dict | None = None, overrides: dict | None = None) -> dict:
    """Defaults <- file <- overrides, validated. Returns the resolved dict."""
    file_cfg, overrides = file_cfg or {}, overrides or {}
    pick = lambda k, d: overrides.get(k, file_cfg.get(k, d))
    env, profile = pick("env", "slide"), pick("profile", "full")
    if not isinstance(env, str) or not isinstance(profile, str):
        raise ConfigurationError("env and profile must be strings")
    base = defaults(env, profile)
    cfg = merge(merge(base, _validate(file_cfg, base)), _validate(overrides, base))
    if cfg["method"] not in CLI_METHODS:
        raise ConfigurationError(f"method: unknown value {cfg['method']!r}; valid: {', '.join(CLI_METHODS)}")
    if not cfg["seeds"]:
        raise ConfigurationError("seeds: at least one seed is required")
    if not 1 <= cfg["n_tasks"] <= 5:
        raise ConfigurationError(f"n_tasks: must be in 1..5, got {cfg['n_tasks']}")
    RunConfig(cfg)  # builds every component once so bad values fail here
    return cfg


def load_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigurationError(f"cannot read config file {path}: {e}") from e
    if not text.strip():
        return {}
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    return data


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


@dataclass
class RunConfig:
    """Typed view over a resolved config dict."""
    data: dict

    def __post_init__(self):
        self.env_spec()
        self.schedule()
        self.cem(self.env_spec())
        self.learner()

    @property
    def env(self) -> str:
        return self.data["env"]

    @property
    def method(self) -> str:
        return self.data["method"]

    @property
    def seeds(self) -> list:
        return list(self.data["seeds"])

    def env_spec(self) -> EnvSpec:
        return make_env_spec(self.data["env"], K=self.data["schedule"]["K"])

    def schedule(self) -> Schedule:
        return Schedule(**self.data["schedule"])

    def cem(self, spec: EnvSpec | None = None) -> CEMConfig:
        spec = spec or self.env_spec()
        c = self.data["cem"]
        return CEMConfig(c["horizon"], c["population"], spec.action_low, spec.action_high, c["iterations"],
                         c["elite_frac"])

    def learner(self) -> LearnerConfig:
        m = dict(self.data["model"])
        m["target_hidden"] = tuple(m["target_hidden"])
        m["hnet_hidden"] = tuple(m["hnet_hidden"])
        s = self.data["schedule"]
        return LearnerConfig(**m, lr_theta=s["alpha_theta"], lr_e=s["alpha_e"])
