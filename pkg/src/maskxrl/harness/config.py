"""Experiment configuration: dataclasses, TOML loading, validation."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..collaboration import EpsilonSchedule
from ..envs import ENV_NAMES, make_env
from ..errors import ConfigError
from ..masking import MaskConfig
from ..ppo import PpoConfig

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

OUTPUT_ROOT_ENV = "MASKXRL_OUTPUT_ROOT"


@dataclass
class BufferConfig:
    capacity: int = 512
    interval: int = 50
    topk: int = 16
    delta: float = 0.1
    w_min: float = 0.2
    # optionally feed peers' broadcast scores into the mask loss as probe results
    share_scores: bool = False


@dataclass
class ExperimentConfig:
    env: str = "highway"
    env_options: dict = field(default_factory=dict)
    n_agents: int = 2
    t_max: int = 50
    rollout_length: int = 512
    n_envs: int = 1
    hidden: tuple = (64, 64)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    buffer: BufferConfig = field(default_factory=BufferConfig)
    probes_per_iter: int = 16
    probe_pairs: int = 2
    mask_steps: int = 1
    eval_interval: int = 5
    n_eval_episodes: int = 20
    critical_k: int = 5
    reward_target: float | None = None
    convergence_window: int = 10
    convergence_tol: float = 0.01
    seed: int = 0
    disable_comm: bool = False
    disable_adaptive_epsilon: bool = False
    deterministic: bool = True
    output_dir: str | None = None
    run_name: str | None = None

    def validate(self):
        if self.env not in ENV_NAMES:
            raise ConfigError(f"unknown env {self.env!r}; choose from {ENV_NAMES}")
        if self.env == "connect4" and self.n_agents != 2:
            raise ConfigError("connect4 needs n_agents = 2")
        if self.n_agents < 1:
            raise ConfigError("n_agents must be >= 1")
        try:
            make_env(self.env, n_agents=self.n_agents, **self.env_options)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid environment settings: {e}") from e
        for name in ("t_max", "rollout_length", "n_envs", "eval_interval", "n_eval_episodes",
                     "critical_k", "convergence_window", "probes_per_iter", "probe_pairs",
                     "mask_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_eval_episodes < 2:
            raise ConfigError("n_eval_episodes must be >= 2")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden sizes must be positive")
        self.ppo.validate()
        self.mask.validate()
        self.epsilon.validate()
        b = self.buffer
        if b.capacity < 0 or b.interval < 1 or b.topk < 1 or b.delta < 0 or not 0 <= b.w_min <= 1:
            raise ConfigError("invalid buffer parameters")
        return self

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def fingerprint(self):
        d = self.to_dict()
        d.pop("output_dir", None)
        d.pop("run_name", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:8]

    def run_id(self):
        return f"{self.env}-s{self.seed}-{self.fingerprint()}"

    def output_root(self):
        if self.output_dir:
            return Path(self.output_dir)
        return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))

    def run_dir(self):
        return self.output_root() / (self.run_name or self.run_id())

    def replace(self, **changes):
        return config_from_dict({**self.to_dict(), **changes})


_NESTED = {"ppo": PpoConfig, "mask": MaskConfig, "epsilon": EpsilonSchedule, "buffer": BufferConfig}


def config_from_dict(d):
    d = dict(d)
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for k, v in d.items():
        if k in _NESTED:
            cls = _NESTED[k]
            if isinstance(v, cls):
                kwargs[k] = v
                continue
            sub_known = {f.name for f in fields(cls)}
            bad = set(v) - sub_known
            if bad:
                raise ConfigError(f"unknown keys in [{k}]: {sorted(bad)}")
            try:
                kwargs[k] = cls(**v)
            except TypeError as e:
                raise ConfigError(f"bad [{k}] section: {e}") from e
        elif k == "hidden":
            kwargs[k] = tuple(int(h) for h in v)
        elif k == "env_options":
            kwargs[k] = dict(v)
        else:
            kwargs[k] = v
    try:
        return ExperimentConfig(**kwargs).validate()
    except TypeError as e:
        raise ConfigError(f"bad config value: {e}") from e


def load_config(path, overrides=None):
    """Read a TOML config file; ``overrides`` (flat or nested dict) win over file values."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    for k, v in (overrides or {}).items():
        if isinstance(v, dict):
            data.setdefault(k, {}).update(v)
        else:
            data[k] = v
    return config_from_dict(data)
