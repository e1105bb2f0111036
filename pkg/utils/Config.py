import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional

from utils.errors import ConfigError

log = logging.getLogger(__name__)

STAGES = ("low", "high", "mix", "a2c")
ENVS = ("doorkey", "trashgrid")
ACTIVATIONS = ("relu", "tanh")
INITS = ("orthogonal", "uniform_scaled")

DEFAULT_C = {"doorkey": 16, "trashgrid": 32}
DEFAULT_T = {"doorkey": 64, "trashgrid": 128}

RESOLVED_CONFIG_NAME = "resolved_config.json"


@dataclass
class RunConfig:
    stage: str = "low"
    total_steps: int = 50000
    seeds: List[int] = field(default_factory=lambda: [0])
    buffer_size: int = 50000
    batch_size: int = 64
    warmup_steps: int = 500
    train_every: int = 1
    lr_low: float = 1e-3
    lr_high: float = 5e-4
    lr_mix: float = 5e-4
    lr_ae: float = 1e-3
    lr_a2c: float = 7e-4
    target_update: int = 200
    eval_every: int = 5000
    eval_episodes: int = 20
    early_stop: bool = True
    adapt: bool = True
    smoothing: float = 0.89
    log_every: int = 10
    ae_dataset_size: int = 2000
    ae_pretrain_steps: int = 2000
    ae_stop_loss: float = 1e-3
    a2c_n_steps: int = 5
    a2c_entropy: float = 0.01
    a2c_value_coef: float = 0.5
    n_jobs: int = 1
    tensorboard: bool = False
    progress: bool = True
    out_dir: str = "runs/default"

    def validate(self):
        if self.stage not in STAGES:
            raise ConfigError("must be one of {}".format(STAGES), key="run.stage")
        if not self.seeds:
            raise ConfigError("at least one seed is required", key="run.seeds")
        for name in ("total_steps", "buffer_size", "batch_size", "train_every", "target_update",
                     "eval_every", "eval_episodes", "log_every", "ae_dataset_size", "ae_pretrain_steps",
                     "a2c_n_steps", "n_jobs"):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", key="run." + name)
        for name in ("lr_low", "lr_high", "lr_mix", "lr_ae", "lr_a2c"):
            if getattr(self, name) <= 0:
                raise ConfigError("must be > 0", key="run." + name)
        if not 0.0 <= self.smoothing < 1.0:
            raise ConfigError("must lie in [0, 1)", key="run.smoothing")
        if self.warmup_steps < 0:
            raise ConfigError("must be >= 0", key="run.warmup_steps")


@dataclass
class EnvConfig:
    name: str = "doorkey"
    max_steps: Optional[int] = None
    beta: float = 0.5
    reward_scale: float = 1.0
    size: int = 8
    box_same_room_prob: float = 0.2
    grid_size: int = 10
    n_agents: int = 3
    n_small: int = 5
    n_big: int = 5
    max_load: int = 3
    collision_penalty: float = -0.1
    step_penalty: float = -0.01

    def validate(self):
        if self.name not in ENVS:
            raise ConfigError("must be one of {}".format(ENVS), key="env.name")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("must be >= 1", key="env.max_steps")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("must lie in [0, 1]", key="env.beta")
        if not 0.0 <= self.box_same_room_prob <= 1.0:
            raise ConfigError("must lie in [0, 1]", key="env.box_same_room_prob")
        if self.size < 5:
            raise ConfigError("must be >= 5", key="env.size")
        if self.grid_size < 4:
            raise ConfigError("must be >= 4", key="env.grid_size")
        for name in ("n_agents", "max_load"):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", key="env." + name)
        for name in ("n_small", "n_big"):
            if getattr(self, name) < 0:
                raise ConfigError("must be >= 0", key="env." + name)

    def resolve(self):
        if self.max_steps is None:
            self.max_steps = DEFAULT_T[self.name]


@dataclass
class HrlConfig:
    c: Optional[int] = None
    T_M: Optional[int] = None
    beta_low: float = 0.5
    gamma: float = 0.99
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 20000
    temperature_start: float = 1.0
    temperature_end: float = 0.1
    temperature_decay_steps: int = 20000
    low_eval_epsilon: float = 0.0
    hidden_sizes: List[int] = field(default_factory=lambda: [64, 64])
    hidden_activation: str = "relu"
    init: str = "orthogonal"
    share_low: bool = True
    her: bool = True

    def validate(self):
        if self.c is not None and self.c < 1:
            raise ConfigError("must be >= 1", key="hrl.c")
        if self.T_M is not None and self.T_M < 1:
            raise ConfigError("must be >= 1", key="hrl.T_M")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("must lie in [0, 1)", key="hrl.gamma")
        if not 0.0 <= self.beta_low <= 1.0:
            raise ConfigError("must lie in [0, 1]", key="hrl.beta_low")
        for name in ("epsilon_start", "epsilon_end", "low_eval_epsilon"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError("must lie in [0, 1]", key="hrl." + name)
        for name in ("temperature_start", "temperature_end"):
            if getattr(self, name) <= 0:
                raise ConfigError("must be > 0", key="hrl." + name)
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise ConfigError("must be a nonempty list of positive sizes", key="hrl.hidden_sizes")
        if self.hidden_activation not in ACTIVATIONS:
            raise ConfigError("must be one of {}".format(ACTIVATIONS), key="hrl.hidden_activation")
        if self.init not in INITS:
            raise ConfigError("must be one of {}".format(INITS), key="hrl.init")

    def resolve(self, env_name):
        if self.c is None:
            self.c = DEFAULT_C[env_name]
        if self.T_M is None:
            self.T_M = self.c
        if self.T_M < self.c:
            raise ConfigError("must be >= hrl.c ({})".format(self.c), key="hrl.T_M")

    def epsilon(self, step):
        return _linear_schedule(self.epsilon_start, self.epsilon_end, self.epsilon_decay_steps, step)

    def temperature(self, step):
        return _linear_schedule(self.temperature_start, self.temperature_end, self.temperature_decay_steps, step)


@dataclass
class TriggerConfig:
    eps1: float = 0.9
    eps2: float = 0.2
    d_f: int = 16
    ae_hidden: int = 64
    temperature: float = 1.0

    def validate(self):
        if not -1.0 < self.eps1 <= 1.0:
            raise ConfigError("must lie in (-1, 1]", key="trigger.eps1")
        if self.eps2 < 0:
            raise ConfigError("must be >= 0", key="trigger.eps2")
        if self.d_f < 1 or self.ae_hidden < 1:
            raise ConfigError("network sizes must be >= 1", key="trigger.d_f")
        if self.temperature <= 0:
            raise ConfigError("must be > 0", key="trigger.temperature")


@dataclass
class MixerConfig:
    hidden_dim: int = 32
    hyper_hidden: int = 64
    target_update: int = 200

    def validate(self):
        for name in ("hidden_dim", "hyper_hidden", "target_update"):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", key="mixer." + name)


SECTIONS = {
    "run": RunConfig,
    "env": EnvConfig,
    "hrl": HrlConfig,
    "trigger": TriggerConfig,
    "mixer": MixerConfig,
}


@dataclass
class GmahConfig:
    run: RunConfig = field(default_factory=RunConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    hrl: HrlConfig = field(default_factory=HrlConfig)
    trigger: TriggerConfig = field(default_factory=TriggerConfig)
    mixer: MixerConfig = field(default_factory=MixerConfig)
    # keys filled from env dependent defaults rather than given explicitly
    defaulted: frozenset = field(default_factory=frozenset, compare=False, repr=False)

    def validate(self):
        for name in SECTIONS:
            getattr(self, name).validate()
        return self

    def resolve(self):
        unset = {key for key, value in (("env.max_steps", self.env.max_steps), ("hrl.c", self.hrl.c),
                                        ("hrl.T_M", self.hrl.T_M)) if value is None}
        self.env.resolve()
        self.hrl.resolve(self.env.name)
        self.defaulted = self.defaulted | frozenset(unset)
        return self

    def to_dict(self):
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def config_hash(self):
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def _linear_schedule(start, end, decay_steps, step):
    if decay_steps <= 0:
        return end
    frac = min(1.0, max(0.0, step / float(decay_steps)))
    return start + frac * (end - start)


def _check_type(section, key, value, default):
    name = "{}.{}".format(section, key)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError("expected a boolean, got {!r}".format(value), key=name)
    elif isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("expected an integer, got {!r}".format(value), key=name)
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("expected a number, got {!r}".format(value), key=name)
        return float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError("expected a string, got {!r}".format(value), key=name)
    elif isinstance(default, list):
        if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, int) for v in value):
            raise ConfigError("expected a list of integers, got {!r}".format(value), key=name)
        return list(value)
    elif value is not None and (isinstance(value, bool) or not isinstance(value, int)):
        # Optional[int] fields default to None
        raise ConfigError("expected an integer or null, got {!r}".format(value), key=name)
    return value


def section_from_dict(section, data):
    cls = SECTIONS[section]
    if not isinstance(data, dict):
        raise ConfigError("section must be a JSON object", key=section)
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    values = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError("unknown key", key="{}.{}".format(section, key))
        values[key] = _check_type(section, key, value, getattr(defaults, key))
    return cls(**values)


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("top level must be a JSON object")
    for key in data:
        if key not in SECTIONS:
            raise ConfigError("unknown section", key=key)
    cfg = GmahConfig(**{name: section_from_dict(name, data.get(name, {})) for name in SECTIONS})
    return cfg.validate().resolve()


def parse_config(path=None, text=None):
    if text is None:
        if path is None:
            return config_from_dict({})
        try:
            with open(path) as f:
                text = f.read()
        except (OSError, UnicodeDecodeError) as e:
            raise ConfigError("cannot read config file {}: {}".format(path, e))
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("malformed JSON: {}".format(e.msg), line=e.lineno)
    return config_from_dict(data)


def echo_config(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, RESOLVED_CONFIG_NAME)
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
    log.debug("resolved config written to {}".format(path))
    return path


def apply_overrides(cfg, seed=None, env=None, stage=None, adapt=None, episodes=None, out=None):
    """Overlay CLI flags on a parsed config and re-resolve env dependent defaults."""
    data = cfg.to_dict()
    defaulted = cfg.defaulted
    if env is not None and env != data["env"]["name"]:
        data["env"]["name"] = env
        # only defaults are recomputed for the new env, explicit values are kept
        for key in cfg.defaulted:
            section, name = key.split(".")
            data[section][name] = None
        defaulted = frozenset()
    if seed is not None:
        data["run"]["seeds"] = [int(seed)]
    if stage is not None:
        data["run"]["stage"] = stage
    if adapt is not None:
        data["run"]["adapt"] = adapt == "on" if isinstance(adapt, str) else bool(adapt)
    if episodes is not None:
        data["run"]["eval_episodes"] = int(episodes)
    out = os.environ.get("GMAH_OUT") or out
    if out is not None:
        data["run"]["out_dir"] = out
    resolved = config_from_dict(data)
    resolved.defaulted = resolved.defaulted | defaulted
    return resolved
