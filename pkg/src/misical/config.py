"""Run configuration: defaults, presets, config-file parsing, precedence.

Values resolve as CLI flag > config-file key > preset/built-in default.
The config file is INI-style with named sections; every key is also a
CLI flag. Unknown sections or keys are rejected.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError

REWARD_KINDS = ("categorical", "delta-iou")


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(text).split(",") if x.strip() != "")


@dataclass(frozen=True)
class RunConfig:
    # [run]
    pool: str = ""
    target_class: int = -1
    policy: str = "misical"
    seeds: tuple = (0, 1, 2, 3, 4)
    out: str = "runs"
    reward: str = "categorical"
    iou_model: str = ""              # explicit accuracy-model path; "" = sidecar auto
    plots: bool = True
    save_nets: bool = False
    # [budget]
    initial_frac: float = 0.025
    initial_count: int = 0           # > 0 overrides initial_frac
    total_frac: float = 0.05
    # [agent]
    candidates_per_event: int = 2000
    picks_per_event: int = 100
    epsilon_kind: str = "constant"
    epsilon: float = 0.05
    epsilon_start: float = 1.0
    epsilon_end: float = 0.1
    epsilon_steps: int = 0           # 0 = auto: half the planned exploration events
    pretrain_epochs: int = 4
    pretrain_epsilon: float = 0.05
    batches_per_event: int = 1
    # [network]
    hidden: tuple = (128, 64)
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    rms_decay: float = 0.99
    rms_epsilon: float = 1e-8
    grad_clip: float = 0.01
    beta: float = 0.002
    gamma: float = 0.0
    # [buffer]
    buffer_capacity: int = 100_000
    batch_size: int = 256
    n_step: int = 3
    eta: float = 0.6
    zeta_start: float = 0.4
    priority_floor: float = 1e-3

    def validate(self) -> None:
        if not self.pool:
            raise ConfigError("pool: a pool file path is required")
        if self.target_class < 0:
            raise ConfigError("target_class: a target class index is required")
        if self.policy not in ("random", "entropy", "bald", "coreset", "misical"):
            raise ConfigError(f"policy: unknown policy {self.policy!r}")
        if self.reward not in REWARD_KINDS:
            raise ConfigError(f"reward: must be one of {REWARD_KINDS}, got {self.reward!r}")
        if not self.seeds:
            raise ConfigError("seeds: at least one seed is required")
        if not 0.0 < self.total_frac <= 1.0:
            raise ConfigError(f"total_frac: must be in (0, 1], got {self.total_frac}")
        if self.initial_count <= 0 and not 0.0 < self.initial_frac <= 1.0:
            raise ConfigError(f"initial_frac: must be in (0, 1], got {self.initial_frac}")
        if self.picks_per_event < 1 or self.candidates_per_event < 1:
            raise ConfigError("picks_per_event and candidates_per_event must be >= 1")
        if self.picks_per_event > self.candidates_per_event:
            raise ConfigError("picks_per_event cannot exceed candidates_per_event")
        for name in ("epsilon", "epsilon_start", "epsilon_end", "pretrain_epsilon"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}: must be in [0, 1], got {v}")
        if self.epsilon_kind not in ("constant", "linear"):
            raise ConfigError(f"epsilon_kind: must be constant or linear, got {self.epsilon_kind!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma: must be in [0, 1], got {self.gamma}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta: must be in [0, 1], got {self.beta}")
        if self.eta < 0:
            raise ConfigError(f"eta: must be >= 0, got {self.eta}")
        if not 0.0 <= self.zeta_start <= 1.0:
            raise ConfigError(f"zeta_start: must be in [0, 1], got {self.zeta_start}")
        if self.priority_floor <= 0:
            raise ConfigError("priority_floor: must be > 0")
        if min(self.buffer_capacity, self.batch_size, self.n_step,
               self.batches_per_event) < 1:
            raise ConfigError("buffer/batch/n_step/batches_per_event must be >= 1")
        if self.pretrain_epochs < 0 or self.epsilon_steps < 0:
            raise ConfigError("pretrain_epochs and epsilon_steps must be >= 0")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden layer sizes must be >= 1")


# section -> key -> parser; key names equal RunConfig field names
SCHEMA = {
    "run": {
        "pool": str, "target_class": int, "policy": str, "seeds": _parse_int_list,
        "out": str, "reward": str, "iou_model": str, "plots": _parse_bool,
        "save_nets": _parse_bool,
    },
    "budget": {
        "initial_frac": float, "initial_count": int, "total_frac": float,
    },
    "agent": {
        "candidates_per_event": int, "picks_per_event": int, "epsilon_kind": str,
        "epsilon": float, "epsilon_start": float, "epsilon_end": float,
        "epsilon_steps": int, "pretrain_epochs": int, "pretrain_epsilon": float,
        "batches_per_event": int,
    },
    "network": {
        "hidden": _parse_int_list, "learning_rate": float, "weight_decay": float,
        "rms_decay": float, "rms_epsilon": float, "grad_clip": float,
        "beta": float, "gamma": float,
    },
    "buffer": {
        "buffer_capacity": int, "batch_size": int, "n_step": int, "eta": float,
        "zeta_start": float, "priority_floor": float,
    },
}

# Main-text configuration is the built-in default; this preset mirrors the
# small-pool setup from the sensitivity studies.
PRESETS = {
    "default": {},
    "appendix": {
        "candidates_per_event": 1280,
        "picks_per_event": 64,
        "buffer_capacity": 6400,
        "initial_count": 250,
        "epsilon_kind": "linear",
        "epsilon_start": 1.0,
        "epsilon_end": 0.1,
        "epsilon_steps": 0,
    },
}


def preset_overrides(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    return dict(PRESETS[name])


def load_config_file(path) -> dict:
    """Parse an INI config file into {field: value}, rejecting unknown keys."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        known = SCHEMA[section]
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            try:
                values[key] = known[key](raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for [{section}] {key}: {raw!r} ({exc})") from exc
    return values


def build_run_config(preset: str = "default", file_values: dict | None = None,
                     cli_values: dict | None = None) -> RunConfig:
    """Merge defaults, preset, config file, then CLI overrides, and validate."""
    merged = {}
    merged.update(preset_overrides(preset))
    merged.update(file_values or {})
    merged.update({k: v for k, v in (cli_values or {}).items() if v is not None})
    valid_fields = {f.name for f in fields(RunConfig)}
    unknown = set(merged) - valid_fields
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = replace(RunConfig(), **merged)
    cfg.validate()
    return cfg
