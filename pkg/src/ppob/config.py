"""Trainer configuration, named presets, and the ``key = value`` text format."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Optional

from ppob.envs import ENVS
from ppob.errors import ConfigError
from ppob.objectives import KINDS, ObjectiveConfig

ENV_PREFIX = "PPOB_"


@dataclass(frozen=True)
class TrainerConfig:
    env: str = "corridor"
    iterations: int = 200  # L
    actors: int = 4  # N
    horizon: int = 32  # T
    epochs: int = 3  # K
    minibatch: int = 32  # M
    gamma: float = 0.99
    lam: float = 0.95
    lr: float = 3e-4
    anneal: bool = False
    anneal_clip: bool = False
    anneal_entropy: bool = False
    hidden: int = 64
    eval_every: int = 1
    eval_episodes: int = 5
    seed: int = 0
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    preset: str = ""

    def __post_init__(self):
        if self.env not in ENVS:
            raise ConfigError("env", f"unknown environment {self.env!r}; choose from {sorted(ENVS)}")
        for key in ("iterations", "actors", "horizon", "epochs", "minibatch", "hidden",
                    "eval_every", "eval_episodes"):
            if getattr(self, key) < 1:
                raise ConfigError(key, f"must be a positive integer, got {getattr(self, key)}")
        n = self.actors * self.horizon
        if self.minibatch > n:
            raise ConfigError("minibatch", f"M={self.minibatch} exceeds N*T={n}")
        if n % self.minibatch:
            raise ConfigError("minibatch", f"M={self.minibatch} does not divide N*T={n}")
        for key in ("gamma", "lam"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                raise ConfigError(key, "must lie in [0, 1]")
        if self.lr < 0:
            raise ConfigError("lr", "step size must be >= 0")

    @property
    def batch_size(self) -> int:
        return self.actors * self.horizon


# flat key -> (owner, field name); owner "o" is the nested ObjectiveConfig
_OBJECTIVE_KEYS = {
    "objective": "kind", "epsilon": "epsilon", "beta": "beta", "d_targ": "d_targ",
    "mu": "mu", "delta": "delta", "vf_coeff": "vf_coeff", "entropy_coeff": "entropy_coeff",
    "barrier_floor": "barrier_floor",
}
_TRAINER_KEYS = [f.name for f in fields(TrainerConfig) if f.name not in ("objective", "preset")]
KEYS = tuple(_TRAINER_KEYS + list(_OBJECTIVE_KEYS))
ALIASES = {
    "L": "iterations", "N": "actors", "T": "horizon", "K": "epochs", "M": "minibatch",
    "lambda": "lam", "step_size": "lr", "eps": "epsilon", "clip": "epsilon",
    "barrier_beta": "mu", "barrier_mu": "mu", "kind": "objective",
}
_TYPES = {f.name: f.type for f in fields(TrainerConfig)}
_TYPES.update({k: {f.name: f.type for f in fields(ObjectiveConfig)}[v] for k, v in _OBJECTIVE_KEYS.items()})


def canonical_key(key: str) -> str:
    k = key.strip()
    k = ALIASES.get(k, k)
    k = k.replace("-", "_")
    k = ALIASES.get(k, k)
    if k not in KEYS and k != "preset":
        raise ConfigError(key.strip(), "unknown configuration key")
    return k


def coerce(key: str, value):
    typ = _TYPES.get(key, "str")
    if not isinstance(value, str):
        return value
    v = value.strip()
    try:
        if typ == "bool":
            low = v.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(v)
        if typ == "int":
            return int(v)
        if typ == "float":
            return float(v)
    except ValueError:
        raise ConfigError(key, f"cannot parse {value!r} as {typ}") from None
    return v


def _table_atari(kind: str) -> dict:
    # Atari-style settings; barrier objectives also anneal the entropy bonus
    d = dict(env="cartpole", iterations=488, actors=16, horizon=128, epochs=3, minibatch=32 * 8,
             gamma=0.99, lam=0.95, lr=2.5e-4, anneal=True, vf_coeff=1.0, entropy_coeff=0.01,
             eval_every=10, eval_episodes=5)
    if kind == "clip":
        d.update(epsilon=0.1, anneal_clip=True)
    elif kind in ("adbar", "klbar"):
        d.update(mu=1.0, delta=0.5, anneal_entropy=True)
    return d


def _table_mujoco(kind: str) -> dict:
    d = dict(env="pendulum", iterations=488, actors=1, horizon=2048, epochs=10, minibatch=64,
             gamma=0.99, lam=0.95, lr=3e-4, anneal=False, vf_coeff=1.0, entropy_coeff=0.0,
             epsilon=0.2, eval_every=10, eval_episodes=5)
    if kind in ("adbar", "klbar"):
        d.update(mu=1.0, delta=0.5)
    return d


def _corridor_fast(kind: str) -> dict:
    return dict(env="corridor", iterations=200, actors=4, horizon=32, epochs=3, minibatch=32,
                gamma=0.99, lam=0.95, lr=3e-4, anneal=False, vf_coeff=1.0, entropy_coeff=0.0,
                epsilon=0.2, mu=1.0, delta=0.5, eval_every=1, eval_episodes=1)


def _cartpole_fast(kind: str) -> dict:
    return dict(env="cartpole", iterations=146, actors=8, horizon=256, epochs=10, minibatch=64,
                gamma=0.99, lam=0.95, lr=1e-3, anneal=False, vf_coeff=1.0, entropy_coeff=0.0,
                epsilon=0.2, mu=1.0, delta=0.5, eval_every=2, eval_episodes=5)


def _pendulum_fast(kind: str) -> dict:
    return dict(env="pendulum", iterations=100, actors=4, horizon=512, epochs=10, minibatch=64,
                gamma=0.95, lam=0.95, lr=1e-3, anneal=False, vf_coeff=1.0, entropy_coeff=0.0,
                epsilon=0.2, mu=1.0, delta=0.5, eval_every=5, eval_episodes=5)


PRESETS = {
    "atari-style": _table_atari,
    "mujoco-style": _table_mujoco,
    "corridor-fast": _corridor_fast,
    "cartpole-fast": _cartpole_fast,
    "pendulum-fast": _pendulum_fast,
}


def build(values: Mapping) -> TrainerConfig:
    """Build a config from flat canonical keys (missing keys take defaults)."""
    trainer, objective = {}, {}
    for k, v in values.items():
        k = canonical_key(k)
        v = coerce(k, v)
        if k in _OBJECTIVE_KEYS:
            objective[_OBJECTIVE_KEYS[k]] = v
        else:
            trainer[k] = v
    return TrainerConfig(objective=ObjectiveConfig(**objective), **trainer)


def preset(name: str, objective: str = "adbar", **overrides) -> TrainerConfig:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    if objective not in KINDS:
        raise ConfigError("objective", f"unknown objective kind {objective!r}; choose from {KINDS}")
    values = PRESETS[name](objective)
    values.update(objective=objective, preset=name)
    values.update(overrides)
    return build(values)


def to_flat(cfg: TrainerConfig) -> dict:
    d = {k: v for k, v in asdict(cfg).items() if k != "objective"}
    for k, attr in _OBJECTIVE_KEYS.items():
        d[k] = getattr(cfg.objective, attr)
    return d


def serialize(cfg: TrainerConfig) -> str:
    lines = []
    flat = to_flat(cfg)
    if flat["preset"]:
        lines.append(f"preset = {flat['preset']}")
    for k in KEYS:
        v = flat[k]
        lines.append(f"{k} = {str(v).lower() if isinstance(v, bool) else repr(v) if isinstance(v, float) else v}")
    return "\n".join(lines) + "\n"


def parse_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}", f"expected 'key = value', got {raw!r}")
        k, v = line.split("=", 1)
        key = canonical_key(k)
        if key in out:
            raise ConfigError(key, f"duplicate key at {source}:{n}")
        out[key] = v.strip()
    return out


def env_overrides(environ: Optional[Mapping] = None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for k, v in environ.items():
        if k.startswith(ENV_PREFIX):
            name = k[len(ENV_PREFIX):]
            out[canonical_key(name if name in ALIASES else name.lower())] = v
    return out


def parse_config(path=None, preset_name: Optional[str] = None, overrides: Optional[Mapping] = None,
                 environ: Optional[Mapping] = None) -> TrainerConfig:
    """Resolve a config.  Precedence: preset < file < environment < overrides.

    The preset table is chosen for the final objective kind, so switching the
    objective on top of a preset picks that objective's table.
    """
    layers = []
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError("config", f"file not found: {p}")
        layers.append(parse_text(p.read_text(), str(p)))
    layers.append(env_overrides(environ))
    layers.append({canonical_key(k): v for k, v in (overrides or {}).items() if v is not None})
    merged = {}
    for layer in layers:
        merged.update(layer)
    name = merged.pop("preset", None) or preset_name
    if name:
        kind = str(merged.get("objective", "adbar")).strip()
        base = preset(name, kind)
        values = to_flat(base)
        values.update(merged)
        values["preset"] = name
        return build(values)
    return build(merged)


def with_values(cfg: TrainerConfig, **changes) -> TrainerConfig:
    values = to_flat(cfg)
    values.update({canonical_key(k): v for k, v in changes.items()})
    return build(values)
