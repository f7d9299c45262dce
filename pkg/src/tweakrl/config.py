"""Training configuration and the flat dotted-key config file format.

The file format is intentionally plain: one `dotted.key = value` pair per
line, `#` comments, tuples as comma-separated scalars. Unknown keys are
rejected so typos fail loudly. Every run writes its resolved config next to
its outputs.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from typing import Dict, Tuple

from .env import EnvConfig


@dataclass
class TrainConfig:
    """Everything the trainer, learner service and CLI consume."""

    # loss weights: (BC, Q) per phase; refinement (BC, Q, Reg)
    lambda_warmup: Tuple[float, float] = (1.0, 0.1)
    lambda_online: Tuple[float, float] = (0.5, 0.5)
    eta: Tuple[float, float, float] = (1.0, 0.1, 0.1)

    noise_scale: float = 1.0          # K
    gamma: float = 0.97
    batch_size: int = 96
    n_tasks: int = 3
    demos_per_task: int = 20
    online_gate: int = 100            # rollout transitions per task before learning
    episode_limit: int = 50

    # optimizer
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    lr_refiner: float = 1e-3
    tau: float = 0.005                # Polyak rate for critic targets

    # architecture
    embed_dim: int = 32
    hidden: Tuple[int, int] = (64, 64)

    # warm-up critic calibration
    calql_alpha: float = 1.0
    calql_action_samples: int = 4

    # adaptive task weighting
    weight_c: float = 0.1
    weight_eps_min: float = 0.8
    weight_eps_max: float = 1.2

    # schedule
    warmup_steps: int = 5000
    online_episodes: int = 300        # per-task episode budget for train-online
    updates_per_env_step: float = 1.0
    snapshot_period: int = 50         # learner updates between pushed snapshots
    max_env_steps: int = 60000

    # annotation
    tt_window: int = 5                # J
    tt_sigma: float = 0.001           # meters

    # ablations
    disable_dual_actor: bool = False
    disable_epsilon_weighting: bool = False
    disable_talk_annotation: bool = False

    seed: int = 0
    env: EnvConfig = field(default_factory=EnvConfig)


_TOP_FIELDS = {f.name: f for f in fields(TrainConfig) if f.name != "env"}
_ENV_FIELDS = {f.name: f for f in fields(EnvConfig)}


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_render(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(text: str, template):
    text = text.strip()
    if isinstance(template, bool):
        if text.lower() in ("true", "1", "yes", "on"):
            return True
        if text.lower() in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(template, tuple):
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != len(template):
            raise ValueError(
                f"expected {len(template)} comma-separated values, got {text!r}"
            )
        return tuple(_coerce(p, t) for p, t in zip(parts, template))
    if isinstance(template, int):
        return int(text)
    if isinstance(template, float):
        return float(text)
    return text


def to_flat_dict(cfg: TrainConfig) -> Dict[str, str]:
    out = {}
    for name in _TOP_FIELDS:
        out[name] = _render(getattr(cfg, name))
    for name in _ENV_FIELDS:
        out[f"env.{name}"] = _render(getattr(cfg.env, name))
    return out


def apply_override(cfg: TrainConfig, key: str, text: str) -> TrainConfig:
    """Set one dotted key from its textual value; unknown keys are errors."""
    if key.startswith("env."):
        sub = key[4:]
        if sub not in _ENV_FIELDS:
            raise KeyError(f"unknown config key {key!r}")
        template = getattr(EnvConfig(), sub)
        new_env = dataclasses.replace(cfg.env, **{sub: _coerce(text, template)})
        return dataclasses.replace(cfg, env=new_env)
    if key not in _TOP_FIELDS:
        raise KeyError(f"unknown config key {key!r}")
    template = getattr(TrainConfig(), key)
    return dataclasses.replace(cfg, **{key: _coerce(text, template)})


def save_config(cfg: TrainConfig, path):
    with open(path, "w") as f:
        for key, val in to_flat_dict(cfg).items():
            f.write(f"{key} = {val}\n")


def load_config(path=None, overrides: Dict[str, str] = None) -> TrainConfig:
    """Defaults, then the file (if any), then explicit overrides."""
    cfg = TrainConfig()
    if path is not None:
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected 'key = value'")
                key, text = line.split("=", 1)
                cfg = apply_override(cfg, key.strip(), text)
    for key, text in (overrides or {}).items():
        cfg = apply_override(cfg, key, text)
    return cfg
