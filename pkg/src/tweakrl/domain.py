"""Canonical domain types: actions, observations, transitions, refinement
commands and talk-and-tweak records, plus their feature encodings.

All types are immutable value objects. Binary serialization lives in
datafiles.py; this module owns the semantics.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

ACTION_DIM = 7
DPOS_LIMIT = 0.01   # m per control step
DROT_LIMIT = 0.05   # rad per control step
WORKSPACE_HALF = 0.15  # m, cube half-extent
EPISODE_LIMIT = 50
GRIP_THRESHOLD = 0.5

# Axis-word table for refinement commands, fixed x, y, z order.
_AXIS_WORDS = {
    (0, +1): "right", (0, -1): "left",
    (1, +1): "forward", (1, -1): "backward",
    (2, +1): "up", (2, -1): "down",
}
_WORD_TO_AXIS = {word: key for key, word in _AXIS_WORDS.items()}
NULL_COMMAND_TEXT = "[null]"


@dataclass(frozen=True)
class Action:
    """7-d end-effector delta: position (m), rotation (rad), gripper [0,1]."""

    dpos: tuple
    drot: tuple
    grip: float

    def __post_init__(self):
        object.__setattr__(self, "dpos", tuple(float(v) for v in self.dpos))
        object.__setattr__(self, "drot", tuple(float(v) for v in self.drot))
        object.__setattr__(self, "grip", float(self.grip))
        if len(self.dpos) != 3 or len(self.drot) != 3:
            raise ValueError("dpos and drot must be 3-vectors")
        vec = self.to_vector()
        if not np.all(np.isfinite(vec)):
            raise ValueError("non-finite action components")

    @property
    def grip_closed(self) -> bool:
        return self.grip >= GRIP_THRESHOLD

    def to_vector(self) -> np.ndarray:
        return np.array([*self.dpos, *self.drot, self.grip])

    @classmethod
    def from_vector(cls, vec) -> "Action":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (ACTION_DIM,):
            raise ValueError(f"action vector must have shape (7,), got {vec.shape}")
        return cls(tuple(vec[:3]), tuple(vec[3:6]), vec[6])

    def clamped(self) -> "Action":
        """Clip deltas to per-step limits and gripper into [0, 1]."""
        dpos = tuple(float(np.clip(v, -DPOS_LIMIT, DPOS_LIMIT)) for v in self.dpos)
        drot = tuple(float(np.clip(v, -DROT_LIMIT, DROT_LIMIT)) for v in self.drot)
        return Action(dpos, drot, float(np.clip(self.grip, 0.0, 1.0)))


def zero_action(grip: float = 0.0) -> Action:
    return Action((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), grip)


@dataclass(frozen=True)
class Observation:
    """Full proprioceptive + object/goal state visible to the policies."""

    ee_pos: tuple
    ee_rpy: tuple
    grip_closed: bool
    object_pose: tuple   # (x, y, z, roll, pitch, yaw)
    goal_pose: tuple
    attached: bool
    step_index: int
    task_id: int

    def __post_init__(self):
        object.__setattr__(self, "ee_pos", tuple(float(v) for v in self.ee_pos))
        object.__setattr__(self, "ee_rpy", tuple(float(v) for v in self.ee_rpy))
        object.__setattr__(self, "object_pose", tuple(float(v) for v in self.object_pose))
        object.__setattr__(self, "goal_pose", tuple(float(v) for v in self.goal_pose))
        if len(self.ee_pos) != 3 or len(self.ee_rpy) != 3:
            raise ValueError("ee_pos/ee_rpy must be 3-vectors")
        if len(self.object_pose) != 6 or len(self.goal_pose) != 6:
            raise ValueError("object/goal poses must be 6-vectors")
        if not 0 <= self.step_index <= EPISODE_LIMIT:
            raise ValueError(f"step_index {self.step_index} outside [0, {EPISODE_LIMIT}]")


# Width of the feature vector fed to critics/refiner and the task encoder.
OBS_FEATURE_DIM = 21


@lru_cache(maxsize=1 << 17)
def observation_features(obs: Observation) -> np.ndarray:
    """Normalized flat feature vector (positions by workspace, angles by pi).

    Cached per observation (replay resamples the same states constantly);
    the returned array is marked read-only.
    """
    out = np.array([
        *(np.asarray(obs.ee_pos) / WORKSPACE_HALF),
        *(np.asarray(obs.ee_rpy) / np.pi),
        1.0 if obs.grip_closed else 0.0,
        *(np.asarray(obs.object_pose[:3]) / WORKSPACE_HALF),
        *(np.asarray(obs.object_pose[3:]) / np.pi),
        *(np.asarray(obs.goal_pose[:3]) / WORKSPACE_HALF),
        *(np.asarray(obs.goal_pose[3:]) / np.pi),
        1.0 if obs.attached else 0.0,
        obs.step_index / EPISODE_LIMIT,
    ])
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class RefinementCommand:
    """Ternary translational refinement: one of {-1, 0, +1} per axis."""

    axes: tuple = (0, 0, 0)
    is_null: bool = False

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(int(a) for a in self.axes))
        if len(self.axes) != 3 or any(a not in (-1, 0, 1) for a in self.axes):
            raise ValueError(f"axes must be three ternary values, got {self.axes}")
        if self.is_null and self.axes != (0, 0, 0):
            raise ValueError("null command must carry zero axes")


NULL_COMMAND = RefinementCommand((0, 0, 0), is_null=True)


def render_command(cmd: RefinementCommand) -> str:
    """Deterministic phrase for a command; zero/null renders "[null]"."""
    words = [_AXIS_WORDS[(d, s)] for d, s in enumerate(cmd.axes) if s != 0]
    if cmd.is_null or not words:
        return NULL_COMMAND_TEXT
    return "move " + " and ".join(words)


def parse_command(text: str) -> RefinementCommand:
    """Inverse of render_command; rejects anything outside the vocabulary."""
    text = text.strip()
    if text == NULL_COMMAND_TEXT:
        return NULL_COMMAND
    if not text.startswith("move "):
        raise ValueError(
            f"unrecognized command {text!r}; expected '[null]' or "
            f"'move <word> [and <word> ...]' with words from "
            f"{sorted(_WORD_TO_AXIS)}"
        )
    axes = [0, 0, 0]
    last_axis = -1
    for word in text[len("move "):].split(" and "):
        key = _WORD_TO_AXIS.get(word)
        if key is None:
            raise ValueError(
                f"unknown direction word {word!r}; vocabulary: "
                f"{sorted(_WORD_TO_AXIS)}"
            )
        axis, sign = key
        if axis <= last_axis:
            raise ValueError(f"direction words out of canonical x,y,z order in {text!r}")
        axes[axis] = sign
        last_axis = axis
    return RefinementCommand(tuple(axes))


COMMAND_ENCODING_DIM = 4


def encode_command(cmd: RefinementCommand) -> np.ndarray:
    """(t_x, t_y, t_z, is_null) as float64 network input."""
    return np.array([*cmd.axes, 1.0 if cmd.is_null else 0.0])


def all_commands():
    """All 27 ternary commands plus the null command."""
    cmds = [NULL_COMMAND]
    for x in (-1, 0, 1):
        for y in (-1, 0, 1):
            for z in (-1, 0, 1):
                cmds.append(RefinementCommand((x, y, z)))
    return cmds


@dataclass(frozen=True)
class Transition:
    """One replay atom; reward is sparse {0, 1}."""

    obs: Observation
    action: Action
    reward: float
    next_obs: Observation
    done: bool
    intervened: bool
    task_id: int

    def __post_init__(self):
        if self.reward not in (0.0, 1.0):
            raise ValueError(f"sparse reward must be 0 or 1, got {self.reward}")
        if self.reward == 1.0 and not self.done:
            raise ValueError("reward 1 requires done")
        if self.obs.task_id != self.task_id or self.next_obs.task_id != self.task_id:
            raise ValueError("task_id inconsistent across transition")


@dataclass(frozen=True)
class TalkTweakRecord:
    """(state, intervened action, refinement command) training atom."""

    obs: Observation
    action: Action
    command: RefinementCommand

    def __post_init__(self):
        if self.command.is_null:
            raise ValueError("talk-tweak records never carry the null command")


@dataclass(frozen=True)
class TaskSpec:
    """Identity plus goal geometry for one manipulation task."""

    id: int
    name: str
    ee_home: tuple
    object_template: tuple    # 6-d pose template
    goal_template: tuple      # 6-d pose template
    pos_tolerance: float = 0.002
    rot_tolerance: float = 0.05

    def __post_init__(self):
        if self.pos_tolerance <= 0 or self.rot_tolerance <= 0:
            raise ValueError("success tolerances must be positive")


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    a = np.asarray(a, dtype=np.float64)
    wrapped = -((-a + np.pi) % (2.0 * np.pi) - np.pi)
    return wrapped if wrapped.ndim else float(wrapped)
