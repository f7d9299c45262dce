"""Deterministic kinematic simulator for the three desk-scale manipulation
tasks, with sparse reward, a scripted expert and a scripted intervention
oracle standing in for the human during automated training.

Dynamics are purely kinematic: clamped end-effector deltas integrate the
pose, closing the gripper within grasp tolerance rigidly attaches the
object, opening detaches. Success is a pose predicate (object within the
task tolerances of the goal), reward is 1 exactly on the success step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .domain import (
    Action,
    DPOS_LIMIT,
    DROT_LIMIT,
    EPISODE_LIMIT,
    Observation,
    TaskSpec,
    Transition,
    WORKSPACE_HALF,
    wrap_angle,
    zero_action,
)
from .numerics import make_rng


@dataclass
class EnvConfig:
    """Simulator knobs; defaults follow the system's documented choices."""

    pos_tolerance: float = 0.002       # m, success predicate
    rot_tolerance: float = 0.05        # rad, success predicate
    grasp_tolerance: float = 0.008     # m, attach radius
    randomization: float = 0.05        # m, +/- x-y offset at reset
    expert_gain: float = 1.0
    expert_noise: float = 0.001        # m std on expert dpos
    delta_intv: float = 0.004          # m, oracle deviation threshold
    intv_streak: int = 3               # consecutive deviations to trigger
    intv_min_burst: int = 5            # minimum burst length (J)
    episode_limit: int = EPISODE_LIMIT


def default_tasks() -> List[TaskSpec]:
    """The place-upright / pick / assemble analogue triple."""
    home = (0.0, 0.0, 0.10)
    return [
        TaskSpec(0, "place-upright", home,
                 object_template=(0.03, 0.03, 0.01, 0.6, 0.0, 0.0),
                 goal_template=(-0.03, 0.00, 0.02, 0.0, 0.0, 0.0)),
        TaskSpec(1, "pick", home,
                 object_template=(0.03, -0.03, 0.01, 0.0, 0.0, 0.0),
                 goal_template=(0.00, 0.03, 0.08, 0.0, 0.0, 0.0)),
        TaskSpec(2, "assemble", home,
                 object_template=(-0.03, 0.03, 0.01, 0.0, 0.0, 0.0),
                 goal_template=(0.03, -0.03, 0.03, 0.0, 0.0, 0.0)),
    ]


@dataclass
class SceneState:
    """Mutable simulator state; owned by exactly one rollout loop."""

    task: TaskSpec
    config: EnvConfig
    ee_pos: np.ndarray
    ee_rpy: np.ndarray
    grip_closed: bool
    object_pos: np.ndarray
    object_rpy: np.ndarray
    goal_pose: np.ndarray
    attached: bool = False
    attach_pos_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attach_rpy_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    step_index: int = 0
    done: bool = False

    def observation(self) -> Observation:
        return Observation(
            ee_pos=tuple(self.ee_pos), ee_rpy=tuple(self.ee_rpy),
            grip_closed=self.grip_closed,
            object_pose=tuple(np.concatenate([self.object_pos, self.object_rpy])),
            goal_pose=tuple(self.goal_pose),
            attached=self.attached, step_index=self.step_index,
            task_id=self.task.id,
        )


@dataclass
class EpisodeResult:
    success: bool
    length: int
    interventions: int = 0


def reset(task: TaskSpec, seed: int, config: Optional[EnvConfig] = None) -> SceneState:
    """Fresh scene with independent +/- randomization on object and goal x-y."""
    config = config or EnvConfig()
    rng = make_rng(seed)
    r = config.randomization
    obj = np.array(task.object_template, dtype=np.float64)
    obj[0:2] += rng.uniform(-r, r, size=2)
    goal = np.array(task.goal_template, dtype=np.float64)
    goal[0:2] += rng.uniform(-r, r, size=2)
    return SceneState(
        task=task, config=config,
        ee_pos=np.array(task.ee_home, dtype=np.float64),
        ee_rpy=np.zeros(3),
        grip_closed=False,
        object_pos=obj[:3], object_rpy=obj[3:],
        goal_pose=goal,
    )


def chained_reset(task: TaskSpec, prev: SceneState, seed: int) -> SceneState:
    """Start the next subtask in a long-horizon chain: the end-effector and
    object carry over, only the goal is redrawn from the new task template."""
    config = prev.config
    rng = make_rng(seed)
    goal = np.array(task.goal_template, dtype=np.float64)
    goal[0:2] += rng.uniform(-config.randomization, config.randomization, size=2)
    return SceneState(
        task=task, config=config,
        ee_pos=prev.ee_pos.copy(), ee_rpy=prev.ee_rpy.copy(),
        grip_closed=prev.grip_closed,
        object_pos=prev.object_pos.copy(), object_rpy=prev.object_rpy.copy(),
        goal_pose=goal,
        attached=prev.attached,
        attach_pos_offset=prev.attach_pos_offset.copy(),
        attach_rpy_offset=prev.attach_rpy_offset.copy(),
    )


def _success(state: SceneState) -> bool:
    pos_err = np.linalg.norm(state.object_pos - state.goal_pose[:3])
    rot_err = np.max(np.abs(wrap_angle(state.object_rpy - state.goal_pose[3:])))
    return (pos_err <= state.task.pos_tolerance
            and rot_err <= state.task.rot_tolerance)


def step(state: SceneState, action: Action):
    """Integrate one clamped action; returns (next Observation, reward, done)."""
    if state.done:
        raise RuntimeError("cannot step a finished episode")
    a = action.clamped()
    cfg = state.config
    half = WORKSPACE_HALF

    lo = np.full(3, -half)
    hi = np.full(3, half)
    if state.attached:
        # keep the attached object inside the box too, offset unchanged
        lo = np.maximum(lo, -half - np.minimum(state.attach_pos_offset, 0.0))
        hi = np.minimum(hi, half - np.maximum(state.attach_pos_offset, 0.0))
    state.ee_pos = np.clip(state.ee_pos + np.asarray(a.dpos), lo, hi)
    state.ee_rpy = wrap_angle(state.ee_rpy + np.asarray(a.drot))
    state.grip_closed = a.grip_closed

    if state.attached and not state.grip_closed:
        state.attached = False
    if (not state.attached and state.grip_closed
            and np.linalg.norm(state.ee_pos - state.object_pos) <= cfg.grasp_tolerance):
        state.attached = True
        state.attach_pos_offset = state.object_pos - state.ee_pos
        state.attach_rpy_offset = wrap_angle(state.object_rpy - state.ee_rpy)
    if state.attached:
        state.object_pos = state.ee_pos + state.attach_pos_offset
        state.object_rpy = wrap_angle(state.ee_rpy + state.attach_rpy_offset)

    state.step_index += 1
    reward = 0.0
    if _success(state):
        reward = 1.0
        state.done = True
    elif state.step_index >= cfg.episode_limit:
        state.done = True
    return state.observation(), reward, state.done


def scripted_expert(obs: Observation, config: Optional[EnvConfig] = None,
                    rng: Optional[np.random.Generator] = None) -> Action:
    """Proportional controller through approach -> grasp -> transport.

    Stateless: the phase is inferred from the observation. Optional zero-mean
    noise (config.expert_noise) perturbs dpos before clamping.
    """
    config = config or EnvConfig()
    ee = np.asarray(obs.ee_pos)
    obj = np.asarray(obs.object_pose[:3])
    goal_pos = np.asarray(obs.goal_pose[:3])
    goal_rpy = np.asarray(obs.goal_pose[3:])
    gain = config.expert_gain

    if obs.attached:
        dpos = gain * (goal_pos - obj)
        drot = gain * wrap_angle(goal_rpy - np.asarray(obs.object_pose[3:]))
        grip = 1.0
    else:
        err = obj - ee
        dpos = gain * err
        drot = np.zeros(3)
        # Close the gripper during the final approach step (when this move
        # will land within grasp range) rather than stopping first: an abrupt
        # stop-then-grip boundary is hard for a smooth policy to clone.
        move = np.clip(dpos, -DPOS_LIMIT, DPOS_LIMIT)
        grip = (1.0 if np.linalg.norm(err - move)
                <= 0.8 * config.grasp_tolerance else 0.0)
    if rng is not None and config.expert_noise > 0.0:
        dpos = dpos + rng.normal(0.0, config.expert_noise, size=3)
    return Action(tuple(dpos), tuple(drot), grip).clamped()


@dataclass
class InterventionStreak:
    """Oracle bookkeeping across one episode."""

    streak: int = 0
    in_burst: bool = False
    burst_remaining: int = 0


def intervention_oracle(obs: Observation, policy_action: Action,
                        expert_action: Action, streak: InterventionStreak,
                        config: Optional[EnvConfig] = None) -> Optional[Action]:
    """Expert takeover in bursts: triggered by 3 consecutive deviations above
    delta_intv, lasting at least intv_min_burst steps and while deviation
    persists."""
    config = config or EnvConfig()
    dev = (np.linalg.norm(np.asarray(policy_action.dpos)
                          - np.asarray(expert_action.dpos)) > config.delta_intv)
    if streak.in_burst:
        if streak.burst_remaining > 0:
            streak.burst_remaining -= 1
            return expert_action
        if dev:
            return expert_action
        streak.in_burst = False
        streak.streak = 0
        return None
    streak.streak = streak.streak + 1 if dev else 0
    if streak.streak >= config.intv_streak:
        streak.in_burst = True
        streak.burst_remaining = config.intv_min_burst - 1
        return expert_action
    return None


PolicyFn = Callable[[Observation], Action]
InterventionFn = Callable[[Observation, Action, SceneState], Optional[Action]]


def rollout(policy: PolicyFn, task: TaskSpec, seed: int,
            config: Optional[EnvConfig] = None,
            intervention: Optional[InterventionFn] = None,
            state: Optional[SceneState] = None):
    """Run one episode; returns (transitions, EpisodeResult).

    `intervention`, when given, may replace the policy action for a step;
    replaced steps are stored with intervened=True.
    """
    config = config or EnvConfig()
    if state is None:
        state = reset(task, seed, config)
    transitions = []
    n_intv = 0
    while not state.done:
        obs = state.observation()
        act = policy(obs)
        intervened = False
        if intervention is not None:
            override = intervention(obs, act, state)
            if override is not None:
                act = override
                intervened = True
                n_intv += 1
        act = act.clamped()
        next_obs, reward, done = step(state, act)
        transitions.append(Transition(obs, act, reward, next_obs, done,
                                      intervened, task.id))
    success = transitions[-1].reward == 1.0 if transitions else False
    return transitions, EpisodeResult(success, len(transitions), n_intv)


def run_long_horizon(policy: PolicyFn, n_bolts: int, seed: int,
                     config: Optional[EnvConfig] = None,
                     tasks: Optional[List[TaskSpec]] = None) -> List[EpisodeResult]:
    """Chain place-upright -> pick -> assemble per bolt, aborting the chain on
    the first subtask failure. Scene state carries across subtasks."""
    if n_bolts < 1:
        raise ValueError("n_bolts must be >= 1")
    config = config or EnvConfig()
    tasks = tasks or default_tasks()
    results: List[EpisodeResult] = []
    base = make_rng(seed)
    state: Optional[SceneState] = None
    for bolt in range(n_bolts):
        state = None  # a new bolt starts from a fresh scene
        for task in tasks:
            sub_seed = int(base.integers(0, 2**63 - 1))
            if state is None:
                state = reset(task, sub_seed, config)
            else:
                state = chained_reset(task, state, sub_seed)
            _, result = rollout(policy, task, sub_seed, config, state=state)
            results.append(result)
            if not result.success:
                return results
    return results
