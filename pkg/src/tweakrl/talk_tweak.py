"""Sliding-window annotation of intervened action runs into refinement
commands: cumulative translational displacement over a J-step window,
thresholded per axis into ternary move commands."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .domain import Action, Observation, RefinementCommand, TalkTweakRecord, Transition

WINDOW = 5         # J, steps per annotation window
THRESHOLD = 0.001  # sigma, meters of cumulative displacement per axis


@dataclass(frozen=True)
class InterventionWindow:
    """Exactly J consecutive intervened actions starting at start_obs."""

    actions: tuple
    start_obs: Observation

    def __post_init__(self):
        if len(self.actions) != WINDOW:
            raise ValueError(f"window needs exactly {WINDOW} actions")


def cumulative_displacement(actions: Sequence[Action]) -> np.ndarray:
    """Sum of dpos over the window (translational components only)."""
    if len(actions) < WINDOW:
        raise ValueError(f"window of {len(actions)} actions is shorter than {WINDOW}")
    return np.sum([a.dpos for a in actions], axis=0)


def axis_command(delta: float, sigma: float = THRESHOLD) -> int:
    """Ternary command for one axis; |delta| exactly sigma maps to 0."""
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    if delta > sigma:
        return 1
    if delta < -sigma:
        return -1
    return 0


def window_command(actions: Sequence[Action], sigma: float = THRESHOLD) -> RefinementCommand:
    delta = cumulative_displacement(actions)
    return RefinementCommand(tuple(axis_command(d, sigma) for d in delta))


def annotate(trajectory: Sequence[Transition], window: int = WINDOW,
             sigma: float = THRESHOLD) -> List[TalkTweakRecord]:
    """Emit one record per fully-intervened forward window (stride 1).

    Windows whose ternary triple is all zero are dropped: the null command is
    reserved for the trainer's regularization input, never for data.
    """
    records: List[TalkTweakRecord] = []
    n = len(trajectory)
    for t in range(n - window + 1):
        chunk = trajectory[t:t + window]
        if not all(tr.intervened for tr in chunk):
            continue
        delta = np.sum([tr.action.dpos for tr in chunk], axis=0)
        axes = tuple(axis_command(d, sigma) for d in delta)
        if axes == (0, 0, 0):
            continue
        records.append(TalkTweakRecord(chunk[0].obs, chunk[0].action,
                                       RefinementCommand(axes)))
    return records
