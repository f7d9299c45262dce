"""Per-task replay buffers (demos / rollouts / interventions) plus the global
talk-tweak buffer, with the exact online sampling ratios.

Concurrency contract: one writer (the interaction side) and one reader (the
learning side). Appends go through list.append, which is atomic at record
granularity under CPython; sampling snapshots the length at call time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Set, Tuple

import numpy as np

from .domain import TalkTweakRecord, Transition
from . import datafiles


@dataclass
class TaskBuffers:
    """Append-only transition stores for one task."""

    task_id: int
    demos: List[Transition] = field(default_factory=list)
    rollouts: List[Transition] = field(default_factory=list)
    intv: List[Transition] = field(default_factory=list)
    merged_episodes: Set[str] = field(default_factory=set)

    def _check(self, tr: Transition):
        if tr.task_id != self.task_id:
            raise ValueError(
                f"transition for task {tr.task_id} appended to task "
                f"{self.task_id} buffers"
            )

    def add_demo(self, tr: Transition):
        self._check(tr)
        self.demos.append(tr)

    def add_rollout(self, tr: Transition):
        self._check(tr)
        self.rollouts.append(tr)

    def add_intervention(self, tr: Transition):
        self._check(tr)
        if not tr.intervened:
            raise ValueError("intervention buffer only accepts intervened transitions")
        self.intv.append(tr)


@dataclass
class TalkTweakBuffer:
    """Global, all-task pool of talk-and-tweak records."""

    records: List[TalkTweakRecord] = field(default_factory=list)

    def add(self, rec: TalkTweakRecord):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)


def _draw(items: List[Transition], k: int, rng: np.random.Generator):
    """Uniform with replacement over a length snapshot."""
    n = len(items)
    if n == 0:
        raise ValueError("cannot sample from an empty buffer")
    idx = rng.integers(0, n, size=k)
    return [items[i] for i in idx]


def sample_warmup(buffers: Sequence[TaskBuffers], batch_size: int,
                  rng: np.random.Generator) -> Dict[int, List[Transition]]:
    """Per-task demo batches of size B / N_tasks each."""
    n = len(buffers)
    if batch_size % n != 0:
        raise ValueError(f"batch size {batch_size} not divisible by {n} tasks")
    per_task = batch_size // n
    return {b.task_id: _draw(b.demos, per_task, rng) for b in buffers}


def sample_online(buffers: Sequence[TaskBuffers], batch_size: int,
                  rng: np.random.Generator
                  ) -> Dict[int, List[Tuple[Transition, str]]]:
    """Per-task batches: B/2N from demos (interventions merged in) and B/2N
    from rollouts, each item tagged with its provenance."""
    n = len(buffers)
    if batch_size % (2 * n) != 0:
        raise ValueError(
            f"batch size {batch_size} must be a multiple of 2*{n} tasks"
        )
    half = batch_size // (2 * n)
    out: Dict[int, List[Tuple[Transition, str]]] = {}
    for b in buffers:
        demo_side = [(tr, "demo") for tr in _draw(b.demos, half, rng)]
        roll_side = [(tr, "rollout") for tr in _draw(b.rollouts, half, rng)]
        out[b.task_id] = demo_side + roll_side
    return out


def merge_interventions(buffers: TaskBuffers, talk_tweak: TalkTweakBuffer,
                        episode_id: str,
                        records: Sequence[TalkTweakRecord]) -> int:
    """Episode-end augmentation: drain the intervention buffer into demos and
    append this episode's annotation records to the global pool.

    Idempotent per episode: a second merge of the same id is rejected.
    Returns the number of transitions moved.
    """
    if episode_id in buffers.merged_episodes:
        raise ValueError(f"episode {episode_id!r} already merged")
    buffers.merged_episodes.add(episode_id)
    moved = len(buffers.intv)
    buffers.demos.extend(buffers.intv)
    buffers.intv.clear()
    for rec in records:
        talk_tweak.add(rec)
    return moved


def save_buffers(path_prefix: str, buffers: Sequence[TaskBuffers],
                 talk_tweak: TalkTweakBuffer):
    """Persist each store as a .httd file for crash recovery and analysis."""
    for b in buffers:
        datafiles.write_dataset(f"{path_prefix}.task{b.task_id}.demos.httd", b.demos)
        datafiles.write_dataset(f"{path_prefix}.task{b.task_id}.rollouts.httd", b.rollouts)
        datafiles.write_dataset(f"{path_prefix}.task{b.task_id}.intv.httd", b.intv)
    datafiles.write_dataset(f"{path_prefix}.talk_tweak.httd", talk_tweak.records)


def load_buffers(path_prefix: str, task_ids: Sequence[int]):
    buffers = []
    for task_id in task_ids:
        b = TaskBuffers(task_id)
        b.demos = datafiles.read_dataset(f"{path_prefix}.task{task_id}.demos.httd")
        b.rollouts = datafiles.read_dataset(f"{path_prefix}.task{task_id}.rollouts.httd")
        b.intv = datafiles.read_dataset(f"{path_prefix}.task{task_id}.intv.httd")
        buffers.append(b)
    tt = TalkTweakBuffer(datafiles.read_dataset(f"{path_prefix}.talk_tweak.httd"))
    return buffers, tt
