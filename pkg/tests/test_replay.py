"""Tests for the per-task replay buffers and sampling ratios."""

import numpy as np
import pytest

from tweakrl.domain import Action, RefinementCommand, TalkTweakRecord, Transition
from tweakrl.numerics import make_rng
from tweakrl.replay import (
    TalkTweakBuffer,
    TaskBuffers,
    load_buffers,
    merge_interventions,
    sample_online,
    sample_warmup,
    save_buffers,
)
from tests.test_domain import make_obs


def make_transition(task_id=0, step=0, intervened=False, ee_x=0.0):
    obs = make_obs(task_id=task_id, step=step, ee_pos=(ee_x, 0.0, 0.0))
    nxt = make_obs(task_id=task_id, step=step + 1, ee_pos=(ee_x, 0.0, 0.0))
    act = Action((0.001 * (step + 1), 0, 0), (0, 0, 0), 0.0)
    return Transition(obs, act, 0.0, nxt, False, intervened, task_id)


def filled_buffers(n_tasks=3, n_demos=10, n_rollouts=10):
    out = []
    for t in range(n_tasks):
        b = TaskBuffers(t)
        for i in range(n_demos):
            b.add_demo(make_transition(t, i))
        for i in range(n_rollouts):
            b.add_rollout(make_transition(t, i, ee_x=0.05))
        out.append(b)
    return out


class TestTaskBuffers:
    def test_rejects_wrong_task(self):
        b = TaskBuffers(0)
        with pytest.raises(ValueError):
            b.add_demo(make_transition(task_id=1))
        with pytest.raises(ValueError):
            b.add_rollout(make_transition(task_id=2))

    def test_intervention_buffer_requires_flag(self):
        b = TaskBuffers(0)
        with pytest.raises(ValueError):
            b.add_intervention(make_transition(intervened=False))
        b.add_intervention(make_transition(intervened=True))
        assert len(b.intv) == 1


class TestSampling:
    def test_warmup_sizes(self):
        buffers = filled_buffers()
        got = sample_warmup(buffers, 12, make_rng(0))
        assert set(got) == {0, 1, 2}
        assert all(len(v) == 4 for v in got.values())

    def test_warmup_rejects_indivisible_batch(self):
        with pytest.raises(ValueError):
            sample_warmup(filled_buffers(), 10, make_rng(0))

    def test_online_sizes_and_provenance_split(self):
        buffers = filled_buffers()
        got = sample_online(buffers, 12, make_rng(1))
        for task_id, items in got.items():
            assert len(items) == 4
            tags = [tag for _, tag in items]
            assert tags.count("demo") == 2 and tags.count("rollout") == 2
            for tr, _ in items:
                assert tr.task_id == task_id

    def test_online_rejects_indivisible_batch(self):
        with pytest.raises(ValueError):
            sample_online(filled_buffers(), 9, make_rng(0))

    def test_online_ratio_over_many_batches(self):
        buffers = filled_buffers()
        rng = make_rng(2)
        counts = {"demo": 0, "rollout": 0}
        for _ in range(500):
            for items in sample_online(buffers, 12, rng).values():
                for _, tag in items:
                    counts[tag] += 1
        total = counts["demo"] + counts["rollout"]
        assert counts["demo"] / total == 0.5

    def test_sampling_from_empty_rejected(self):
        b = TaskBuffers(0)
        with pytest.raises(ValueError):
            sample_warmup([b], 4, make_rng(0))


class TestMerge:
    def _rec(self, step):
        tr = make_transition(0, step)
        return TalkTweakRecord(tr.obs, tr.action, RefinementCommand((1, 0, 0)))

    def test_moves_interventions_to_demos(self):
        b = TaskBuffers(0)
        tt = TalkTweakBuffer()
        for i in range(3):
            b.add_intervention(make_transition(0, i, intervened=True))
        moved = merge_interventions(b, tt, "ep0", [self._rec(0), self._rec(1)])
        assert moved == 3
        assert len(b.demos) == 3 and len(b.intv) == 0
        assert len(tt) == 2

    def test_conserves_transitions(self):
        b = TaskBuffers(0)
        for i in range(4):
            b.add_demo(make_transition(0, i))
        for i in range(2):
            b.add_intervention(make_transition(0, i, intervened=True, ee_x=0.1))
        before = len(b.demos) + len(b.rollouts) + len(b.intv)
        merge_interventions(b, TalkTweakBuffer(), "ep1", [])
        after = len(b.demos) + len(b.rollouts) + len(b.intv)
        assert before == after == 6

    def test_idempotent_per_episode(self):
        b = TaskBuffers(0)
        tt = TalkTweakBuffer()
        merge_interventions(b, tt, "ep2", [])
        with pytest.raises(ValueError):
            merge_interventions(b, tt, "ep2", [])
        merge_interventions(b, tt, "ep3", [])  # fresh id still fine


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        buffers = filled_buffers(2, 3, 2)
        buffers[0].add_intervention(make_transition(0, 5, intervened=True, ee_x=0.1))
        tt = TalkTweakBuffer()
        tr = make_transition(1, 7)
        tt.add(TalkTweakRecord(tr.obs, tr.action, RefinementCommand((0, -1, 1))))
        prefix = str(tmp_path / "buf")
        save_buffers(prefix, buffers, tt)
        loaded, tt2 = load_buffers(prefix, [0, 1])
        assert loaded[0].demos == buffers[0].demos
        assert loaded[0].intv == buffers[0].intv
        assert loaded[1].rollouts == buffers[1].rollouts
        assert tt2.records == tt.records
