"""Unit tests for actions, observations, commands and core data types."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tweakrl.domain import (
    ACTION_DIM,
    Action,
    DPOS_LIMIT,
    DROT_LIMIT,
    NULL_COMMAND,
    NULL_COMMAND_TEXT,
    OBS_FEATURE_DIM,
    Observation,
    RefinementCommand,
    TalkTweakRecord,
    TaskSpec,
    Transition,
    all_commands,
    encode_command,
    observation_features,
    parse_command,
    render_command,
    wrap_angle,
    zero_action,
)


def make_obs(task_id=0, step=0, **kwargs):
    defaults = dict(ee_pos=(0.0, 0.0, 0.1), ee_rpy=(0.0, 0.0, 0.0),
                    grip_closed=False,
                    object_pose=(0.03, 0.03, 0.01, 0.0, 0.0, 0.0),
                    goal_pose=(-0.03, 0.0, 0.02, 0.0, 0.0, 0.0),
                    attached=False, step_index=step, task_id=task_id)
    defaults.update(kwargs)
    return Observation(**defaults)


class TestAction:
    def test_clamp_limits(self):
        act = Action((0.5, -0.5, 0.0), (1.0, -1.0, 0.0), 3.0).clamped()
        assert act.dpos == (DPOS_LIMIT, -DPOS_LIMIT, 0.0)
        assert act.drot == (DROT_LIMIT, -DROT_LIMIT, 0.0)
        assert act.grip == 1.0

    def test_vector_roundtrip(self):
        act = Action((0.001, -0.002, 0.003), (0.01, 0.02, -0.03), 0.7)
        assert Action.from_vector(act.to_vector()) == act

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Action((np.nan, 0, 0), (0, 0, 0), 0.0)

    def test_grip_threshold(self):
        assert Action((0, 0, 0), (0, 0, 0), 0.5).grip_closed
        assert not Action((0, 0, 0), (0, 0, 0), 0.49).grip_closed

    def test_zero_action(self):
        assert np.array_equal(zero_action().to_vector(),
                              np.zeros(ACTION_DIM))

    @given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=7, max_size=7))
    @settings(max_examples=50, deadline=None)
    def test_clamped_is_idempotent(self, vec):
        once = Action.from_vector(np.array(vec)).clamped()
        assert once.clamped() == once


class TestObservationFeatures:
    def test_dimension(self):
        assert observation_features(make_obs()).shape == (OBS_FEATURE_DIM,)

    def test_normalized_range_for_in_workspace_obs(self):
        feats = observation_features(make_obs())
        assert np.all(np.abs(feats) <= 1.0 + 1e-12)

    def test_flags_encoded(self):
        grip = observation_features(make_obs(grip_closed=True))
        no_grip = observation_features(make_obs(grip_closed=False))
        assert not np.array_equal(grip, no_grip)

    def test_read_only(self):
        feats = observation_features(make_obs())
        with pytest.raises(ValueError):
            feats[0] = 1.0


class TestCommands:
    def test_render_parse_roundtrip_all(self):
        for cmd in all_commands():
            text = render_command(cmd)
            back = parse_command(text)
            if cmd.is_null or cmd.axes == (0, 0, 0):
                assert back == NULL_COMMAND
            else:
                assert back == cmd

    def test_axis_words(self):
        assert render_command(RefinementCommand((1, 0, 0))) == "move right"
        assert render_command(RefinementCommand((-1, 0, 0))) == "move left"
        assert render_command(RefinementCommand((0, 1, 0))) == "move forward"
        assert render_command(RefinementCommand((0, -1, 0))) == "move backward"
        assert render_command(RefinementCommand((0, 0, 1))) == "move up"
        assert render_command(RefinementCommand((0, 0, -1))) == "move down"

    def test_compound_order(self):
        assert (render_command(RefinementCommand((1, 1, -1)))
                == "move right and forward and down")

    def test_null_renders_null(self):
        assert render_command(NULL_COMMAND) == NULL_COMMAND_TEXT
        assert render_command(RefinementCommand((0, 0, 0))) == NULL_COMMAND_TEXT

    def test_parse_rejects_unknown_word(self):
        with pytest.raises(ValueError):
            parse_command("move sideways")

    def test_parse_rejects_out_of_order(self):
        with pytest.raises(ValueError):
            parse_command("move up and right")

    def test_parse_rejects_non_command(self):
        with pytest.raises(ValueError):
            parse_command("go west")

    def test_encode_command(self):
        enc = encode_command(RefinementCommand((1, -1, 0)))
        assert np.array_equal(enc, [1.0, -1.0, 0.0, 0.0])
        assert np.array_equal(encode_command(NULL_COMMAND), [0, 0, 0, 1.0])

    def test_command_count(self):
        assert len(all_commands()) == 28

    def test_rejects_bad_axes(self):
        with pytest.raises(ValueError):
            RefinementCommand((2, 0, 0))


class TestTransition:
    def test_rejects_nonsparse_reward(self):
        obs = make_obs()
        with pytest.raises(ValueError):
            Transition(obs, zero_action(), 0.5, obs, False, False, 0)

    def test_reward_one_requires_done(self):
        obs = make_obs()
        with pytest.raises(ValueError):
            Transition(obs, zero_action(), 1.0, obs, False, False, 0)

    def test_task_consistency(self):
        with pytest.raises(ValueError):
            Transition(make_obs(task_id=0), zero_action(), 0.0,
                       make_obs(task_id=1), False, False, 0)


class TestTalkTweakRecord:
    def test_rejects_null_command(self):
        with pytest.raises(ValueError):
            TalkTweakRecord(make_obs(), zero_action(), NULL_COMMAND)


class TestTaskSpec:
    def test_rejects_bad_tolerance(self):
        with pytest.raises(ValueError):
            TaskSpec(0, "t", (0, 0, 0.1), (0,) * 6, (0,) * 6,
                     pos_tolerance=0.0)


class TestWrapAngle:
    @given(st.floats(-100, 100, allow_nan=False))
    @settings(max_examples=100, deadline=None)
    def test_range_and_equivalence(self, a):
        w = wrap_angle(a)
        assert -np.pi < w <= np.pi
        assert np.isclose(np.sin(w), np.sin(a), atol=1e-9)
        assert np.isclose(np.cos(w), np.cos(a), atol=1e-9)
