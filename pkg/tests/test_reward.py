import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from toolgrpo.core import EpisodeRecord, ToolSelection
from toolgrpo.reward import DEFAULT_REWARDS, GroupSample, group_advantages, tool_aware_reward


@pytest.mark.parametrize(
    "direct, augmented, expected",
    [(False, True, 1.0), (True, False, -0.5), (False, False, 0.0), (True, True, 1.0)],
)
def test_reward_table(direct, augmented, expected):
    assert tool_aware_reward(direct, augmented) == expected


def test_reward_range_and_monotone():
    values = {tool_aware_reward(d, a) for d in (False, True) for a in (False, True)}
    assert values == {1.0, -0.5, 0.0}
    for d in (False, True):
        assert tool_aware_reward(d, True) > tool_aware_reward(d, False)


def test_reward_values_configurable():
    assert tool_aware_reward(True, True, (1.0, -0.5, 0.0, 0.25)) == 0.25
    assert DEFAULT_REWARDS == (1.0, -0.5, 0.0, 1.0)


def _oracle_advantages(rewards):
    n = len(rewards)
    mean = sum(rewards) / n
    var = sum((r - mean) ** 2 for r in rewards) / n
    return [(r - mean) / var**0.5 for r in rewards]


def test_advantage_examples():
    assert group_advantages([1, 1, 1, 1]).tolist() == [0.0, 0.0, 0.0, 0.0]
    assert np.allclose(group_advantages([1, 0]), [1.0, -1.0])
    out = group_advantages([1, 0, -0.5, 1])
    assert np.allclose(out, _oracle_advantages([1, 0, -0.5, 1]), atol=1e-12)
    assert np.allclose(out, [0.962, -0.577, -1.347, 0.962], atol=1e-3)


def test_advantage_needs_two():
    with pytest.raises(ValueError):
        group_advantages([1.0])


rewards_st = st.lists(st.sampled_from([1.0, -0.5, 0.0]) | st.floats(-5, 5), min_size=2, max_size=8)


@given(rewards_st, st.floats(-10, 10).filter(lambda a: abs(a) > 1e-3), st.floats(-10, 10))
def test_advantage_shift_scale(rewards, a, c):
    r = np.array(rewards)
    assume(r.std() > 1e-3)
    out = group_advantages(a * r + c)
    assert np.allclose(out, np.sign(a) * group_advantages(r), atol=1e-9)


@given(rewards_st)
def test_advantage_moments(rewards):
    r = np.array(rewards)
    assume(r.std() > 1e-6)
    out = group_advantages(r)
    assert abs(out.mean()) < 1e-9
    assert abs(out.std() - 1.0) < 1e-6


def _record(reward):
    return EpisodeRecord("q", ToolSelection(), (), "a", "b", reward, False, reward > 0)


def test_group_sample_build():
    g = GroupSample.build("q", [_record(1.0), _record(0.0)], [-1.0, -2.0])
    assert g.G == 2
    assert g.rewards.tolist() == [1.0, 0.0]
    assert g.advantages.tolist() == [1.0, -1.0]
    with pytest.raises(ValueError):
        GroupSample("q", (_record(1.0),), np.zeros(2), np.zeros(1), np.zeros(1))
