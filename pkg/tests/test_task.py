import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from actlab.rigid2d import DynamicsState, Ground
from actlab.task import (FALL_END, RUNNING, TIMER_END, ReferenceMotion, RewardWeights,
                         draw_episode_duration, episode_status, feature_dim, featurize,
                         load_motion, motion_from_dict, motion_to_dict, reference_pose,
                         reward, sample_initial_state, sample_reference)


def random_state(rng, n=9):
    q = rng.uniform(-0.5, 0.5, n)
    q[1] += 1.0
    return q, rng.normal(size=n)


# -- reward -----------------------------------------------------------------


def test_default_weights_sum_to_one():
    w = RewardWeights()
    assert (w.pose, w.vel, w.end, w.root, w.com) == (0.5, 0.05, 0.15, 0.1, 0.2)
    assert w.pose + w.vel + w.end + w.root + w.com == pytest.approx(1.0, abs=1e-15)


def test_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        RewardWeights(pose=0.6)
    with pytest.raises(ValueError):
        RewardWeights(pose=0.7, vel=-0.15)


@given(st.integers(0, 2 ** 32 - 1))
def test_reward_is_one_on_the_reference(biped, seed):
    q, qd = random_state(np.random.default_rng(seed))
    assert abs(reward(biped, q, qd, q, qd) - 1.0) <= 1e-12


@given(st.integers(0, 2 ** 32 - 1))
def test_reward_in_unit_interval(biped, seed):
    rng = np.random.default_rng(seed)
    q, qd = random_state(rng)
    q_ref, qd_ref = random_state(rng)
    assert 0.0 < reward(biped, q, qd, q_ref, qd_ref) <= 1.0


def test_reward_terms_follow_their_definitions(biped):
    """Perturb only the root height: just the root term changes."""
    rng = np.random.default_rng(0)
    q, qd = random_state(rng)
    q2 = q.copy()
    q2[1] += 0.1
    # link positions are compared root-relative, so only the root term sees the shift
    expected = 0.9 + 0.1 * np.exp(-10.0 * 0.1 ** 2)
    assert reward(biped, q2, qd, q, qd) == pytest.approx(expected, abs=1e-12)


def test_reward_pose_term(biped):
    rng = np.random.default_rng(1)
    q, qd = random_state(rng)
    q2 = q.copy()
    q2[3] += 0.2  # hip angle shifts the leg: pose and end-effector terms change
    r = reward(biped, q2, qd, q, qd)
    w = RewardWeights(pose=1.0, vel=0.0, end=0.0, root=0.0, com=0.0)
    assert reward(biped, q2, qd, q, qd, weights=w) == pytest.approx(np.exp(-0.04))
    assert r < 1.0


def test_reward_root_height_uses_ground(biped):
    q, qd = random_state(np.random.default_rng(2))
    raised = Ground.flat(0.3)
    lifted = q.copy()
    lifted[1] += 0.3
    assert reward(biped, lifted, qd, q, qd, ground=raised) == pytest.approx(1.0, abs=1e-12)


# -- features -----------------------------------------------------------------


def test_feature_layout(biped):
    assert feature_dim(biped) == 29
    q, qd = random_state(np.random.default_rng(4))
    f = featurize(biped, q, qd)
    assert f[0] == q[1]
    shifted = q.copy()
    shifted[0] += 3.0
    g = featurize(biped, shifted, qd)
    np.testing.assert_allclose(f, g, atol=1e-12)  # horizontal position is not observed


# -- reference motion ---------------------------------------------------------


def test_reference_hits_keyframes(walk):
    for t, pose in zip(walk.times, walk.poses):
        np.testing.assert_allclose(reference_pose(walk, t), pose, atol=1e-12)


@given(st.floats(0.0, 1.0), st.integers(-3, 3))
def test_cyclic_reference_advances_root_per_cycle(walk, t, k):
    a = reference_pose(walk, t)
    b = reference_pose(walk, t + k * walk.cycle_duration)
    assert b[0] - a[0] == pytest.approx(k * walk.root_displacement, abs=1e-9)
    np.testing.assert_allclose(a[1:], b[1:], atol=1e-9)


def test_reference_is_continuous_across_the_wrap(walk):
    end = walk.times[0] + walk.cycle_duration
    before = reference_pose(walk, end - 1e-9)
    after = reference_pose(walk, end + 1e-9)
    np.testing.assert_allclose(before, after, atol=1e-6)


def test_reference_velocity_is_forward_difference(walk):
    q, qd = sample_reference(walk, 0.3, 1 / 60)
    np.testing.assert_allclose(qd, (reference_pose(walk, 0.3 + 1 / 60) - q) * 60)


def test_non_cyclic_reference_clamps():
    m = ReferenceMotion(times=[0.0, 1.0], poses=[[0.0] * 4, [1.0] * 4], cycle_duration=1.0,
                        cyclic=False)
    np.testing.assert_allclose(reference_pose(m, 5.0), [1.0] * 4)
    np.testing.assert_allclose(reference_pose(m, 0.25), [0.25] * 4)


def test_motion_round_trip(walk):
    again = motion_from_dict(motion_to_dict(walk))
    np.testing.assert_array_equal(again.poses, walk.poses)
    assert again.root_displacement == walk.root_displacement


@pytest.mark.parametrize("name", ["biped_walk.json", "biped_run.json", "biped_march.json"])
def test_bundled_motions_match_the_biped(biped, name):
    assert load_motion(name).ndof == biped.ndof


# -- episodes -----------------------------------------------------------------


def test_episode_duration_mean():
    rng = np.random.default_rng(2024)
    draws = np.array([draw_episode_duration(rng) for _ in range(100_000)])
    assert abs(draws.mean() - 2.0) <= 0.02
    assert draws.min() >= 0.0


def test_initial_phase_is_uniform(walk):
    rng = np.random.default_rng(99)
    phases = np.array([sample_initial_state(walk, rng)[1] for _ in range(20_000)])
    frac = (phases - walk.times[0]) / walk.cycle_duration
    counts, _ = np.histogram(frac, bins=20, range=(0.0, 1.0))
    assert counts.sum() == len(phases)
    assert stats.chisquare(counts).pvalue > 0.01


def test_initial_state_matches_reference(walk):
    state, t0 = sample_initial_state(walk, np.random.default_rng(5))
    q, qd = sample_reference(walk, t0)
    np.testing.assert_array_equal(state.q, q)
    np.testing.assert_array_equal(state.qd, qd)


@pytest.mark.parametrize("timer, elapsed, expected", [
    (0.0, 0.5, RUNNING),
    (0.6, 0.5, FALL_END),
    (0.0, 2.0, TIMER_END),
    (0.6, 2.0, FALL_END),
    (0.5, 0.1, RUNNING),
])
def test_episode_status(timer, elapsed, expected):
    s = DynamicsState(q=np.zeros(9), qd=np.zeros(9), trunk_timer=timer)
    assert episode_status(s, elapsed, 2.0) == expected
