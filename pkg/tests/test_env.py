import numpy as np
import pytest

from actlab.actuation import pack_params
from actlab.env import MAX_SPEED, ConfigError, ImitationEnv, bundled_env, substeps_for_rate
from actlab.rigid2d import DynamicsState, Ground, contact_positions
from actlab.task import FALL_END, RUNNING, TIMER_END, featurize, load_motion


@pytest.mark.parametrize("kind, dims", [
    ("tor", (58, 6, 0)),
    ("vel", (58, 6, 6)),
    ("pd", (58, 6, 12)),
    ("mtu", (74, 16, 114)),
])
def test_state_action_parameter_dimensions(kind, dims):
    env = bundled_env(kind)
    assert (env.state_dim, env.action_dim, len(pack_params(env.actuation))) == dims


@pytest.mark.parametrize("kind, dim", [("pd", 30), ("mtu", 46)])
def test_phase_variant_dimension(kind, dim):
    assert bundled_env(kind, state_variant="phase").state_dim == dim


@pytest.mark.parametrize("rate, substeps", [(15, 40), (30, 20), (60, 10), (120, 5)])
def test_substeps_per_query_rate(rate, substeps):
    assert substeps_for_rate(rate) == substeps
    assert bundled_env("pd", control_rate=rate).nsub == substeps


@pytest.mark.parametrize("rate", [7, 0, -60, 700])
def test_rates_that_do_not_divide_the_sim_rate(rate):
    with pytest.raises(ConfigError):
        substeps_for_rate(rate)


def test_mismatched_inputs_rejected(biped):
    env = bundled_env("pd")
    short = load_motion('{"frames": [{"t": 0, "q": [0, 1, 0]}], "cycle_duration": 1}')
    with pytest.raises(ConfigError):
        ImitationEnv(biped, short, env.actuation)
    with pytest.raises(ConfigError):
        ImitationEnv(biped, env.motion, env.actuation, state_variant="joints")


def test_observation_layout(env_any):
    env = env_any
    env.reset(np.random.default_rng(0))
    obs = env.observation()
    s = env.state
    np.testing.assert_allclose(obs[:29], featurize(env.character, s.q, s.qd), atol=1e-12)
    q_ref, qd_ref = env.reference()
    np.testing.assert_allclose(obs[29:58], featurize(env.character, q_ref, qd_ref), atol=1e-12)
    np.testing.assert_array_equal(obs[58:], s.l_ce)


def test_step_outputs_per_substep_series(env_any):
    env = env_any
    env.reset(np.random.default_rng(1))
    lo, hi = env.action_bounds
    res = env.step(0.5 * (lo + hi))
    assert res.torques.shape == (10, 6)
    assert res.mtu_forces.shape == (10, env.actuation.n_units)
    assert np.all(np.abs(res.torques) <= env.character.torque_limits + 1e-9)
    assert 0.0 <= res.reward <= 1.0
    assert res.obs.shape == (env.state_dim,)


def test_rollouts_are_deterministic(env_any):
    env = env_any

    def roll():
        rng = np.random.default_rng(3)
        env.reset(rng)
        lo, hi = env.action_bounds
        out = []
        for _ in range(30):
            r = env.step(rng.uniform(lo, hi))
            out.append((r.reward, r.obs.copy()))
            if r.status != RUNNING:
                break
        return out

    a, b = roll(), roll()
    assert len(a) == len(b)
    for (ra, oa), (rb, ob) in zip(a, b):
        assert ra == rb
        np.testing.assert_array_equal(oa, ob)


def test_timer_end_after_duration(env_pd):
    env = env_pd
    env.reset(np.random.default_rng(4), duration=3 / 60)
    a = env.reference(env.control_dt)[0][3:]
    statuses = [env.step(a).status for _ in range(3)]
    assert statuses == [RUNNING, RUNNING, TIMER_END]


def test_blowup_ends_as_a_fall_with_zero_reward(env_pd):
    env = env_pd
    env.reset(np.random.default_rng(5))
    qd = env.state.qd.copy()
    qd[3] = 2 * MAX_SPEED
    env.set_state(env.state.replace(qd=qd), env.phase0)
    before = env.state
    res = env.step(np.zeros(6))
    assert res.status == FALL_END and res.reward == 0.0
    assert env.state is before


def test_lying_on_the_ground_is_a_fall(env_pd):
    env = env_pd
    q = np.zeros(9)
    q[1], q[2] = 0.12, -np.pi / 2  # trunk horizontal on the floor
    env.set_state(DynamicsState(q=q, qd=np.zeros(9)), 0.0)
    statuses = [env.step(np.zeros(6)).status for _ in range(40)]
    assert FALL_END in statuses
    assert statuses.index(FALL_END) >= 29  # the trunk must stay down for 0.5 s


def test_zero_external_force_matches_none(env_pd):
    env = env_pd
    env.reset(np.random.default_rng(6))
    start = (env.state, env.phase0)
    a = np.zeros(6)
    free = env.step(a)
    env.set_state(start[0], start[1])
    pushed = env.step(a, np.zeros((10, 2)), ext_link=0)
    np.testing.assert_array_equal(free.obs, pushed.obs)
    env.set_state(start[0], start[1])
    shoved = env.step(a, np.tile([300.0, 0.0], (10, 1)), ext_link=0)
    assert not np.array_equal(shoved.obs, free.obs)


def test_pd_standing_pose_holds(env_pd):
    env = env_pd
    q = np.zeros(9)
    q[1] = -contact_positions(env.character, q)[:, 1].min() + 1e-3
    env.set_state(DynamicsState(q=q, qd=np.zeros(9)), 0.0)
    for _ in range(300):
        res = env.step(np.zeros(6))
        assert res.status == RUNNING
    assert env.state.q[1] > 0.9


def test_ground_swap_changes_root_height(env_pd):
    env = env_pd.with_ground(Ground.flat(0.25))
    env.reset(np.random.default_rng(7))
    assert env.observation()[0] == pytest.approx(env.state.q[1] - 0.25)


def test_phase_observation(env_pd):
    env = bundled_env("pd", state_variant="phase")
    env.reset(np.random.default_rng(8))
    obs = env.observation()
    assert obs[29] == pytest.approx(env.phase())
    assert 0.0 <= env.phase() < 1.0
