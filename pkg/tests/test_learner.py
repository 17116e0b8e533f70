from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from actlab.learner import (Collector, ExperienceTuple, ReplayMemory, TrainConfig,
                            actor_update, bound_action_gradient, critic_update, epsilon,
                            ptd_indicator, read_curve, resume, train, write_curve)
from actlab.neural import Critic, GaussianPolicy, MomentumSGD
from actlab.task import FALL_END, RUNNING, TIMER_END


class StubEnv:
    """Constant one-dimensional environment; episodes last ``length`` steps."""

    state_dim, action_dim = 2, 1
    action_bounds = (np.array([-1.0]), np.array([1.0]))

    def __init__(self, length=5):
        self.length = length
        self.k = 0

    def reset(self, rng, duration=None):
        self.k = 0
        return np.array([0.0, 1.0])

    def step(self, a):
        self.k += 1
        status = TIMER_END if self.k >= self.length else RUNNING
        return SimpleNamespace(obs=np.array([self.k, 1.0]), reward=0.5, status=status)


def tiny_agent(seed=0, gamma=0.9):
    rng = np.random.default_rng(seed)
    policy = GaussianPolicy.create(2, [-1.0], [1.0], 0.1, rng, (4,))
    critic = Critic.create(2, gamma, rng, (4,))
    critic.normalizer = policy.normalizer
    return policy, critic


# -- PTD indicator and bounded gradients -------------------------------------


@pytest.mark.parametrize("delta, expected", [
    (-1.0, 0.0), (-1e-300, 0.0), (0.0, 0.0), (-0.0, 0.0), (1e-300, 1.0), (2.5, 1.0),
])
def test_ptd_indicator(delta, expected):
    assert ptd_indicator(delta) == expected


@pytest.mark.parametrize("mu, grad, expected", [
    (0.5, 0.7, 0.7),     # inside the bounds: unchanged
    (0.5, -0.7, -0.7),
    (1.1, 0.5, -0.1),    # above u and pushing outward: redirected to u - mu
    (1.1, -0.5, -0.5),   # above u but pushing inward: unchanged
    (-1.2, 0.3, 0.3),    # below l and pushing inward: unchanged
    (-1.2, -0.3, 0.2),   # below l and pushing outward: redirected to l - mu
    (1.0, 0.4, 0.4),     # on the bound counts as inside
])
def test_bounded_gradient_cases(mu, grad, expected):
    out = bound_action_gradient([grad], [mu], -1.0, 1.0)
    assert out[0] == pytest.approx(expected, abs=1e-15)


@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=1, max_size=8))
def test_bounded_gradient_never_pushes_further_out(pairs):
    mu, grad = np.array(pairs).T
    out = bound_action_gradient(grad, mu, -1.0, 1.0)
    assert np.all(out[mu > 1.0] <= np.maximum(grad[mu > 1.0], 0) + 1e-15)
    assert np.all(out[(mu > 1.0) & (grad > 0)] < 0)
    assert np.all(out[(mu < -1.0) & (grad < 0)] > 0)
    inside = (mu >= -1.0) & (mu <= 1.0)
    np.testing.assert_array_equal(out[inside], grad[inside])


# -- actor and critic updates ------------------------------------------------


def filled_replay(reward, n=32, lam=1, terminal=RUNNING):
    rep = ReplayMemory(64, 2, 1)
    for i in range(n):
        rep.add([0.1 * i, 1.0], [0.9], reward, [0.1 * i + 0.1, 1.0], lam, terminal)
    return rep


def test_actor_unchanged_when_no_positive_td():
    policy, critic = tiny_agent()
    rep = filled_replay(reward=-100.0)
    before = [p.copy() for p in policy.net.params]
    opt = MomentumSGD(0.1)
    n_pos = actor_update(rep, policy, critic, opt, TrainConfig(minibatch=8), np.random.default_rng(0))
    assert n_pos == 0
    for a, b in zip(before, policy.net.params):
        np.testing.assert_array_equal(a, b)


def test_actor_moves_mean_toward_rewarded_action():
    policy, critic = tiny_agent()
    rep = ReplayMemory(4, 2, 1)
    s = np.array([0.3, 1.0])
    mu0 = policy.mean(s)[0]
    a = mu0 + 0.2
    rep.add(s, [a], 100.0, s, 1, FALL_END)
    n_pos = actor_update(rep, policy, critic, MomentumSGD(1e-4), TrainConfig(minibatch=1),
                         np.random.default_rng(0), idx=np.array([0]))
    assert n_pos == 1
    mu1 = policy.mean(s)[0]
    assert mu0 < mu1 < a + 1e-9


def test_actor_samples_only_exploration_tuples():
    policy, critic = tiny_agent()
    rep = filled_replay(reward=100.0, lam=0)
    n_pos = actor_update(rep, policy, critic, MomentumSGD(0.01), TrainConfig(minibatch=8),
                         np.random.default_rng(0))
    assert n_pos == 0


def test_critic_update_reduces_bellman_error():
    policy, critic = tiny_agent(gamma=0.5)
    rep = filled_replay(reward=0.7, terminal=FALL_END)  # no bootstrap: target is r
    opt = MomentumSGD(0.05)
    cfg = TrainConfig(minibatch=32, gamma=0.5)
    idx = np.arange(32)
    first = critic_update(rep, critic, opt, cfg, np.random.default_rng(0), idx)
    for _ in range(300):
        last = critic_update(rep, critic, opt, cfg, np.random.default_rng(0), idx)
    assert last < 0.1 * first


def test_critic_update_waits_for_a_full_minibatch():
    _, critic = tiny_agent()
    rep = filled_replay(reward=0.0, n=3)
    assert critic_update(rep, critic, MomentumSGD(0.1), TrainConfig(minibatch=8),
                         np.random.default_rng(0)) is None


# -- replay memory -----------------------------------------------------------


def test_replay_evicts_oldest_first():
    rep = ReplayMemory(3, 1, 1)
    for i in range(5):
        rep.add([i], [0], float(i), [i], i % 2)
    assert len(rep) == 3 and rep.inserted == 5
    np.testing.assert_array_equal(rep.r[rep.oldest_first()], [2.0, 3.0, 4.0])
    assert rep.n_explore == int(rep.lam[:3].sum()) == 1


def test_explore_only_sampling():
    rep = ReplayMemory(100, 1, 1)
    for i in range(100):
        rep.add([i], [0], 0.0, [i], int(i % 10 == 0))
    idx = rep.sample_indices(np.random.default_rng(0), 8, explore_only=True)
    assert len(idx) == 8 and np.all(rep.lam[idx] == 1)
    assert rep.sample_indices(np.random.default_rng(0), 11, explore_only=True) is None
    assert rep.sample_indices(np.random.default_rng(0), 11, explore_only=False) is not None
    assert ReplayMemory(5, 1, 1).sample_indices(np.random.default_rng(0), 1) is None


def test_replay_rejects_bad_tuples():
    with pytest.raises(ValueError):
        ReplayMemory(4, 1, 1).add([0], [0], np.nan, [0], 0)
    with pytest.raises(ValueError):
        ExperienceTuple(np.zeros(1), np.zeros(1), 0.0, np.zeros(1), lam=2)
    with pytest.raises(ValueError):
        ReplayMemory(0, 1, 1)


# -- exploration -------------------------------------------------------------


def test_epsilon_schedule():
    cfg = TrainConfig(eps_start=1.0, eps_end=0.2, eps_iterations=100)
    assert epsilon(0, cfg) == 1.0
    assert epsilon(50, cfg) == pytest.approx(0.6)
    assert epsilon(100, cfg) == pytest.approx(0.2)
    assert epsilon(10_000, cfg) == pytest.approx(0.2)


@pytest.mark.parametrize("eps", [0.2, 0.5, 0.9])
def test_bernoulli_exploration_frequency(eps):
    policy, _ = tiny_agent()
    rep = ReplayMemory(100_000, 2, 1)
    lams = Collector(StubEnv(), np.random.default_rng(11)).collect(policy, eps, 100_000, rep)
    assert abs(lams.mean() - eps) <= 0.01
    assert rep.n_explore == int(lams.sum())


def test_collector_restarts_finished_episodes():
    policy, _ = tiny_agent()
    rep = ReplayMemory(20, 2, 1)
    col = Collector(StubEnv(length=4), np.random.default_rng(0))
    col.collect(policy, 0.0, 12, rep)
    assert col.episodes == 3
    assert list(rep.term[:4]) == [0, 0, 0, 1]


# -- configuration and training loop ------------------------------------------


def test_train_config_round_trip_and_validation():
    cfg = TrainConfig(hidden=[8, 4])
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"learning_rate": 0.1})
    with pytest.raises(ValueError):
        TrainConfig(gamma=1.0)
    with pytest.raises(ValueError):
        TrainConfig(eps_start=0.1, eps_end=0.5)


def tiny_config(**kw):
    base = dict(iterations=40, eval_every=20, eval_episodes=2, eval_duration=0.2, hidden=(8,),
                replay_capacity=2000, normalizer_samples=20, normalizer_warmup=5,
                eps_iterations=40)
    return TrainConfig(**{**base, **kw})


def test_training_is_deterministic(env_pd, tmp_path):
    cfg = tiny_config()
    a = train(env_pd, cfg, 3, curve_path=tmp_path / "a.csv")
    b = train(env_pd, cfg, 3, curve_path=tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert [r[0] for r in a.curve] == [0, 20, 40]
    assert a.tuples == 40 * cfg.steps_per_iteration
    for pa, pb in zip(a.policy.net.params, b.policy.net.params):
        np.testing.assert_array_equal(pa, pb)


def test_curve_round_trip(tmp_path):
    rows = [(0, 0, 1.0, float("nan"), 0.01), (10, 320, 0.9, 0.02, 1 / 3)]
    write_curve(tmp_path / "c.csv", rows, seed=1, chash="abc")
    back = read_curve(tmp_path / "c.csv")
    assert back[1] == rows[1]
    assert np.isnan(back[0][3])
    assert (tmp_path / "c.csv").read_text().startswith("# seed=1 config_hash=abc")


def test_checkpoint_resume(env_pd, tmp_path):
    cfg = tiny_config(iterations=10, eval_every=0)
    res = train(env_pd, cfg, 4, checkpoint_path=tmp_path / "ck.npz", meta={"run": "x"})
    ck = resume(tmp_path / "ck.npz")
    assert ck.iteration == 10 and ck.meta == {"run": "x"}
    assert ck.critic.normalizer is ck.policy.normalizer
    s = env_pd.reset(np.random.default_rng(0))
    np.testing.assert_array_equal(ck.policy.mean(s), res.policy.mean(s))
    more = train(env_pd, cfg, 4, policy=ck.policy, critic=ck.critic, start_iteration=10)
    assert more.iterations == 20


def test_short_muscle_training_stays_finite(env_mtu):
    cfg = tiny_config(iterations=150, eval_every=0, hidden=(64, 32), normalizer_samples=300,
                      actor_lr=0.001)
    res = train(env_mtu, cfg, 1)
    assert all(np.all(np.isfinite(p)) for p in res.policy.net.params)
    s = env_mtu.reset(np.random.default_rng(0))
    mu = res.policy.mean(s)
    assert np.all(mu > -1.0) and np.all(mu < 2.0)
