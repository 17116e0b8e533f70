"""Actor-critic learning with positive temporal differences, experience
replay, epsilon-mixed exploration and bounded action gradients."""
from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .neural import Critic, GaussianPolicy, MomentumSGD, load_checkpoint, save_checkpoint
from .task import FALL_END, RUNNING, TIMER_END

TERMINAL_CODE = {RUNNING: 0, TIMER_END: 1, FALL_END: 2}
CURVE_FIELDS = ("iteration", "tuples", "epsilon", "loss", "eval_ncr")


@dataclass(frozen=True)
class ExperienceTuple:
    s: np.ndarray
    a: np.ndarray  # unclamped sampled action
    r: float
    s2: np.ndarray
    lam: int
    terminal: str = RUNNING

    def __post_init__(self):
        if not np.isfinite(self.r):
            raise ValueError("reward must be finite")
        if self.lam not in (0, 1):
            raise ValueError("lambda must be 0 or 1")
        if self.terminal not in TERMINAL_CODE:
            raise ValueError(f"unknown terminal kind {self.terminal!r}")


class ReplayMemory:
    """Fixed-capacity ring buffer; the oldest tuple is evicted first.

    Stored as float32 columns to keep the full capacity in memory.
    """

    def __init__(self, capacity, state_dim, action_dim):
        if capacity < 1:
            raise ValueError("replay capacity must be positive")
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, state_dim), np.float32)
        self.s2 = np.zeros((capacity, state_dim), np.float32)
        self.a = np.zeros((capacity, action_dim), np.float32)
        self.r = np.zeros(capacity, np.float64)
        self.lam = np.zeros(capacity, np.uint8)
        self.term = np.zeros(capacity, np.uint8)
        self.size = 0
        self.head = 0
        self.n_explore = 0
        self.inserted = 0

    def __len__(self):
        return self.size

    def add(self, s, a, r, s2, lam, terminal=RUNNING):
        if not np.isfinite(r):
            raise ValueError("reward must be finite")
        i = self.head
        if self.size == self.capacity:
            self.n_explore -= int(self.lam[i])
        else:
            self.size += 1
        self.s[i], self.a[i], self.r[i], self.s2[i] = s, a, r, s2
        self.lam[i] = lam
        self.term[i] = TERMINAL_CODE[terminal]
        self.n_explore += int(lam)
        self.head = (i + 1) % self.capacity
        self.inserted += 1

    def add_tuple(self, t: ExperienceTuple):
        self.add(t.s, t.a, t.r, t.s2, t.lam, t.terminal)

    def sample_indices(self, rng, n, explore_only=False):
        """``n`` indices drawn uniformly (with replacement).

        With ``explore_only`` the draw is restricted to lambda = 1 tuples by
        rejection; returns ``None`` if fewer than ``n`` such tuples exist.
        """
        if explore_only:
            if self.n_explore < n:
                return None
            out = np.empty(0, np.int64)
            while len(out) < n:
                idx = rng.integers(0, self.size, size=2 * n)
                out = np.concatenate([out, idx[self.lam[idx] == 1]])
            return out[:n]
        if self.size < n:
            return None
        return rng.integers(0, self.size, size=n)

    def clear(self):
        self.size = self.head = self.n_explore = 0

    def oldest_first(self):
        """Indices from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.head) % self.capacity


@dataclass
class TrainConfig:
    gamma: float = 0.9
    actor_lr: float = 0.001
    critic_lr: float = 0.01
    momentum: float = 0.9
    minibatch: int = 32
    replay_capacity: int = 500_000
    actor_decay: float = 0.0005
    critic_decay: float = 0.0
    eps_start: float = 1.0
    eps_end: float = 0.2
    eps_iterations: int = 500_000
    steps_per_iteration: int = 32
    iterations: int = 1_000_000
    sigma_frac: float = 0.1
    hidden: tuple = (512, 256)
    eval_every: int = 5000
    eval_episodes: int = 8
    eval_duration: float = 10.0
    normalizer_samples: int = 1000
    normalizer_warmup: int = 1000
    checkpoint_every: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0:
            raise ValueError("epsilon schedule must satisfy 0 <= end <= start <= 1")
        for name in ("minibatch", "replay_capacity", "steps_per_iteration", "eps_iterations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0 or self.eval_every < 0 or self.checkpoint_every < 0:
            raise ValueError("iteration counts must be non-negative")
        if self.sigma_frac <= 0:
            raise ValueError("sigma_frac must be positive")
        self.hidden = tuple(int(h) for h in self.hidden)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training fields: {sorted(unknown)}")
        return cls(**d)


def desk_config(iterations=50_000, **overrides):
    """Scaled-down budget for single-CPU runs.

    The exploration anneal spans the whole run and the actor step is larger
    than the full-budget default so progress shows within tens of thousands
    of iterations.
    """
    base = dict(iterations=iterations, eps_iterations=max(iterations, 1), actor_lr=0.003,
                replay_capacity=200_000, eval_every=max(iterations // 10, 1))
    return TrainConfig(**{**base, **overrides})


def config_hash(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:12]


def epsilon(iteration, config):
    """Linear anneal from ``eps_start`` to ``eps_end``, then constant."""
    frac = min(max(iteration / config.eps_iterations, 0.0), 1.0)
    return config.eps_start + frac * (config.eps_end - config.eps_start)


def bound_action_gradient(grad, mu, lower, upper):
    """Redirect action gradients that would push the mean further outside
    the bounds toward the violated bound; otherwise pass them through."""
    grad = np.asarray(grad, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    lower = np.broadcast_to(lower, mu.shape)
    upper = np.broadcast_to(upper, mu.shape)
    out = grad.copy()
    low = (mu < lower) & (grad < 0)
    high = (mu > upper) & (grad > 0)
    out[low] = (lower - mu)[low]
    out[high] = (upper - mu)[high]
    return out


def ptd_indicator(delta):
    return (np.asarray(delta) > 0).astype(np.float64)


# ---------------------------------------------------------------------------
# Experience collection


class Collector:
    """Runs the environment across calls, restarting episodes as they end."""

    def __init__(self, env, rng):
        self.env = env
        self.rng = rng
        self.obs = None
        self.episodes = 0

    def collect(self, policy, eps, m, replay):
        """Append ``m`` tuples; returns the lambda values drawn."""
        env, rng = self.env, self.rng
        lams = np.empty(m, np.uint8)
        for k in range(m):
            if self.obs is None:
                self.obs = env.reset(rng)
                self.episodes += 1
            lam = int(rng.random() < eps)
            a = policy.sample_action(self.obs, lam, rng)
            res = env.step(a)
            replay.add(self.obs, a, res.reward, res.obs, lam, res.status)
            lams[k] = lam
            self.obs = None if res.status != RUNNING else res.obs
        return lams


def collect_steps(env, policy, eps, m, replay, rng):
    """Stand-alone collection of ``m`` steps starting from a fresh episode."""
    return Collector(env, rng).collect(policy, eps, m, replay)


# ---------------------------------------------------------------------------
# Updates


def _bootstrap_mask(term):
    return (term != TERMINAL_CODE[FALL_END]).astype(np.float64)


def critic_update(replay, critic, opt, config, rng, idx=None):
    """One momentum-SGD step on the Bellman loss; returns the mean loss.

    The step minimizes the loss in the network's scaled output units.
    """
    if idx is None:
        idx = replay.sample_indices(rng, config.minibatch)
        if idx is None:
            return None
    s = replay.s[idx].astype(np.float64)
    s2 = replay.s2[idx].astype(np.float64)
    y = replay.r[idx] + config.gamma * critic.value(s2) * _bootstrap_mask(replay.term[idx])
    v, cache = critic.value_and_cache(s)
    err = v - y
    grads = critic.backward(cache, err / (critic.scale ** 2 * len(idx)))
    opt.step(critic.net.params, grads)
    return float(0.5 * np.mean(err ** 2))


def actor_update(replay, policy, critic, opt, config, rng, idx=None):
    """Positive-temporal-difference step on exploration tuples.

    Returns the number of tuples with a positive TD error; when none has one
    the parameters are left untouched.
    """
    if idx is None:
        idx = replay.sample_indices(rng, config.minibatch, explore_only=True)
        if idx is None:
            return 0
    s = replay.s[idx].astype(np.float64)
    s2 = replay.s2[idx].astype(np.float64)
    a = replay.a[idx].astype(np.float64)
    delta = (replay.r[idx] + config.gamma * critic.value(s2) * _bootstrap_mask(replay.term[idx])
             - critic.value(s))
    pos = ptd_indicator(delta)
    n_pos = int(pos.sum())
    if n_pos == 0:
        return 0
    mu, cache = policy.mean_and_cache(s)
    g = bound_action_gradient(a - mu, mu, policy.lower, policy.upper) / policy.sigma ** 2
    g *= pos[:, None]
    # ascent direction, negated for the descent optimizer
    grads = policy.backward(cache, -g / len(idx))
    opt.step(policy.net.params, grads)
    return n_pos


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class TrainResult:
    policy: GaussianPolicy
    critic: Critic
    curve: list = field(default_factory=list)  # rows of CURVE_FIELDS
    iterations: int = 0
    tuples: int = 0
    seconds: float = 0.0


def seed_streams(seed, n=4, key=0):
    """Independent generators derived from a master seed."""
    ss = np.random.SeedSequence(seed, spawn_key=(key,))
    return [np.random.default_rng(s) for s in ss.spawn(n)]


def init_normalizer(env, norm, n, rng):
    """Seed normalizer statistics from ``n`` episode start states."""
    obs = np.array([env.reset(rng) for _ in range(n)])
    norm.update(obs)


def make_agent(env, config, rng):
    policy = GaussianPolicy.create(env.state_dim, *env.action_bounds, config.sigma_frac, rng,
                                   config.hidden)
    critic = Critic.create(env.state_dim, config.gamma, rng, config.hidden)
    critic.normalizer = policy.normalizer
    return policy, critic


def train(env, config, seed, curve_path=None, checkpoint_path=None, policy=None, critic=None,
          replay=None, start_iteration=0, meta=None, log=None):
    """Run actor-critic training; deterministic for a given seed.

    Passing ``policy``/``critic`` warm-starts from existing networks.  When
    ``curve_path`` is set the learning curve is written as CSV.
    """
    from .evaluation import NcrConfig, evaluate_ncr

    rng_init, rng_collect, rng_batch, rng_eval = seed_streams(seed)
    warm = start_iteration
    if policy is None:
        policy, critic = make_agent(env, config, rng_init)
        init_normalizer(env, policy.normalizer, config.normalizer_samples, rng_init)
        warm += config.normalizer_warmup
    replay = replay or ReplayMemory(config.replay_capacity, env.state_dim, env.action_dim)
    actor_opt = MomentumSGD(config.actor_lr, config.momentum, config.actor_decay)
    critic_opt = MomentumSGD(config.critic_lr, config.momentum, config.critic_decay)
    collector = Collector(env, rng_collect)
    ncr_cfg = NcrConfig(episodes=config.eval_episodes, duration=config.eval_duration)
    eval_seed = int(rng_eval.integers(2 ** 31))
    meta = meta or {}
    chash = meta.get("config_hash") or config_hash({"train": config.to_dict(), **meta})

    result = TrainResult(policy, critic)
    losses = []
    t0 = time.perf_counter()
    end = start_iteration + config.iterations

    def record(it):
        ncr = evaluate_ncr(policy, env, ncr_cfg, eval_seed).mean
        loss = float(np.mean(losses)) if losses else float("nan")
        row = (it, replay.inserted, epsilon(it, config), loss, ncr)
        result.curve.append(row)
        losses.clear()
        if log:
            log(f"iter {it} tuples {replay.inserted} eps {row[2]:.3f} loss {loss:.5f} ncr {ncr:.4f}")

    if config.eval_every:
        record(start_iteration)
    it = start_iteration
    try:
        for it in range(start_iteration + 1, end + 1):
            eps = epsilon(it, config)
            n0 = replay.head
            collector.collect(policy, eps, config.steps_per_iteration, replay)
            if it <= warm:
                idx = (np.arange(config.steps_per_iteration) + n0) % replay.capacity
                policy.normalizer.update(replay.s[idx].astype(np.float64))
            loss = critic_update(replay, critic, critic_opt, config, rng_batch)
            if loss is not None:
                losses.append(loss)
            actor_update(replay, policy, critic, actor_opt, config, rng_batch)
            if config.eval_every and (it % config.eval_every == 0 or it == end):
                record(it)
            if checkpoint_path and config.checkpoint_every and it % config.checkpoint_every == 0:
                save_checkpoint(checkpoint_path, policy, critic, it, meta)
    except Exception:
        if checkpoint_path:
            save_checkpoint(checkpoint_path, policy, critic, it - 1, meta)
        raise
    finally:
        if curve_path:
            write_curve(curve_path, result.curve, seed, chash)
    if checkpoint_path:
        save_checkpoint(checkpoint_path, policy, critic, end, meta)
    result.iterations = end
    result.tuples = replay.inserted
    result.seconds = time.perf_counter() - t0
    return result


def write_curve(path, rows, seed, chash):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={seed} config_hash={chash}\n")
        w = csv.writer(fh)
        w.writerow(CURVE_FIELDS)
        for it, tuples, eps, loss, ncr in rows:
            w.writerow([it, tuples, repr(float(eps)), repr(float(loss)), repr(float(ncr))])


def read_curve(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    return [(int(r["iteration"]), int(r["tuples"]), float(r["epsilon"]), float(r["loss"]),
             float(r["eval_ncr"])) for r in rows]


def resume(checkpoint_path):
    ckpt = load_checkpoint(checkpoint_path)
    ckpt.critic.normalizer = ckpt.policy.normalizer
    return ckpt
