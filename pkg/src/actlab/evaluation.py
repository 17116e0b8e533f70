"""Evaluation protocols: normalized cumulative reward, learning-curve AUC,
random trunk perturbations, irregular terrain and query-rate sweeps."""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import ConfigError, substeps_for_rate
from .rigid2d import Ground
from .task import RUNNING

REPORT_FIELDS = ("policy", "protocol", "parameter", "mean", "stderr", "episodes", "seed")


@dataclass(frozen=True)
class NcrConfig:
    episodes: int = 32
    duration: float = 10.0

    def __post_init__(self):
        if self.episodes < 1 or self.duration <= 0:
            raise ValueError("need at least one episode of positive duration")


@dataclass(frozen=True)
class NcrResult:
    mean: float
    stderr: float
    returns: tuple  # per-episode cumulative reward
    steps: int  # control steps per episode

    @property
    def episodes(self):
        return len(self.returns)


def ncr_from_returns(returns, steps):
    """Normalize returns by the per-episode maximum (``steps``) and minimum (0)."""
    vals = np.asarray(returns, dtype=np.float64) / steps
    n = len(vals)
    stderr = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return NcrResult(float(vals.mean()), stderr, tuple(float(r) for r in returns), steps)


def episode_steps(env, duration):
    return int(round(duration * env.control_rate))


def episode_seeds(seed, n, key=0):
    return np.random.SeedSequence(seed, spawn_key=(key,)).spawn(n)


def run_episode(env, policy, rng, steps, forces=None, ext_link=-1):
    """Cumulative reward of one deterministic episode.

    ``forces`` is an optional ``(steps, substeps, 2)`` external force on link
    ``ext_link``.  After a fall the remaining steps contribute zero.
    """
    obs = env.reset(rng, duration=np.inf)
    total = 0.0
    for k in range(steps):
        a = policy.mean(obs)
        if forces is None:
            res = env.step(a)
        else:
            res = env.step(a, forces[k], ext_link)
        total += res.reward
        if res.status != RUNNING:
            break
        obs = res.obs
    return total


def _episode_job(args):
    env, policy, ss, steps = args
    return run_episode(env, policy, np.random.default_rng(ss), steps)


def evaluate_ncr(policy, env, config=NcrConfig(), seed=0, workers=1):
    """Mean NCR of the deterministic policy over episodes from the
    initial-state distribution."""
    steps = episode_steps(env, config.duration)
    seeds = episode_seeds(seed, config.episodes)
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            returns = list(ex.map(_episode_job, [(env, policy, s, steps) for s in seeds]))
    else:
        returns = [run_episode(env, policy, np.random.default_rng(s), steps) for s in seeds]
    return ncr_from_returns(returns, steps)


def learning_auc(iterations, ncr):
    """Trapezoidal area under the NCR curve divided by the iteration span."""
    x = np.asarray(iterations, dtype=np.float64)
    y = np.asarray(ncr, dtype=np.float64)
    if len(x) < 2 or len(x) != len(y):
        raise ValueError("need at least two (iteration, NCR) points")
    if np.any(np.diff(x) <= 0):
        raise ValueError("iterations must be strictly increasing")
    area = float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))
    return area / float(x[-1] - x[0])


# ---------------------------------------------------------------------------
# Perturbations


@dataclass(frozen=True)
class PerturbConfig:
    pulse_duration: tuple = (0.1, 0.4)
    gap: tuple = (1.0, 4.0)
    episodes: int = 128
    duration: float = 20.0

    def __post_init__(self):
        for lo, hi in (self.pulse_duration, self.gap):
            if not 0 < lo <= hi:
                raise ValueError("pulse and gap ranges must be positive and ordered")
        if self.episodes < 1 or self.duration <= 0:
            raise ValueError("need at least one episode of positive duration")


def sample_pulses(rng, duration, config=PerturbConfig()):
    """Pulse list ``(start, end, angle)``; each pulse follows a uniform gap."""
    pulses = []
    t = 0.0
    while True:
        t += rng.uniform(*config.gap)
        if t >= duration:
            return pulses
        d = rng.uniform(*config.pulse_duration)
        pulses.append((t, t + d, rng.uniform(0.0, 2.0 * np.pi)))
        t += d


def pulse_forces(pulses, magnitude, steps, nsub, dt):
    """Per-substep force array ``(steps, nsub, 2)`` for a pulse train."""
    t = (np.arange(steps * nsub) * dt).reshape(steps, nsub)
    out = np.zeros((steps, nsub, 2))
    for start, end, ang in pulses:
        on = (t >= start) & (t < end)
        out[on] = magnitude * np.array([np.cos(ang), np.sin(ang)])
    return out


def perturb_eval(policy, env, config=PerturbConfig(), magnitudes=(0.0,), seed=0):
    """NCR per force magnitude with random pulses on the trunk COM.

    Initial states use the same per-episode streams as :func:`evaluate_ncr`;
    pulse timing uses a separate stream, so magnitude 0 reproduces the
    unperturbed evaluation.
    """
    if any(m < 0 for m in magnitudes):
        raise ValueError("force magnitudes must be non-negative")
    steps = episode_steps(env, config.duration)
    link = env.character.trunk[0]
    state_seeds = episode_seeds(seed, config.episodes)
    pulse_seeds = episode_seeds(seed, config.episodes, key=1)
    results = []
    for mag in magnitudes:
        returns = []
        for ss, ps in zip(state_seeds, pulse_seeds):
            pulses = sample_pulses(np.random.default_rng(ps), config.duration, config)
            forces = pulse_forces(pulses, mag, steps, env.nsub, env.dt) if mag > 0 else None
            returns.append(run_episode(env, policy, np.random.default_rng(ss), steps, forces, link))
        results.append(ncr_from_returns(returns, steps))
    return results


# ---------------------------------------------------------------------------
# Terrain


@dataclass(frozen=True)
class TerrainConfig:
    kind: str = "bumps"
    h_max: float = 0.1
    s_max: float = 0.1
    segment: tuple = (0.5, 2.0)
    flat_until: float = 2.0
    length: float = 60.0

    def __post_init__(self):
        if self.kind not in ("bumps", "slopes"):
            raise ValueError(f"unknown terrain kind {self.kind!r}")
        if self.h_max < 0 or self.s_max < 0:
            raise ValueError("terrain height and slope bounds must be non-negative")
        if not 0 < self.segment[0] <= self.segment[1]:
            raise ValueError("segment length range must be positive and ordered")


def generate_terrain(config, seed):
    """Piecewise ground; flat at height 0 up to ``flat_until``."""
    rng = np.random.default_rng(seed)
    x0, x1, h0, h1 = [-1e3], [config.flat_until], [0.0], [0.0]
    x, h = config.flat_until, 0.0
    while x < config.length:
        w = rng.uniform(*config.segment)
        if config.kind == "bumps":
            hb = rng.uniform(0.0, config.h_max)
            x0.append(x), x1.append(x + w), h0.append(hb), h1.append(hb)
        else:
            hn = h + rng.uniform(-config.s_max, config.s_max) * w
            x0.append(x), x1.append(x + w), h0.append(h), h1.append(hn)
            h = hn
        x += w
    return Ground(x0, x1, h0, h1)


def terrain_eval(policy, env, terrain, config=NcrConfig(), seed=0):
    """NCR on freshly generated terrain per episode."""
    steps = episode_steps(env, config.duration)
    returns = []
    for k, ss in enumerate(episode_seeds(seed, config.episodes)):
        ground = generate_terrain(terrain, np.random.SeedSequence(seed, spawn_key=(2, k)))
        returns.append(run_episode(env.with_ground(ground), policy, np.random.default_rng(ss),
                                   steps))
    return ncr_from_returns(returns, steps)


# ---------------------------------------------------------------------------
# Query-rate sweep


def query_rate_suite(make_env, train_config, rates=(15, 30, 60, 120), seed=0, out_dir=None,
                     final=NcrConfig(), log=None):
    """Train one policy per query rate; returns rows of
    ``(rate, substeps, final NCR, stderr, AUC)``."""
    from .learner import train

    for rate in rates:
        substeps_for_rate(rate)
    rows = []
    for rate in rates:
        env = make_env(rate)
        if env.control_rate != rate:
            raise ConfigError("environment factory ignored the query rate")
        curve = None if out_dir is None else Path(out_dir) / f"curve_{rate}hz.csv"
        res = train(env, train_config, seed, curve_path=curve, log=log)
        ncr = evaluate_ncr(res.policy, env, final, seed)
        its = [r[0] for r in res.curve]
        auc = learning_auc(its, [r[4] for r in res.curve]) if len(its) > 1 else float("nan")
        rows.append((rate, env.nsub, ncr.mean, ncr.stderr, auc))
    if out_dir is not None:
        with open(Path(out_dir) / "query_rates.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("rate_hz", "substeps", "ncr", "stderr", "auc"))
            w.writerows(rows)
    return rows


def write_report(path, rows):
    """Rows are dicts keyed by :data:`REPORT_FIELDS`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, REPORT_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow(r)
