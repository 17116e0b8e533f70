"""Actuator-parameter search: a (mu/mu_w, lambda) CMA-ES core and the
alternation between policy training and parameter search."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .actuation import actuation_to_dict, pack_params, unpack_params
from .evaluation import episode_seeds, episode_steps, run_episode
from .learner import ReplayMemory, TrainConfig, make_agent, init_normalizer, seed_streams, train

EIG_FLOOR = 1e-12


@dataclass
class CmaState:
    mean: np.ndarray
    sigma: float
    cov: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    popsize: int = 16
    pc: np.ndarray = None
    ps: np.ndarray = None
    generation: int = 0
    best_x: np.ndarray = None
    best_f: float = np.inf
    evals: int = 0

    def __post_init__(self):
        n = len(self.mean)
        self.mean = np.asarray(self.mean, dtype=np.float64).copy()
        self.cov = np.asarray(self.cov, dtype=np.float64).copy()
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=np.float64), (n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=np.float64), (n,)).copy()
        if self.cov.shape != (n, n):
            raise ValueError("covariance must be n x n")
        if not self.sigma > 0:
            raise ValueError("step size must be positive")
        if self.popsize < 2:
            raise ValueError("population needs at least two samples")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bounds exceed upper bounds")
        self.pc = np.zeros(n) if self.pc is None else np.asarray(self.pc, dtype=np.float64)
        self.ps = np.zeros(n) if self.ps is None else np.asarray(self.ps, dtype=np.float64)
        self._strategy()
        self._decompose()

    @property
    def dim(self):
        return len(self.mean)

    def _strategy(self):
        n, lam = self.dim, self.popsize
        self.mu = lam // 2
        w = np.log(self.mu + 0.5) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mueff = 1.0 / np.sum(self.weights ** 2)
        self.cc = (4 + self.mueff / n) / (n + 4 + 2 * self.mueff / n)
        self.cs = (self.mueff + 2) / (n + self.mueff + 5)
        self.c1 = 2 / ((n + 1.3) ** 2 + self.mueff)
        self.cmu = min(1 - self.c1,
                       2 * (self.mueff - 2 + 1 / self.mueff) / ((n + 2) ** 2 + self.mueff))
        self.damps = 1 + 2 * max(0.0, np.sqrt((self.mueff - 1) / (n + 1)) - 1) + self.cs
        self.chi_n = np.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n ** 2))

    def _decompose(self):
        c = 0.5 * (self.cov + self.cov.T)
        vals, vecs = np.linalg.eigh(c)
        vals = np.maximum(vals, EIG_FLOOR)
        self.cov = (vecs * vals) @ vecs.T
        self.eigvals, self.eigvecs = vals, vecs


def cma_init(x0, sigma0, lower=-np.inf, upper=np.inf, popsize=16):
    x0 = np.asarray(x0, dtype=np.float64)
    return CmaState(x0, float(sigma0), np.eye(len(x0)), lower, upper, popsize)


def cma_ask(state, rng):
    """``popsize`` samples from N(mean, sigma^2 C), clamped to the bounds."""
    z = rng.standard_normal((state.popsize, state.dim))
    y = (z * np.sqrt(state.eigvals)) @ state.eigvecs.T
    return np.clip(state.mean + state.sigma * y, state.lower, state.upper)


def cma_tell(state, candidates, fitnesses):
    """Rank-based update toward lower fitness; non-finite values rank last."""
    x = np.asarray(candidates, dtype=np.float64)
    f = np.asarray(fitnesses, dtype=np.float64)
    if x.shape != (state.popsize, state.dim) or f.shape != (state.popsize,):
        raise ValueError(f"expected {state.popsize} candidates of dimension {state.dim}")
    f = np.where(np.isfinite(f), f, np.inf)
    state.generation += 1
    state.evals += len(f)
    best = int(np.argmin(f))
    if f[best] < state.best_f:
        state.best_f, state.best_x = float(f[best]), x[best].copy()
    if np.all(f == f[0]):
        return state  # no ranking information
    order = np.argsort(f, kind="stable")[:state.mu]
    old = state.mean
    y = (x[order] - old) / state.sigma
    yw = state.weights @ y
    state.mean = old + state.sigma * yw

    n = state.dim
    inv_sqrt = (state.eigvecs / np.sqrt(state.eigvals)) @ state.eigvecs.T
    state.ps = (1 - state.cs) * state.ps + np.sqrt(state.cs * (2 - state.cs) * state.mueff) * (inv_sqrt @ yw)
    ps_norm = np.linalg.norm(state.ps)
    hsig = ps_norm / np.sqrt(1 - (1 - state.cs) ** (2 * state.generation)) / state.chi_n < 1.4 + 2 / (n + 1)
    state.pc = (1 - state.cc) * state.pc + hsig * np.sqrt(state.cc * (2 - state.cc) * state.mueff) * yw
    rank_mu = (y.T * state.weights) @ y
    dh = (1 - hsig) * state.cc * (2 - state.cc)
    state.cov = ((1 - state.c1 - state.cmu) * state.cov
                 + state.c1 * (np.outer(state.pc, state.pc) + dh * state.cov)
                 + state.cmu * rank_mu)
    state.sigma *= np.exp((state.cs / state.damps) * (ps_norm / state.chi_n - 1))
    state.sigma = float(min(max(state.sigma, 1e-300), 1e300))
    state._decompose()
    return state


def cma_minimize(fn, x0, sigma0, generations, rng, lower=-np.inf, upper=np.inf, popsize=16):
    state = cma_init(x0, sigma0, lower, upper, popsize)
    for _ in range(generations):
        xs = cma_ask(state, rng)
        cma_tell(state, xs, [fn(x) for x in xs])
    return state


# ---------------------------------------------------------------------------
# Actuator parameters


def normalize_psi(model, psi):
    lo, hi = model.param_lower, model.param_upper
    return np.where(hi > lo, (psi - lo) / np.where(hi > lo, hi - lo, 1.0), 0.5)


def denormalize_psi(model, u):
    return model.param_lower + np.asarray(u) * (model.param_upper - model.param_lower)


def evaluate_psi(psi, policy, env, rollouts=16, duration=10.0, seed=0):
    """Mean undiscounted return of the deterministic policy under parameters ``psi``.

    Rollout seeds are fixed by ``seed`` so the value is a pure function of
    ``(psi, policy)``.
    """
    env_psi = env.with_actuation(unpack_params(env.actuation, psi))
    steps = episode_steps(env_psi, duration)
    returns = [run_episode(env_psi, policy, np.random.default_rng(s), steps)
               for s in episode_seeds(seed, rollouts)]
    return float(np.mean(returns))


def _psi_job(args):
    psi, policy, env, rollouts, duration, seed = args
    return evaluate_psi(psi, policy, env, rollouts, duration, seed)


@dataclass
class AlternationConfig:
    passes: int = 6
    generations: int = 250
    popsize: int = 16
    rollouts: int = 16
    duration: float = 10.0
    iterations: int = 250_000
    sigma0: float = 0.2  # in units of the normalized search window
    workers: int = 1

    def __post_init__(self):
        if self.passes < 1 or self.popsize < 2 or self.rollouts < 1 or self.duration <= 0:
            raise ValueError("alternation budgets must be positive")
        if self.generations < 0 or self.iterations < 0 or self.workers < 1:
            raise ValueError("generation and iteration counts must be non-negative")
        if not self.sigma0 > 0:
            raise ValueError("initial step size must be positive")


@dataclass
class AlternationResult:
    policy: object
    critic: object
    actuation: object
    objective: float
    initial_objective: float
    passes: list = field(default_factory=list)  # (pass, objective, incumbent)
    generations: list = field(default_factory=list)  # (pass, gen, best, mean, sigma)


def alternate(env, config, train_config, seed, out_dir=None, policy=None, critic=None, log=None):
    """Alternate policy training at fixed parameters with CMA-ES over the
    parameters at a fixed policy.

    The incumbent (policy, parameters, objective) only changes when a pass
    improves on it, so the logged objective never decreases.
    """
    if env.actuation.param_lower.size == 0:
        raise ValueError("actuation model has no parameters to optimize")
    rng_init, rng_cma, _, rng_eval = seed_streams(seed, key=1)
    eval_seed = int(rng_eval.integers(2 ** 31))
    if policy is None:
        policy, critic = make_agent(env, train_config, rng_init)
        init_normalizer(env, policy.normalizer, train_config.normalizer_samples, rng_init)

    def objective(psi, pol):
        return evaluate_psi(psi, pol, env, config.rollouts, config.duration, eval_seed)

    model = env.actuation
    psi = pack_params(model).values
    best_j = objective(psi, policy)
    res = AlternationResult(policy, critic, model, best_j, best_j)
    res.passes.append((0, best_j, best_j))
    if log:
        log(f"pass 0 objective {best_j:.3f}")
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)

    tcfg = TrainConfig.from_dict({**train_config.to_dict(), "iterations": config.iterations})
    for p in range(1, config.passes + 1):
        pass_env = env.with_actuation(unpack_params(model, psi))
        pol, cri = res.policy.copy(), res.critic.copy()
        cri.normalizer = pol.normalizer
        curve = out / f"curve_pass{p}.csv" if out else None
        replay = ReplayMemory(tcfg.replay_capacity, env.state_dim, env.action_dim)
        tr = train(pass_env, tcfg, seed + p, curve_path=curve, policy=pol, critic=cri,
                   replay=replay, start_iteration=(p - 1) * config.iterations, log=log)
        pol = tr.policy

        j_inc = objective(psi, pol)
        cand_psi, cand_j = psi, j_inc
        if config.generations:
            state = cma_init(normalize_psi(model, psi), config.sigma0, 0.0, 1.0, config.popsize)
            for g in range(1, config.generations + 1):
                us = cma_ask(state, rng_cma)
                psis = [denormalize_psi(model, u) for u in us]
                if config.workers > 1:
                    with ProcessPoolExecutor(config.workers) as ex:
                        js = list(ex.map(_psi_job, [(x, pol, env, config.rollouts, config.duration,
                                                     eval_seed) for x in psis]))
                else:
                    js = [objective(x, pol) for x in psis]
                js = np.asarray(js)
                cma_tell(state, us, -js)
                k = int(np.nanargmax(np.where(np.isfinite(js), js, -np.inf)))
                if js[k] > cand_j:
                    cand_psi, cand_j = psis[k], float(js[k])
                res.generations.append((p, g, cand_j, float(np.mean(js)), state.sigma))
                if log:
                    log(f"pass {p} gen {g} best {cand_j:.3f} mean {np.mean(js):.3f} "
                        f"sigma {state.sigma:.4f}")
        if cand_j >= res.objective:
            psi = cand_psi
            res.policy, res.critic, res.objective = pol, tr.critic, cand_j
            res.actuation = unpack_params(model, psi)
        res.passes.append((p, cand_j, res.objective))
        if log:
            log(f"pass {p} objective {cand_j:.3f} incumbent {res.objective:.3f}")
        if out:
            _write_logs(out, res, seed)
            (out / f"actuation_pass{p}.json").write_text(
                json.dumps(actuation_to_dict(res.actuation, env.character), indent=2))
    return res


def _write_logs(out, res, seed):
    with open(out / "passes.csv", "w", newline="") as fh:
        fh.write(f"# seed={seed}\n")
        w = csv.writer(fh)
        w.writerow(("pass", "objective", "incumbent"))
        w.writerows(res.passes)
    with open(out / "generations.csv", "w", newline="") as fh:
        fh.write(f"# seed={seed}\n")
        w = csv.writer(fh)
        w.writerow(("pass", "generation", "best_fitness", "mean_fitness", "step_size"))
        w.writerows(res.generations)


