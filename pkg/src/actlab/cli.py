"""Command-line entry points.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.  The
default output root is ``$ACTLAB_RUNS`` (falls back to ``./runs``).
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .actuation import KINDS, actuation_to_dict, load_actuation, pack_params
from .env import ConfigError, ImitationEnv, substeps_for_rate
from .evaluation import (NcrConfig, PerturbConfig, TerrainConfig, evaluate_ncr, perturb_eval,
                         terrain_eval, write_report)
from .learner import TrainConfig, config_hash, resume, train
from .neural import load_checkpoint, save_checkpoint
from .rigid2d import CharacterFormatError, load_character, resolve_data_path
from .task import load_motion

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def runs_root():
    return Path(os.environ.get("ACTLAB_RUNS", "runs"))


@dataclass
class ExperimentConfig:
    character: str = "biped7.json"
    motion: str = "biped_walk.json"
    actuation: str = "pd"  # a kind name (bundled biped file) or a path
    state_variant: str = "target"
    control_rate: int = 60
    seed: int = 0
    name: str = ""
    out_dir: str = ""
    train: TrainConfig = field(default_factory=TrainConfig)
    ncr: NcrConfig = field(default_factory=NcrConfig)

    def actuation_path(self):
        if self.actuation.lower() in KINDS:
            return f"{Path(self.character).stem}_{self.actuation.lower()}.json"
        return self.actuation

    def run_dir(self):
        if self.out_dir:
            return Path(self.out_dir)
        name = self.name or f"{Path(self.motion).stem}_{Path(self.actuation_path()).stem}_s{self.seed}"
        return runs_root() / name

    def to_dict(self):
        d = asdict(self)
        d["train"] = self.train.to_dict()
        d["ncr"] = asdict(self.ncr)
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        d = dict(d)
        try:
            d["train"] = TrainConfig.from_dict(d.get("train", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"train: {exc}") from None
        try:
            d["ncr"] = NcrConfig(**d.get("ncr", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"ncr: {exc}") from None
        return cls(**d)

    def hash(self):
        d = self.to_dict()
        for k in ("name", "out_dir"):
            d.pop(k)
        return config_hash(d)

    def build_env(self):
        """Load and cross-validate the referenced files."""
        for key in ("character", "motion"):
            try:
                resolve_data_path(getattr(self, key))
            except FileNotFoundError:
                raise ConfigError(f"{key}: file not found: {getattr(self, key)}") from None
        try:
            resolve_data_path(self.actuation_path())
        except FileNotFoundError:
            raise ConfigError(f"actuation: file not found: {self.actuation_path()}") from None
        substeps_for_rate(self.control_rate)
        character = load_character(self.character)
        motion = load_motion(self.motion)
        act = load_actuation(self.actuation_path(), character)
        return ImitationEnv(character, motion, act, self.state_variant, self.control_rate)


def load_experiment(path):
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return ExperimentConfig.from_dict(doc)


def _experiment_from_args(args):
    cfg = load_experiment(args.config) if getattr(args, "config", None) else ExperimentConfig()
    for key in ("character", "motion", "actuation", "state_variant", "control_rate", "seed",
                "name", "out_dir"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    overrides = {}
    for key, attr in (("iterations", "iters"), ("eval_every", "eval_every"),
                      ("sigma_frac", "sigma_frac"), ("eps_iterations", "eps_iterations"),
                      ("replay_capacity", "replay_capacity"),
                      ("checkpoint_every", "checkpoint_every")):
        val = getattr(args, attr, None)
        if val is not None:
            overrides[key] = val
    if overrides:
        try:
            cfg.train = TrainConfig.from_dict({**cfg.train.to_dict(), **overrides})
        except ValueError as exc:
            raise ConfigError(f"train: {exc}") from None
    return cfg


def _meta(cfg):
    return {"experiment": cfg.to_dict(), "config_hash": cfg.hash()}


def _env_from_checkpoint(ckpt, args):
    exp = ckpt.meta.get("experiment")
    if exp is None:
        raise ConfigError("checkpoint carries no experiment config")
    cfg = ExperimentConfig.from_dict(exp)
    if getattr(args, "control_rate", None):
        cfg.control_rate = args.control_rate
    env = cfg.build_env()
    if "actuation" in ckpt.meta:
        from .actuation import actuation_from_dict
        env = env.with_actuation(actuation_from_dict(ckpt.meta["actuation"], env.character))
    if ckpt.policy.net.n_in != env.state_dim or ckpt.policy.action_dim != env.action_dim:
        raise ConfigError(f"checkpoint dimensions ({ckpt.policy.net.n_in}, "
                          f"{ckpt.policy.action_dim}) do not match the environment "
                          f"({env.state_dim}, {env.action_dim})")
    return cfg, env


# ---------------------------------------------------------------------------
# Commands


def cmd_train(args):
    cfg = _experiment_from_args(args)
    env = cfg.build_env()
    out = cfg.run_dir()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps({**cfg.to_dict(), "config_hash": cfg.hash()},
                                                indent=2))
    kw = {}
    if args.resume:
        ckpt = resume(args.resume)
        kw = dict(policy=ckpt.policy, critic=ckpt.critic, start_iteration=ckpt.iteration)
        remaining = cfg.train.iterations - ckpt.iteration
        cfg.train = TrainConfig.from_dict({**cfg.train.to_dict(), "iterations": max(remaining, 0)})
    res = train(env, cfg.train, cfg.seed, curve_path=out / "curve.csv",
                checkpoint_path=out / "checkpoint.npz", meta=_meta(cfg),
                log=None if args.quiet else print, **kw)
    print(f"trained {res.iterations} iterations ({res.tuples} tuples) in {res.seconds:.1f}s "
          f"-> {out}")
    return EXIT_OK


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    cfg, env = _env_from_checkpoint(ckpt, args)
    seed = cfg.seed if args.seed is None else args.seed
    rows = []
    label = str(args.checkpoint)
    if args.protocol == "ncr":
        nc = NcrConfig(args.episodes or 32, args.duration or 10.0)
        r = evaluate_ncr(ckpt.policy, env, nc, seed, workers=args.workers)
        rows.append(_row(label, "ncr", "", r, seed))
    elif args.protocol == "perturb":
        mags = [float(m) for m in args.magnitudes.split(",")]
        pc = PerturbConfig(episodes=args.episodes or 128, duration=args.duration or 20.0)
        for m, r in zip(mags, perturb_eval(ckpt.policy, env, pc, mags, seed)):
            rows.append(_row(label, "perturb", f"force={m}", r, seed))
    else:
        tc = TerrainConfig(kind=args.kind, h_max=args.hmax, s_max=args.smax)
        nc = NcrConfig(args.episodes or 32, args.duration or 10.0)
        r = terrain_eval(ckpt.policy, env, tc, nc, seed)
        param = f"{args.kind}:hmax={args.hmax}" if args.kind == "bumps" else f"{args.kind}:smax={args.smax}"
        rows.append(_row(label, "terrain", param, r, seed))
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / f"eval_{args.protocol}.csv"
    write_report(out, rows)
    for r in rows:
        print(f"{r['protocol']} {r['parameter']} ncr={r['mean']:.4f} +- {r['stderr']:.4f} "
              f"({r['episodes']} episodes)")
    return EXIT_OK


def _row(label, protocol, param, res, seed):
    return {"policy": label, "protocol": protocol, "parameter": param, "mean": res.mean,
            "stderr": res.stderr, "episodes": res.episodes, "seed": seed}


def cmd_optimize_actuators(args):
    from .actuator_opt import AlternationConfig, alternate

    cfg = _experiment_from_args(args)
    env = cfg.build_env()
    if pack_params(env.actuation).values.size == 0:
        raise ConfigError(f"actuation kind {env.actuation.kind!r} has no parameters: "
                          "nothing to optimize")
    try:
        acfg = AlternationConfig(passes=args.passes, generations=args.generations,
                                 popsize=args.popsize, rollouts=args.rollouts,
                                 duration=args.duration, iterations=args.iters_per_pass,
                                 workers=args.workers)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = cfg.run_dir()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(
        {**cfg.to_dict(), "alternation": asdict(acfg), "config_hash": cfg.hash()}, indent=2))
    res = alternate(env, acfg, cfg.train, cfg.seed, out_dir=out,
                    log=None if args.quiet else print)
    act_doc = actuation_to_dict(res.actuation, env.character)
    (out / "actuation_best.json").write_text(json.dumps(act_doc, indent=2))
    save_checkpoint(out / "checkpoint.npz", res.policy, res.critic,
                    acfg.passes * acfg.iterations, {**_meta(cfg), "actuation": act_doc})
    print(f"objective {res.initial_objective:.3f} -> {res.objective:.3f}; outputs in {out}")
    return EXIT_OK


def cmd_rollout(args):
    ckpt = load_checkpoint(args.checkpoint)
    cfg, env = _env_from_checkpoint(ckpt, args)
    seed = cfg.seed if args.seed is None else args.seed
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "rollout"
    out.mkdir(parents=True, exist_ok=True)
    steps = int(round(args.duration * env.control_rate))
    obs = env.reset(np.random.default_rng(seed), duration=np.inf)
    joints = [j.name for j in env.character.joints]
    units = [u.name for u in env.actuation.units]
    act_cols = units if env.actuation.kind == "mtu" else joints
    rng = np.random.default_rng(seed + 1)
    with open(out / "actions.csv", "w", newline="") as fa, \
            open(out / "torques.csv", "w", newline="") as ft:
        fa.write(f"# seed={seed} config_hash={cfg.hash()}\n")
        ft.write(f"# seed={seed} config_hash={cfg.hash()}\n")
        wa, wt = csv.writer(fa), csv.writer(ft)
        wa.writerow(["time", "reward", "status"] + [f"a_{c}" for c in act_cols])
        wt.writerow(["time"] + [f"tau_{j}" for j in joints] + [f"f_{u}" for u in units])
        k = 0
        for k in range(steps):
            a = ckpt.policy.sample_action(obs, int(args.stochastic), rng)
            res = env.step(a)
            t0 = k * env.control_dt
            a_applied = np.clip(a, *env.action_bounds)
            wa.writerow([repr(t0), repr(res.reward), res.status] + [repr(float(v)) for v in a_applied])
            for i in range(env.nsub):
                wt.writerow([repr(t0 + i * env.dt)] + [repr(float(v)) for v in res.torques[i]]
                            + [repr(float(v)) for v in res.mtu_forces[i]])
            # keep simulating past a fall so the export always spans the duration
            obs = res.obs
    print(f"rollout of {k + 1} control steps -> {out}")
    return EXIT_OK


def cmd_validate_config(args):
    cfg = _experiment_from_args(args)
    env = cfg.build_env()
    print(json.dumps({**cfg.to_dict(), "config_hash": cfg.hash(),
                      "dims": {"state": env.state_dim, "action": env.action_dim,
                               "params": int(pack_params(env.actuation).values.size),
                               "substeps": env.nsub}}, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def _add_experiment_args(p):
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--character")
    p.add_argument("--motion")
    p.add_argument("--actuation", help=f"one of {', '.join(KINDS)} or an actuation file")
    p.add_argument("--state-variant", dest="state_variant", choices=("target", "phase"))
    p.add_argument("--rate", dest="control_rate", type=int, help="policy query rate (Hz)")
    p.add_argument("--seed", type=int)
    p.add_argument("--name", help="run name under the output root")
    p.add_argument("--out", dest="out_dir", help="explicit output directory")
    p.add_argument("--iters", type=int, help="training iterations")
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--sigma-frac", dest="sigma_frac", type=float)
    p.add_argument("--eps-iterations", dest="eps_iterations", type=int)
    p.add_argument("--replay-capacity", dest="replay_capacity", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--quiet", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="actlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy")
    _add_experiment_args(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--protocol", choices=("ncr", "perturb", "terrain"), default="ncr")
    p.add_argument("--episodes", type=int)
    p.add_argument("--duration", type=float)
    p.add_argument("--magnitudes", default="0")
    p.add_argument("--kind", choices=("bumps", "slopes"), default="bumps")
    p.add_argument("--hmax", type=float, default=0.1)
    p.add_argument("--smax", type=float, default=0.1)
    p.add_argument("--rate", dest="control_rate", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="report CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("optimize-actuators", help="alternate policy training and CMA-ES")
    _add_experiment_args(p)
    p.add_argument("--passes", type=int, default=6)
    p.add_argument("--generations", type=int, default=250)
    p.add_argument("--popsize", type=int, default=16)
    p.add_argument("--rollouts", type=int, default=16)
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--iters-per-pass", dest="iters_per_pass", type=int, default=250_000)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_optimize_actuators)

    p = sub.add_parser("rollout", help="export actions and torques of one episode")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--duration", type=float, default=1.0)
    p.add_argument("--rate", dest="control_rate", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--stochastic", action="store_true", help="add exploration noise")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("validate-config", help="check a config and print resolved values")
    _add_experiment_args(p)
    p.set_defaults(func=cmd_validate_config)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CharacterFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
