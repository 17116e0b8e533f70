"""Desk-scale alternation of policy training and CMA-ES over MTU parameters."""
import argparse

from actlab.actuator_opt import AlternationConfig, alternate
from actlab.env import bundled_env
from actlab.learner import desk_config


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--actuation", default="mtu", choices=("vel", "pd", "mtu"))
    p.add_argument("--passes", type=int, default=2)
    p.add_argument("--generations", type=int, default=20)
    p.add_argument("--iters-per-pass", type=int, default=10_000)
    p.add_argument("--rollouts", type=int, default=8)
    p.add_argument("--duration", type=float, default=5.0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--actor-lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/desk_opt")
    args = p.parse_args()
    cfg = AlternationConfig(passes=args.passes, generations=args.generations,
                            rollouts=args.rollouts, duration=args.duration,
                            iterations=args.iters_per_pass, workers=args.workers)
    res = alternate(bundled_env(args.actuation), cfg, desk_config(args.iters_per_pass, actor_lr=args.actor_lr), args.seed,
                    out_dir=args.out, log=print)
    print(f"objective {res.initial_objective:.2f} -> {res.objective:.2f}")


if __name__ == "__main__":
    main()
