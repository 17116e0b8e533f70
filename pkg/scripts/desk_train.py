"""Desk-scale policy training with the scaled budget; writes a learning curve."""
import argparse
from pathlib import Path

from actlab.env import bundled_env
from actlab.learner import desk_config, train


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--actuation", default="pd", choices=("tor", "vel", "pd", "mtu"))
    p.add_argument("--iters", type=int, default=50_000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default="runs/desk")
    args = p.parse_args()
    out = Path(args.out)
    res = train(bundled_env(args.actuation), desk_config(args.iters), args.seed,
                curve_path=out / "curve.csv", checkpoint_path=out / "checkpoint.npz", log=print)
    first, last = res.curve[0][4], res.curve[-1][4]
    print(f"NCR {first:.3f} -> {last:.3f} in {res.seconds:.0f}s")


if __name__ == "__main__":
    main()
