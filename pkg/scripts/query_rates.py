"""Train one PD policy per policy query rate and tabulate final NCR and AUC."""
import argparse

from actlab.env import bundled_env
from actlab.evaluation import NcrConfig, query_rate_suite
from actlab.learner import desk_config


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--rates", default="15,30,60,120")
    p.add_argument("--iters", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/query_rates")
    args = p.parse_args()
    rates = tuple(int(r) for r in args.rates.split(","))
    rows = query_rate_suite(lambda r: bundled_env("pd", control_rate=r), desk_config(args.iters),
                            rates, args.seed, out_dir=args.out, final=NcrConfig(), log=print)
    print("rate_hz substeps ncr stderr auc")
    for rate, nsub, ncr, se, auc in rows:
        print(f"{rate:7d} {nsub:8d} {ncr:.3f} {se:.3f} {auc:.3f}")


if __name__ == "__main__":
    main()
