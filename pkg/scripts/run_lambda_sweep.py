#!/usr/bin/env python3
"""Train one diversity sampler per loss weight and plot the FSD/DAC tradeoff."""

import argparse

from divtraj.experiments import ExperimentConfig, run_lambda_sweep


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", required=True, help="experiment workspace directory")
    p.add_argument("--seeds", default="0,1,2", help="comma list of training seeds")
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--lambdas", default="0,0.25,0.5,0.75,1")
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-val", type=int, default=400)
    p.add_argument("--cvae-epochs", type=int, default=40)
    p.add_argument("--dsf-epochs", type=int, default=10)
    p.add_argument("--workers", type=int, default=2)
    return p.parse_args()


def main():
    args = parse_args()
    cfg = ExperimentConfig(
        out_dir=args.out,
        master_seed=args.master_seed,
        seeds=tuple(int(s) for s in args.seeds.split(",")),
        n_train=args.n_train,
        n_val=args.n_val,
        cvae_epochs=args.cvae_epochs,
        dsf_epochs=args.dsf_epochs,
        workers=args.workers,
        lambdas=tuple(float(x) for x in args.lambdas.split(",")),
    )
    table = run_lambda_sweep(cfg)
    print("lambda    FSD      DAC      DAO      rF")
    for lam in cfg.lambdas:
        m = table[f"{lam:g}"]
        print(f"{lam:<8g} {m['fsd']:8.3f} {m['dac']:8.3f} {m['dao']:8.2f} {m['rf']:8.3f}")
    print(f"figure: {cfg.root / 'reports' / 'lambda_sweep.svg'}")


if __name__ == "__main__":
    main()
