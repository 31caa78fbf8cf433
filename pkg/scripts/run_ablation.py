#!/usr/bin/env python3
"""Train and evaluate the component/fusion ablation grid.

Resumable: finished cells are skipped. Results land under <out>/reports/.
"""

import argparse

from divtraj.experiments import ExperimentConfig, ablation_table_text, run_ablation_grid


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", required=True, help="experiment workspace directory")
    p.add_argument("--seeds", default="0,1,2", help="comma list of training seeds")
    p.add_argument("--master-seed", type=int, default=0)
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
    )
    table = run_ablation_grid(cfg)
    print(ablation_table_text(table))


if __name__ == "__main__":
    main()
