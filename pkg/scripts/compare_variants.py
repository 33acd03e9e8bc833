#!/usr/bin/env python3
"""Run all three model variants on one dataset and print a comparison table.

The table reports per-seed and mean one-vs-one AUC plus the rank of each
variant; which variant wins is an empirical question, so nothing here
asserts an ordering.

Usage: python scripts/compare_variants.py --data data/rule.descriptor \
           --checkpoint runs/pretrain/checkpoint.ckpt --epochs 30
"""

import argparse

from tokentab.checkpoint import load_checkpoint, rebuild_model
from tokentab.cli import load_descriptor
from tokentab.training import FinetuneConfig, run_protocol

VARIANTS = ("full", "no_regularization", "no_identifiers")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", required=True, help="dataset descriptor file")
    ap.add_argument("--checkpoint", required=True, help="pretrained checkpoint")
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--lambda_orth", type=float, default=1.0)
    ap.add_argument("--steps_per_epoch", type=int, default=4)
    ap.add_argument("--seeds", default="0,1,2,3,4")
    args = ap.parse_args()

    seeds = tuple(int(s) for s in args.seeds.split(","))
    backbone = rebuild_model(load_checkpoint(args.checkpoint))
    raw = load_descriptor(args.data)

    reports = {}
    for variant in VARIANTS:
        cfg = FinetuneConfig(epochs=args.epochs, lr=args.lr,
                             lambda_orth=args.lambda_orth, variant=variant,
                             steps_per_epoch=args.steps_per_epoch)
        reports[variant], _ = run_protocol(raw, backbone, cfg, seeds=seeds)

    means = {v: reports[v].mean_auc for v in VARIANTS}
    order = sorted(VARIANTS, key=lambda v: -means[v])
    rank = {v: i + 1 for i, v in enumerate(order)}

    seed_cols = "  ".join(f"seed{s:>2}" for s in seeds)
    print(f"{'variant':<20} {seed_cols}  {'mean_auc':>9} {'mean_acc':>9} {'rank':>5}")
    for v in VARIANTS:
        per_seed = "  ".join(f"{r.auc:6.4f}" for r in reports[v].results)
        print(f"{v:<20} {per_seed}  {means[v]:9.4f} "
              f"{reports[v].mean_accuracy:9.4f} {rank[v]:>5}")


if __name__ == "__main__":
    main()
