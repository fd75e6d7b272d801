#!/usr/bin/env python3
"""Paired clarity-weight ablation on the synthetic benchmark.

Each repetition fits stage 1 once (it does not depend on the clarity weight)
and then branches into stages 2-3 for every weight, so the weights are
compared on identical data, splits, seeds and main effects.

    python scripts/run_ablation.py --reps 10 --epochs 1000 1000 200 --out runs/ablation
"""
import argparse
import csv
import json
import logging
import os

from gaminet.synth import SynthConfig, ablation_summary, clarity_ablation
from gaminet.trainer import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=10000)
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--lams", type=float, nargs="+", default=(1.0, 1e-4))
    ap.add_argument("--epochs", type=int, nargs=3, default=(5000, 5000, 500))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    os.makedirs(args.out, exist_ok=True)

    synth = SynthConfig(n=args.n, seed=args.seed)
    cfg = TrainConfig(epochs_stage1=args.epochs[0], epochs_stage2=args.epochs[1], epochs_stage3=args.epochs[2])
    reports = []

    def keep(rep):
        reports.append(rep)
        rows = [r.row() for r in reports]
        with open(os.path.join(args.out, "ablation.csv"), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)

    clarity_ablation(synth, cfg, args.lams, args.reps, on_report=keep)
    doc = {"synth": vars(synth), "train_config": cfg.to_dict(), "lambdas": list(args.lams),
           "summary": ablation_summary(reports)}
    with open(os.path.join(args.out, "ablation_summary.json"), "w") as fh:
        json.dump(doc, fh, indent=1)
    print(json.dumps(doc["summary"], indent=1))


if __name__ == "__main__":
    main()
