#!/usr/bin/env python3
"""Run the synthetic benchmark and write per-repetition and summary files.

Example (desk budget, one repetition):

    python scripts/run_synthetic.py --n 10000 --reps 1 --epochs 1000 1000 200 --out runs/desk
"""
import argparse
import json
import logging

from gaminet import model as gm
from gaminet.synth import SynthConfig, run_benchmark, summarize, write_reports
from gaminet.trainer import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=10000)
    ap.add_argument("--dist", default="uniform")
    ap.add_argument("--lam", type=float, default=1.0)
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--first-rep", type=int, default=0, help="skip repetitions before this index")
    ap.add_argument("--epochs", type=int, nargs=3, default=(5000, 5000, 500))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", required=True)
    ap.add_argument("--save-models", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")

    synth = SynthConfig(n=args.n, distribution=args.dist, seed=args.seed)
    cfg = TrainConfig(epochs_stage1=args.epochs[0], epochs_stage2=args.epochs[1], epochs_stage3=args.epochs[2],
                      clarity_lambda=args.lam)
    reports = []

    def keep(rep, result):
        reports.append(rep)
        write_reports(reports, args.out, synth, args.lam, cfg)
        if args.save_models:
            gm.save(result.model, f"{args.out}/model_rep{rep.repetition}.json")
            with open(f"{args.out}/report_rep{rep.repetition}.json", "w") as fh:
                json.dump(result.report(), fh, indent=1)
            result.trace.write_csv(f"{args.out}/trace_rep{rep.repetition}.csv")

    run_benchmark(synth, cfg, args.reps, on_report=keep, first=args.first_rep)
    print(json.dumps(summarize(reports), indent=1))


if __name__ == "__main__":
    main()
