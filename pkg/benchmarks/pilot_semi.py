"""Semi-supervised pilot: synthetic-only baseline vs. line-guided fine-tuning.

Usage: python benchmarks/pilot_semi.py [--seeds 0 1 ...] [--out DIR] [--control]

For each seed: pretrain on the source style, score on the shifted test set,
fine-tune at 2:1 synthetic:real with the stripped shifted pool, score again.
--control adds a synthetic-only fine-tune of the same length, which separates
the effect of real line supervision from that of extra steps.
"""
import argparse
import logging
import statistics
import tempfile
from pathlib import Path

import torch

from kwspot import desk


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--out", default=None, help="run directory (default: a temp dir)")
    ap.add_argument("--control", action="store_true")
    ap.add_argument("--finetune-lr", type=float, default=desk.FINETUNE["lr"])
    args = ap.parse_args(argv)
    torch.set_num_threads(1)
    logging.basicConfig(level=logging.WARNING)
    out = Path(args.out or tempfile.mkdtemp(prefix="kwspot-semi-"))
    data = desk.SemiData()
    rows = []
    for seed in args.seeds:
        pre = desk.pretrain(data, out / f"pre{seed}", seed)
        base = desk.evaluate_checkpoint(pre, data.test)["mAP"]
        ft = desk.finetune(data, out / f"ft{seed}", pre, seed, lr=args.finetune_lr)
        guided = desk.evaluate_checkpoint(ft, data.test)["mAP"]
        line = f"seed {seed}: baseline {base:.4f} guided {guided:.4f}"
        if args.control:
            ctl = desk.finetune(data, out / f"ctl{seed}", pre, seed, lr=args.finetune_lr, mix=(1, 0))
            line += f" synthetic-only finetune {desk.evaluate_checkpoint(ctl, data.test)['mAP']:.4f}"
        print(line, flush=True)
        rows.append((base, guided))
    print(f"median baseline {statistics.median(r[0] for r in rows):.4f} "
          f"median guided {statistics.median(r[1] for r in rows):.4f}")


if __name__ == "__main__":
    main()
