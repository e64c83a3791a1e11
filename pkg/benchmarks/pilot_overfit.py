"""Overfit pilot: train on 20 synthetic images and score on the same images.

Usage: python benchmarks/pilot_overfit.py [--out DIR] [--seed N]

Prints training-set mAP, mean line-mask loss and wall time for the desk
recipe in kwspot.desk.OVERFIT.
"""
import argparse
import logging
import tempfile

import torch

from kwspot import desk


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=None, help="run directory (default: a temp dir)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    torch.set_num_threads(1)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = args.out or tempfile.mkdtemp(prefix="kwspot-overfit-")
    res = desk.overfit(out, seed=args.seed)
    aps = [c["ap"] for c in res["report"]["classes"]]
    print(f"mAP {res['mAP']:.4f} per-class {aps}")
    print(f"training-set line-mask loss {res['line_mask']:.4f}")
    print(f"wall time {res['seconds']:.0f}s  checkpoint {res['checkpoint']}")


if __name__ == "__main__":
    main()
