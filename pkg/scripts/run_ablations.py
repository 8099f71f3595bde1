#!/usr/bin/env python3
"""Sweep the composition modes and scorers on the overfit task and print a
comparison table (PSNR / SSIM / scan count per block)."""

import argparse
import os
import tempfile

from bsmamba.pipeline import TrainConfig, evaluate, train
from bsmamba.synthetic import write_dataset

MODES = ("sequential_bs", "sequential_sb", "parallel_sum", "parallel_concat",
         "vanilla_ss2d")


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--root", default=None)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--crop", type=int, default=32)
    p.add_argument("--scorers", nargs="+", default=["luma", "histogram"])
    args = p.parse_args()

    root = args.root or write_dataset(os.path.join(tempfile.mkdtemp(), "data"),
                                      size=args.crop, count=2, seed=7)
    print(f"{'composition':<18} {'scorer':<10} {'psnr':>8} {'ssim':>8} {'scans/blk':>9}")
    for mode in MODES:
        for scorer in args.scorers:
            cfg = TrainConfig(iterations=args.iterations, crop_size=args.crop,
                              composition=mode, scorer=scorer)
            ckpt = os.path.join(root, f"{mode}.{scorer}.ckpt")
            train(cfg, root, ckpt)
            res = evaluate(ckpt, root)
            scans = 4 if mode == "vanilla_ss2d" else 2
            print(f"{mode:<18} {scorer:<10} {res['psnr']:>8.3f} "
                  f"{res['ssim']:>8.4f} {scans:>9}")


if __name__ == "__main__":
    main()
