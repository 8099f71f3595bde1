#!/usr/bin/env python3
"""Write a small synthetic paired dataset (low/, high/, mask sidecars)."""

import argparse

from bsmamba.synthetic import write_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("root", help="output dataset root")
    p.add_argument("--size", type=int, default=64, help="image side (power of two)")
    p.add_argument("--count", type=int, default=2, help="number of pairs")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--no-masks", action="store_true", help="skip mask sidecars")
    args = p.parse_args()
    write_dataset(args.root, size=args.size, count=args.count, seed=args.seed,
                  with_masks=not args.no_masks)
    print(f"wrote {args.count} pairs of {args.size}x{args.size} under {args.root}")


if __name__ == "__main__":
    main()
