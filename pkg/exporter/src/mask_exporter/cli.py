"""export-masks command line tool."""

from __future__ import annotations

import argparse
import sys

from .exporter import ExportDataError, SetupError, export_masks


def main(argv=None) -> int:
    p = argparse.ArgumentParser(
        prog="export-masks",
        description="Write instance-mask sidecar files for a directory of images")
    p.add_argument("--in", dest="inp", required=True, help="input image directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--min-score", type=float, default=0.5,
                   help="drop instances below this confidence (default 0.5)")
    p.add_argument("--weights", default=None,
                   help="local Mask R-CNN state-dict path (else torchvision zoo)")
    p.add_argument("--soft", action="store_true",
                   help="also write per-instance 8-bit soft-mask PGMs")
    try:
        args = p.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code else 0
    if not 0.0 <= args.min_score <= 1.0:
        print("usage error: --min-score must be in [0,1]", file=sys.stderr)
        return 1
    try:
        records = export_masks(args.inp, args.out, confidence_floor=args.min_score,
                               weights_path=args.weights, soft=args.soft)
    except SetupError as e:
        print(f"setup error: {e}", file=sys.stderr)
        return 1
    except ExportDataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    for r in records:
        print(f"{r.name}: {r.count} instance(s)")
        for iid, conf, cov in r.instances:
            print(f"  id={iid} confidence={conf:.4f} coverage={cov:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
