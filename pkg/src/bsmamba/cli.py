"""Command-line interface.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields, replace

import numpy as np

from . import hierarchy, imageio, pipeline
from .errors import (BsmambaError, CheckpointError, ConfigError, DataError,
                     NumericError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); keep our code contract
        raise ConfigError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="bsmamba", description="Low-light image enhancement")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model on a paired dataset")
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--data", required=True, help="dataset root with low/ and high/")
    t.add_argument("--out", required=True, help="checkpoint output path")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field (repeatable)")

    e = sub.add_parser("enhance", help="enhance a PNG file or directory")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--in", dest="inp", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--dump-maps", action="store_true",
                   help="also write score maps and sort-order visualizations")

    v = sub.add_parser("eval", help="PSNR/SSIM over a paired dataset")
    v.add_argument("--ckpt", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--csv", default=None)

    s = sub.add_parser("score", help="write a brightness score map as a PGM")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--scorer", choices=("luma", "histogram"), default="luma")
    s.add_argument("--out", required=True)

    sub.add_parser("selftest", help="run quick oracle and gradient checks")
    return p


def _cmd_train(args) -> int:
    cfg = pipeline.TrainConfig()
    if args.config:
        cfg = pipeline.parse_config_file(args.config, cfg)
    overrides = {}
    ftypes = {f.name: f.type for f in fields(pipeline.TrainConfig)}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, raw = item.partition("=")
        key = key.strip()
        if key not in ftypes:
            raise ConfigError(f"unknown config key {key!r}")
        overrides[key] = pipeline._coerce_field(key, ftypes[key], raw.strip(), "--set", 0)
    if overrides:
        cfg = replace(cfg, **overrides)
    result = pipeline.train(cfg, args.data, args.out)
    for line in result.log_lines:
        print(line)
    print(f"checkpoint={result.checkpoint_path}")
    return 0


def _cmd_enhance(args) -> int:
    written = pipeline.enhance(args.ckpt, args.inp, args.out, dump_maps=args.dump_maps)
    for w in written:
        print(w)
    return 0


def _cmd_eval(args) -> int:
    res = pipeline.evaluate(args.ckpt, args.data, csv_path=args.csv)
    print(f"{'name':<24} {'psnr':>10} {'ssim':>8}")
    for name, p, s in res["rows"]:
        print(f"{name:<24} {p:>10.4f} {s:>8.4f}")
    print(f"psnr={res['psnr']:.6f}")
    print(f"ssim={res['ssim']:.6f}")
    print(f"scans_per_image={res['scans_per_image']}")
    return 0


def _cmd_score(args) -> int:
    image = imageio.read_png(args.inp)
    hmap = (hierarchy.luma_score(image) if args.scorer == "luma"
            else hierarchy.histogram_score(image))
    arr = np.clip(np.rint(hmap.values * 65535), 0, 65535).astype(np.uint16)
    imageio.write_pgm(args.out, arr, maxval=65535)
    print(args.out)
    return 0


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest() else 3


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "train": _cmd_train,
            "enhance": _cmd_enhance,
            "eval": _cmd_eval,
            "score": _cmd_score,
            "selftest": _cmd_selftest,
        }[args.command]
        return handler(args)
    except ConfigError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except BsmambaError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
