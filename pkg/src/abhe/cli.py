"""Command-line entry point.

Subcommands: synth (build a dataset), train, eval, infer, gradcheck.
Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical failure.
``ABHE_THREADS`` caps the BLAS thread pool (set before numpy loads).
"""

from __future__ import annotations

import argparse
import os
import sys


def _apply_thread_cap() -> None:
    cap = os.environ.get("ABHE_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abhe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a warped-pair dataset")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--corpus", help="directory of PNG/PPM images")
    src.add_argument("--procedural", type=int, metavar="N",
                     help="generate N procedural corpus images instead")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--patch", type=int, default=64)
    p.add_argument("--tiers", default="easy=100,moderate=100,hard=100",
                   help="per-tier pair counts, e.g. easy=500")
    p.add_argument("--size", type=int, default=192, help="procedural image side")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value (repeatable)")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="report.json")

    p = sub.add_parser("infer", help="estimate H for one image pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("images", nargs=2, metavar=("A", "B"))
    p.add_argument("--out-dir", default="infer_out")

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.add_argument("--dtype", choices=("f32", "f64"), default="f32")
    p.add_argument("--seed", type=int, default=20240501)
    return parser


def _cmd_synth(args) -> int:
    from . import data

    tier_counts = {}
    for part in args.tiers.split(","):
        if not part.strip():
            continue
        name, _, num = part.partition("=")
        if name.strip() not in data.TIERS or not num.strip().isdigit():
            raise data.DataError(f"bad --tiers entry {part!r}, expected tier=count")
        tier_counts[name.strip()] = int(num)
    if args.corpus:
        images = data.load_corpus_dir(args.corpus)
    else:
        images = data.procedural_corpus(args.procedural, args.size, args.seed)
    samples = data.make_dataset(images, args.patch, tier_counts, args.seed)
    data.save_dataset(samples, args.out)
    print(f"wrote {len(samples)} pairs to {args.out}")
    return 0


def _cmd_train(args) -> int:
    from .config import load_config
    from .train import train

    cfg = load_config(args.config, args.set)
    path = train(cfg)
    print(f"final checkpoint: {path}")
    return 0


def _cmd_eval(args) -> int:
    from .evaluate import evaluate

    report = evaluate(args.ckpt, args.data, args.out)
    avg = report["average"]
    print(f"average over {avg['count']} pairs: "
          f"PSNR {avg['psnr_db']:.2f} dB  SSIM {avg['ssim']:.4f}  "
          f"corner err {avg['corner_err_px']:.3f} px")
    print(f"report written to {args.out}")
    return 0


def _cmd_infer(args) -> int:
    import numpy as np
    from PIL import Image

    from .evaluate import infer

    imgs = []
    for path in args.images:
        arr = np.asarray(Image.open(path).convert("F"), dtype=np.float32)
        if arr.max() > 1.5:
            arr = arr / 255.0
        imgs.append(arr)
    h, offsets = infer(args.ckpt, imgs[0], imgs[1], out_dir=args.out_dir)
    np.set_printoptions(precision=6, suppress=True)
    print("H =")
    print(h)
    print("corner offsets (dx0,dy0,..,dx3,dy3) =")
    print(offsets)
    print(f"overlays written to {args.out_dir}/")
    return 0


def _cmd_gradcheck(args) -> int:
    import numpy as np

    from .gradcheck import format_report, run_suite

    dtype = np.float32 if args.dtype == "f32" else np.float64
    rows, elapsed = run_suite(dtype=dtype, seed=args.seed)
    print(format_report(rows, elapsed))
    return 0 if all(r.passed for r in rows) else 4


def main(argv=None) -> int:
    _apply_thread_cap()
    args = build_parser().parse_args(argv)
    handlers = {
        "synth": _cmd_synth,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "infer": _cmd_infer,
        "gradcheck": _cmd_gradcheck,
    }
    from .config import ConfigError

    try:
        return handlers[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - mapped to documented exit codes
        from .checkpoint import ContainerError
        from .data import DataError

        if isinstance(e, (DataError, ContainerError, FileNotFoundError)):
            print(f"data error: {e}", file=sys.stderr)
            return 3
        if isinstance(e, (ArithmeticError, ValueError)):
            print(f"numerical failure: {e}", file=sys.stderr)
            return 4
        raise


if __name__ == "__main__":
    sys.exit(main())
