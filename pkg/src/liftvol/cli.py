"""``liftvol`` command-line tool.

Machine-readable results go to stdout as ``key=value`` lines.  Exit codes:
0 success, 1 other failure (e.g. training diverged or a roundtrip check
failed), 2 bad arguments, 3 corrupt or mismatched stream/model, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time

import numpy as np

from . import codec, metrics
from .codec import CodecConfig
from .errors import CorruptModelError, EmptyDatasetError, StreamError, TrainingDivergedError
from .gradcheck import grad_check
from .model import Model
from .synth import synth_dataset
from .trainer import TrainConfig, train_loop
from .volume import load_volume, save_volume

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_STREAM = 3
EXIT_IO = 4


class UsageError(Exception):
    """Flag combination rejected after parsing."""


def _shape(text: str) -> tuple[int, int, int]:
    parts = text.replace("x", ",").split(",")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}; use D,H,W") from None
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}; use three positive ints D,H,W")
    return dims


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"{text} must be positive")
    return v


def _emit(**kv):
    for k, v in kv.items():
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = f"{v:.6f}" if np.isfinite(v) else str(v)
        print(f"{k}={v}")


def _read_volume(path, shape):
    if not str(path).endswith(".v3d") and shape is None:
        raise UsageError(f"{path}: raw input needs --shape D,H,W")
    return load_volume(path, shape)


def _model(args) -> Model:
    if getattr(args, "model", None):
        return Model.load(args.model)
    return Model.create(seed=args.seed)


def cmd_encode(args) -> int:
    v = _read_volume(args.input, args.shape)
    model = Model.load(args.model)
    cfg = CodecConfig(mode="lossless" if args.lossless else "lossy", qs=args.qs)
    t0 = time.perf_counter()
    data = codec.encode(v, model, cfg)
    elapsed = time.perf_counter() - t0
    with open(args.out, "wb") as f:
        f.write(data)
    _emit(bytes=len(data), bpp=codec.bits_per_voxel(data, v.shape), time=elapsed)
    return EXIT_OK


def cmd_decode(args) -> int:
    model = Model.load(args.model)
    with open(args.input, "rb") as f:
        data = f.read()
    t0 = time.perf_counter()
    v = codec.decode(data, model)
    elapsed = time.perf_counter() - t0
    save_volume(v, args.out)
    _emit(shape=",".join(map(str, v.shape)), bpp=codec.bits_per_voxel(data, v.shape), time=elapsed)
    if args.reference:
        ref = _read_volume(args.reference, tuple(v.shape) if args.shape is None else args.shape)
        exact = ref.shape == v.shape and bool(np.array_equal(ref, v))
        _emit(exact=exact)
        if not exact and ref.shape == v.shape:
            _emit(psnr=metrics.psnr(ref, v))
    return EXIT_OK


def _quality(a, b) -> dict:
    out = {"psnr": metrics.psnr(a, b)}
    try:
        out["ssim"] = metrics.ssim(a, b)
    except ValueError:  # slices smaller than the SSIM window
        out["ssim"] = float("nan")
    return out


def _read_curve(path) -> list[tuple[float, float]]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [(float(r["bpp"]), float(r["psnr"])) for r in rows]


def cmd_eval(args) -> int:
    if args.bd:
        a, b = (_read_curve(p) for p in args.bd)
        _emit(bd_psnr=metrics.bd_psnr(a, b))
        return EXIT_OK
    if args.sweep:
        if not (args.input and args.model):
            raise UsageError("--sweep needs --in and --model")
        v = _read_volume(args.input, args.shape)
        model = Model.load(args.model)
        rows = []
        for qs in args.sweep:
            data = codec.encode(v, model, CodecConfig(mode="lossy", qs=qs))
            rec = codec.decode(data, model)
            q = _quality(v, rec)
            row = {"qs": qs, "bpp": codec.bits_per_voxel(data, v.shape), **q}
            rows.append(row)
            print(" ".join(f"{k}={val!r}" if isinstance(val, float) else f"{k}={val}" for k, val in row.items()))
        if args.csv:
            with open(args.csv, "w", newline="") as f:
                w = csv.DictWriter(f, fieldnames=["qs", "bpp", "psnr", "ssim"], lineterminator="\n")
                w.writeheader()
                w.writerows({k: repr(float(x)) for k, x in r.items()} for r in rows)
        return EXIT_OK
    if not (args.original and args.recon):
        raise UsageError("eval needs --original and --recon, --sweep, or --bd")
    a = _read_volume(args.original, args.shape)
    b = _read_volume(args.recon, args.shape)
    if a.shape != b.shape:
        raise UsageError(f"shape mismatch: {a.shape} vs {b.shape}")
    _emit(**_quality(a, b))
    return EXIT_OK


def cmd_roundtrip(args) -> int:
    v = _read_volume(args.input, args.shape)
    model = _model(args)
    cfg = CodecConfig(mode="lossless" if args.lossless else "lossy", qs=args.qs)
    t0 = time.perf_counter()
    data = codec.encode(v, model, cfg)
    rec = codec.decode(data, model)
    elapsed = time.perf_counter() - t0
    exact = bool(np.array_equal(rec, v))
    p = metrics.psnr(v, rec)
    _emit(bytes=len(data), bpp=codec.bits_per_voxel(data, v.shape), exact=exact, psnr=p, time=elapsed)
    ok = exact if args.lossless else p >= args.min_psnr
    return EXIT_OK if ok else EXIT_FAIL


def cmd_gradcheck(args) -> int:
    model = Model.load(args.model) if args.model else None
    report = grad_check(model, seed=args.seed)
    for line in report.lines():
        print(line)
    _emit(passed=report.passed)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_train(args) -> int:
    cfg = TrainConfig(
        lam=args.lam,
        lr=args.lr,
        batch_size=args.batch,
        cube=args.cube,
        steps=args.steps,
        seed=args.seed,
        mode="lossless" if args.lossless else "lossy",
        checkpoint_every=args.checkpoint_every,
    )
    model = Model.load(args.init) if args.init else None

    def log(step, terms):
        if args.log_every and (step % args.log_every == 0 or step == 1):
            print(f"step={step} loss={terms.loss!r} rate_bpp={terms.rate!r} mse={terms.mse!r}", file=sys.stderr)

    model, history = train_loop(args.data, cfg, args.out, model, log)
    _emit(steps=len(history), first_loss=history[0].loss, final_loss=history[-1].loss,
          qs=model.qs, model=os.path.join(args.out, "model.iwm"))
    return EXIT_OK


def cmd_synth(args) -> int:
    paths = synth_dataset(args.out, args.count, args.size, args.seed)
    _emit(count=len(paths), dir=args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="liftvol", description="Learned lifting-wavelet volume codec.")
    sub = p.add_subparsers(dest="command", required=True)

    def volume_in(sp, required=True):
        sp.add_argument("--in", dest="input", required=required, help="input volume (.v3d or raw)")
        sp.add_argument("--shape", type=_shape, help="D,H,W for raw inputs")

    sp = sub.add_parser("encode", help="compress a volume to .iw3")
    volume_in(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--lossless", action="store_true")
    sp.add_argument("--qs", type=_positive, help="override the model's quantization step")
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("decode", help="decompress an .iw3 stream")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--out", required=True, help="output volume (.v3d or raw)")
    sp.add_argument("--reference", help="original volume; prints exact=true/false")
    sp.add_argument("--shape", type=_shape, help="D,H,W of a raw reference")
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("eval", help="quality metrics, QS sweeps and BD-PSNR")
    sp.add_argument("--original")
    sp.add_argument("--recon")
    volume_in(sp, required=False)
    sp.add_argument("--model")
    sp.add_argument("--sweep", type=_positive, nargs="+", metavar="QS")
    sp.add_argument("--csv", help="write the sweep as CSV (qs,bpp,psnr,ssim)")
    sp.add_argument("--bd", nargs=2, metavar=("A.csv", "B.csv"), help="BD-PSNR of B relative to A")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("roundtrip", help="encode, decode and compare in one step")
    volume_in(sp)
    sp.add_argument("--model", help="model file (default: fresh model from --seed)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--lossless", action="store_true")
    sp.add_argument("--qs", type=_positive)
    sp.add_argument("--min-psnr", type=float, default=30.0)
    sp.set_defaults(func=cmd_roundtrip)

    sp = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    sp.add_argument("--model")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("train", help="rate-distortion training")
    sp.add_argument("--data", required=True, help="directory of .v3d cubes")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--lossless", action="store_true")
    sp.add_argument("--lam", type=float, default=1.0)
    sp.add_argument("--lr", type=float, default=1e-4)
    sp.add_argument("--batch", type=int, default=4)
    sp.add_argument("--cube", type=int, default=16)
    sp.add_argument("--steps", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--checkpoint-every", type=int, default=0)
    sp.add_argument("--init", help="start from this model file")
    sp.add_argument("--log-every", type=int, default=0, help="progress to stderr every N steps")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("synth", help="write a synthetic cube dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int, default=8)
    sp.add_argument("--size", type=_shape, default=(16, 16, 16))
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    try:
        return args.func(args)
    except (StreamError, CorruptModelError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_STREAM
    except (UsageError, ValueError, OverflowError) as e:
        print(f"error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (OSError, EmptyDatasetError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except TrainingDivergedError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
