"""``rignet`` command line.

Exit codes: 0 success, 1 check failure, 2 usage/config error, 3 I/O error.
Results go to stdout as tab-separated text; diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
import time
from pathlib import Path

from .errors import ConfigError, FormatError, TrainingError

log = logging.getLogger("rignet")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


def thread_limit():
    """Honor RIG_THREADS (0 = serial, the determinism reference mode)."""
    value = os.environ.get("RIG_THREADS")
    if value is None:
        return contextlib.nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"RIG_THREADS: expected an integer, got {value!r}") from None
    if n < 0:
        raise ConfigError("RIG_THREADS: must be >= 0")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, n))


def _load(args):
    from .config import load_config

    return load_config(args.config)


def _split_arrays(cfg, split: str):
    from .synthdata import generate_split, load_split

    if cfg.manifest is not None:
        return load_split(cfg.manifest, split)
    return generate_split(cfg.data, split)


def cmd_gen_data(args) -> int:
    from .synthdata import write_dataset

    cfg = _load(args)
    if cfg.data is None:
        raise ConfigError("data: gen-data needs generator settings, not a manifest")
    entries = write_dataset(cfg.data, Path(args.out))
    counts = {s: sum(1 for e in entries if e.split == s) for s in ("train", "val")}
    print(f"train\t{counts['train']}\nval\t{counts['val']}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load(args)
    out = Path(args.out) if args.out else cfg.output_dir
    X, y = _split_arrays(cfg, "train")
    est = cfg.estimator()
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    est.fit(X, y, callback=lambda e: log.info("epoch %d loss %.5f (%.0fs)", e.epoch, e.loss, time.time() - t0))
    est.save_weights(out / "checkpoint.rigc")
    text = "".join(e.line() + "\n" for e in est.train_log_)
    (out / "train.log").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def _model(cfg, checkpoint):
    est = cfg.estimator()
    est.initialize(cfg.num_classes)
    try:
        est.load_weights(checkpoint)
    except FormatError:
        raise
    except ValueError as exc:
        raise ConfigError(f"checkpoint {checkpoint}: {exc}") from None
    return est


def cmd_eval(args) -> int:
    cfg = _load(args)
    est = _model(cfg, args.checkpoint)
    X, y = _split_arrays(cfg, args.split)
    try:
        s = est.confusion(X, y).scores()
    except ValueError as exc:
        raise ConfigError(f"data: {exc}") from None
    print(f"{s.pacc:.4f}\t{s.macc:.4f}\t{s.miou:.4f}")
    return EXIT_OK


def cmd_trace(args) -> int:
    from .pnm import load_ppm, save_pgm, save_ppm
    from .synthdata import class_palette

    cfg = _load(args)
    est = _model(cfg, args.checkpoint)
    image = load_ppm(args.image)[None]
    maps = est.predict_iterations(image)
    mode = cfg.network.unroll.mode
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if mode == "sequential" and cfg.network.unroll.u_i > 1:
        log.warning("sequential unrolling has no per-iteration head output; writing the final prediction only")
        names = ["final"]
    else:
        names = [f"iter{t}" for t in range(1, len(maps) + 1)]
    palette = class_palette(cfg.num_classes)
    for name, labels in zip(names, maps):
        lab = labels[0]
        save_pgm(out / f"{name}.pgm", lab)
        save_ppm(out / f"{name}.ppm", palette[lab].transpose(2, 0, 1))
        print(f"{name}\t{out / (name + '.pgm')}")
    return EXIT_OK


def cmd_depth(args) -> int:
    from .unroll import effective_depth

    cfg = _load(args)
    print(effective_depth(cfg.network).row())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import check_names, run_suite

    if args.corrupt is not None and args.corrupt not in check_names(args.seed):
        raise ConfigError(f"--corrupt: unknown check {args.corrupt!r}")
    t0 = time.time()
    results = run_suite(seed=args.seed, eps=args.eps, corrupt=args.corrupt)
    for r in results:
        print(f"{r.name}\t{r.max_error:.3e}\t{'ok' if r.passed else 'FAIL'}")
    log.info("gradcheck finished in %.1fs", time.time() - t0)
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rignet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write the synthetic dataset as PPM/PGM files plus a manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train and write checkpoint.rigc and train.log")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="print pAcc, mAcc and mIoU")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="val", choices=("train", "val"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("trace", help="write per-iteration label maps for one image")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("depth", help="print mode u_i l_f l_r l_rj l_rk l_e")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_depth)

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive and a 2-iteration RIGNet")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--corrupt", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        with thread_limit():
            return args.func(args)
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
