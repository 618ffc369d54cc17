"""Command-line driver.

    csfmamba synth --out DIR --seed S --classes K --size HxW
    csfmamba train --data DIR --config FILE --out DIR --seed S
    csfmamba eval --checkpoint DIR --data DIR --split train|val
    csfmamba predict-map --checkpoint DIR --data DIR --out FILE.ppm
    csfmamba bench-scan --lengths 256,512,1024
    csfmamba gradcheck
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig, desk_preset


def _size(text):
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None


def cmd_synth(args):
    from .data import make_synthetic, write_dataset
    H, W = args.size
    hsi, lidar, labels = make_synthetic(args.seed, H, W, args.classes, args.bands, args.noise)
    write_dataset(args.out, hsi, lidar, labels, name=f"synthetic-{args.seed}")
    print(f"wrote {H}x{W} scene, {args.bands} bands, {args.classes} classes, "
          f"{int((labels.labels > 0).sum())} labeled pixels to {args.out}")
    return 0


def cmd_train(args):
    from .pipeline import train
    cfg = RunConfig.load(args.config) if args.config else desk_preset()
    if args.seed is not None:
        d = cfg.to_dict()
        d["train"]["seed"] = args.seed
        d["split"]["seed"] = args.seed
        cfg = RunConfig.from_dict(d)
    if args.epochs is not None:
        cfg.train.epochs = args.epochs

    def progress(rec):
        if not args.quiet:
            print(json.dumps(rec), flush=True)

    _, history = train(args.data, cfg, args.out, progress=progress)
    last = history[-1] if history else {}
    print(f"done: {len(history)} epochs, final train_acc={last.get('train_acc')}, val_oa={last.get('val_oa')}; "
          f"best checkpoint in {Path(args.out) / 'checkpoint'}")
    return 0


def cmd_eval(args):
    from .pipeline import evaluate
    report, cm = evaluate(args.checkpoint, args.data, args.split, args.batch_size, args.out)
    print(json.dumps({**report.to_dict(), "confusion": cm.tolist(), "split": args.split}))
    return 0


def cmd_predict(args):
    from .pipeline import predict_map
    raster = predict_map(args.checkpoint, args.data, args.out, tile_size=args.tile_size)
    print(f"wrote {raster.shape[0]}x{raster.shape[1]} class map to {args.out}")
    return 0


def cmd_bench(args):
    from .bench import bench_scan, format_table
    lengths = [int(v) for v in args.lengths.split(",")]
    rows = bench_scan(lengths, args.repeats, oracle=not args.no_oracle)
    table = format_table(rows)
    print(table)
    if args.out:
        from .plotting import plot_scan_bench
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench_scan.csv").write_text(table + "\n")
        plot_scan_bench(rows, out / "bench_scan.png")
    return 0


def cmd_gradcheck(args):
    from .model import tiny_config
    from .verify import TOLERANCE, check_model, check_primitives
    results = dict(check_primitives(seed=args.seed)) if not args.model_only else {}
    results["model(tiny)"] = check_model(tiny_config(seed=args.seed), seed=args.seed)
    width = max(len(n) for n in results)
    for name, rep in sorted(results.items(), key=lambda kv: -kv[1].max_rel_error):
        w = rep.worst
        where = f"{w.name}{list(map(int, w.worst_index))}" if w else "-"
        print(f"{'PASS' if rep.passed else 'FAIL'}  {name:<{width}}  max_rel_err={rep.max_rel_error:.3e}  at {where}")
    worst_name, worst = max(results.items(), key=lambda kv: kv[1].max_rel_error)
    ok = all(r.passed for r in results.values())
    print(f"worst: {worst_name} ({worst.max_rel_error:.3e}); tolerance {TOLERANCE:g}; "
          f"{'all passed' if ok else 'FAILED'}")
    return 0 if ok else 1


def build_parser():
    p = argparse.ArgumentParser(prog="csfmamba", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--size", type=_size, default=(32, 32))
    s.add_argument("--bands", type=int, default=16)
    s.add_argument("--noise", type=float, default=0.05)
    s.set_defaults(fn=cmd_synth)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="JSON run config (defaults to the desk preset)")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int, help="override train.epochs")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("train", "val"), default="val")
    e.add_argument("--batch-size", type=int, default=256)
    e.add_argument("--out", help="directory for metrics/figures (default: the checkpoint directory)")
    e.set_defaults(fn=cmd_eval)

    m = sub.add_parser("predict-map", help="classify every pixel of the scene")
    m.add_argument("--checkpoint", required=True)
    m.add_argument("--data", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--tile-size", type=int, default=4096)
    m.set_defaults(fn=cmd_predict)

    b = sub.add_parser("bench-scan", help="time the scan against the quadratic oracle")
    b.add_argument("--lengths", default="256,512,1024")
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--no-oracle", action="store_true")
    b.add_argument("--out", help="directory for bench_scan.csv and bench_scan.png")
    b.set_defaults(fn=cmd_bench)

    g = sub.add_parser("gradcheck", help="finite-difference check of all primitives and the tiny model")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--model-only", action="store_true")
    g.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
