"""Command-line entry point.

Subcommands: serialize, locality-bench, scan-bench, train-toy, eval,
ablate, gradcheck.  Exit codes: 0 success, 1 usage error, 2 runtime
failure.  Benchmarks emit TSV with a one-line header; training emits one
JSON-lines record per epoch.  Every run prints its resolved configuration
to standard error, and all randomness flows from --seed.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .model import (
    build_model,
    format_model_config,
    load_weights,
    parse_model_config,
    preset_config,
    save_weights,
)
from .pointio import load_xyz, PointCloud
from .scan import ScanParams, selective_scan_par, selective_scan_seq
from .spacefill import (
    AXIS_PRIORITIES,
    CURVE_KINDS,
    CurveVariant,
    mean_neighbor_distance,
    serialize,
)
from .train import (
    TrainConfig,
    ablate,
    default_ablation_cells,
    evaluate,
    make_dataset,
    restore_weights,
    summarize_ablation,
    train_toy,
)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _print_resolved(args: argparse.Namespace) -> None:
    pairs = " ".join(
        f"{k}={v}" for k, v in sorted(vars(args).items()) if k != "func" and v is not None
    )
    print(f"# resolved: {pairs}", file=sys.stderr)


def _model_config(args):
    name_or_path = args.config
    if name_or_path in ("tiny", "toy", "toy-seg"):
        return preset_config(name_or_path)
    return parse_model_config(Path(name_or_path).read_text())


# --- subcommands ---------------------------------------------------------------


def cmd_serialize(args) -> int:
    pc = load_xyz(args.input)
    variant = CurveVariant(curve=args.curve, axis_priority=args.priority)
    ser = serialize(pc, variant, bits=args.bits)
    _emit("".join(f"{i}\n" for i in ser.perm), args.out)
    return 0


def cmd_locality_bench(args) -> int:
    variants = [CurveVariant(c, p) for c in CURVE_KINDS for p in AXIS_PRIORITIES]
    cols = [f"{v.curve}_{v.axis_priority}" for v in variants]
    lines = ["\t".join(["trial"] + cols + ["hilbert_mean", "zorder_mean"])]
    wins = 0
    for trial in range(args.trials):
        rng = np.random.default_rng(args.seed + trial)
        pc = PointCloud(coords=rng.random((args.n, 3)))
        row = [
            mean_neighbor_distance(pc.coords, serialize(pc, v, bits=args.bits).perm)
            for v in variants
        ]
        h = float(np.mean(row[: len(AXIS_PRIORITIES)]))
        z = float(np.mean(row[len(AXIS_PRIORITIES) :]))
        wins += h < z
        lines.append(
            "\t".join([str(trial)] + [f"{x:.6f}" for x in row] + [f"{h:.6f}", f"{z:.6f}"])
        )
    _emit("".join(line + "\n" for line in lines), args.out)
    print(f"# hilbert < zorder in {wins}/{args.trials} trials", file=sys.stderr)
    return 0


def cmd_scan_bench(args) -> int:
    lengths = [int(x) for x in args.lengths.split(",")]
    chunks = [int(x) for x in args.chunks.split(",")]
    lines = ["\t".join(["L", "d", "N", "chunk", "threads", "seq_ms", "par_ms", "max_rel_err"])]
    rng = np.random.default_rng(args.seed)
    for L in lengths:
        a = rng.uniform(0.1, 0.99, size=(L, args.d, args.n))
        b = rng.standard_normal((L, args.d, args.n))
        c = rng.standard_normal((L, args.n))
        params = ScanParams(a_bar=a, bx_bar=b, c=c)
        t0 = time.perf_counter()
        ref = selective_scan_seq(params)
        seq_ms = (time.perf_counter() - t0) * 1e3
        for chunk in chunks:
            t0 = time.perf_counter()
            out = selective_scan_par(params, chunk=chunk, threads=args.threads)
            par_ms = (time.perf_counter() - t0) * 1e3
            denom = np.maximum(np.abs(ref), 1e-12)
            err = float(np.max(np.abs(out - ref) / denom))
            lines.append(
                f"{L}\t{args.d}\t{args.n}\t{chunk}\t{args.threads}"
                f"\t{seq_ms:.3f}\t{par_ms:.3f}\t{err:.3e}"
            )
    _emit("".join(line + "\n" for line in lines), args.out)
    return 0


def cmd_train_toy(args) -> int:
    cfg = _model_config(args)
    print(format_model_config(cfg), file=sys.stderr, end="")
    train = make_dataset(args.train, points=args.points, noise=args.noise, seed=args.seed + 1)
    test = make_dataset(args.test, points=args.points, noise=args.noise, seed=args.seed + 2)
    weights = build_model(cfg, np.random.default_rng(args.seed))
    tcfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        weight_decay=args.weight_decay,
        seed=args.seed,
        target_acc=args.target_acc,
        chunk=args.chunk,
        threads=args.threads,
    )
    history, best = train_toy(weights, train, test, tcfg)
    _emit("".join(json.dumps(rec) + "\n" for rec in history), args.out)
    if args.save:
        restore_weights(weights, best)
        save_weights(args.save, weights)
        print(f"# best weights -> {args.save}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    weights = load_weights(args.weights)
    test = make_dataset(args.test, points=args.points, noise=args.noise, seed=args.seed + 2)
    acc = evaluate(weights, test, chunk=args.chunk, threads=args.threads)
    _emit(f"accuracy\n{acc:.4f}\n", args.out)
    return 0


def cmd_ablate(args) -> int:
    cfg = _model_config(args)
    train = make_dataset(args.train, points=args.points, noise=args.noise, seed=args.seed + 1)
    test = make_dataset(args.test, points=args.points, noise=args.noise, seed=args.seed + 2)
    tcfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        chunk=args.chunk,
        threads=args.threads,
    )
    cells = None
    if args.cells is not None:
        wanted = [name.strip() for name in args.cells.split(",") if name.strip()]
        by_name = {c["name"]: c for c in default_ablation_cells()}
        unknown = [name for name in wanted if name not in by_name]
        if unknown:
            raise ValueError(f"unknown cells {unknown}; have {sorted(by_name)}")
        cells = [by_name[name] for name in wanted]
    seeds = tuple(range(args.seeds))
    rows = ablate(cfg, tcfg, train, test, cells=cells, seeds=seeds)
    header = [
        "cell", "seed", "status", "best_test_acc", "final_test_acc",
        "final_train_acc", "epochs_run", "seconds", "error",
    ]
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(str(row.get(k, "")) for k in header))
    _emit("".join(line + "\n" for line in lines), args.out)
    for cell, mean in summarize_ablation(rows).items():
        print(f"# {cell}: mean best test acc {mean:.4f}", file=sys.stderr)
    return 0


def cmd_gradcheck(args) -> int:
    from .fdsuite import run_suite

    reports = run_suite(include_model=not args.skip_model)
    lines = ["\t".join(["op", "max_rel_err", "status"])]
    for r in reports:
        lines.append(f"{r.name}\t{r.max_rel_err:.3e}\t{'pass' if r.passed else 'FAIL'}")
    _emit("".join(line + "\n" for line in lines), args.out)
    failures = [r.name for r in reports if not r.passed]
    if failures:
        raise RuntimeError(f"gradient check failed for: {', '.join(failures)}")
    return 0


# --- parser --------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="curvescan", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    def common(p, config_default=None):
        p.add_argument("--seed", type=int, default=0, help="root random seed")
        p.add_argument("--out", default=None, help="write output here instead of stdout")
        if config_default is not None:
            p.add_argument(
                "--config",
                default=config_default,
                help="model preset (tiny/toy/toy-seg) or config file path",
            )

    p = sub.add_parser("serialize", help="order a cloud along a space-filling curve")
    p.add_argument("input", help="ASCII xyz file, one point per line")
    p.add_argument("--curve", choices=CURVE_KINDS, default="hilbert")
    p.add_argument("--priority", choices=AXIS_PRIORITIES, default="xyz")
    p.add_argument("--bits", type=int, default=10)
    common(p)
    p.set_defaults(func=cmd_serialize)

    p = sub.add_parser("locality-bench", help="mean consecutive-neighbor distance per variant")
    p.add_argument("--n", type=int, default=4096)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--bits", type=int, default=10)
    common(p)
    p.set_defaults(func=cmd_locality_bench)

    p = sub.add_parser("scan-bench", help="sequential vs chunked scan timing and error")
    p.add_argument("--lengths", default="256,1024,4096", help="comma-separated L values")
    p.add_argument("--chunks", default="16,64,256", help="comma-separated chunk sizes")
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--threads", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_scan_bench)

    p = sub.add_parser("train-toy", help="train on the synthetic four-shape task")
    p.add_argument("--train", type=int, default=400, help="training clouds")
    p.add_argument("--test", type=int, default=100, help="test clouds")
    p.add_argument("--points", type=int, default=256)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--target-acc", type=float, default=None, help="stop once test acc reaches this")
    p.add_argument("--chunk", type=int, default=8)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--save", default=None, help="write best weights (npz) here")
    common(p, config_default="toy")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("eval", help="evaluate saved weights on fresh synthetic clouds")
    p.add_argument("--weights", required=True)
    p.add_argument("--test", type=int, default=100)
    p.add_argument("--points", type=int, default=256)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--chunk", type=int, default=8)
    p.add_argument("--threads", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="directional ablation grid on the toy task")
    p.add_argument("--train", type=int, default=96)
    p.add_argument("--test", type=int, default=48)
    p.add_argument("--points", type=int, default=128)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seeds", type=int, default=3, help="seeds per cell")
    p.add_argument("--cells", default=None, help="comma-separated cell names (default: all)")
    p.add_argument("--chunk", type=int, default=8)
    p.add_argument("--threads", type=int, default=1)
    common(p, config_default="toy")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward rule")
    p.add_argument("--skip-model", action="store_true", help="primitives and composites only")
    common(p)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse exits; keep main() returning codes
        return int(e.code or 0)
    _print_resolved(args)
    try:
        return args.func(args)
    except Exception as e:  # runtime failures exit 2, usage errors exited 1 already
        print(f"curvescan: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
