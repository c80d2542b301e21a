"""Command line harness: ``taskqr {solve,bench,compare-deflation,calibrate,gen}``."""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from .aed import PerformanceModel, fit_performance_model, small_aed
from .context import SolverConfig
from .deflation import DeflationCondition
from .driver import ConvergenceError, solve
from .generators import MatrixSpec, gen_hessrand
from .metrics import metrics, report_row, rows_to_csv, rows_to_json
from .mmio import MatrixFileError, write_dense, write_matrix_market


def _spec(args) -> MatrixSpec:
    m = args.matrix
    if m in ("syn", "hessrand"):
        if args.n is None:
            raise ValueError(f"--n is required for --matrix {m}")
        return MatrixSpec(m, args.n, args.seed)
    if not os.path.exists(m):
        raise ValueError(f"--matrix must be syn, hessrand or an existing file, got {m!r}")
    kind = "mtx" if m.endswith((".mtx", ".mm")) else "dense"
    return MatrixSpec(kind, 0, args.seed, m)


def _config(args, workers: int, deflation: str | None = None) -> SolverConfig:
    model = PerformanceModel.load(args.model) if getattr(args, "model", None) else None
    return SolverConfig(workers=workers, tile_size=args.tile_size,
                        deflation=DeflationCondition.parse(deflation or args.deflation),
                        deterministic=args.deterministic, model=model)


def _run(A, truth, spec: MatrixSpec, cfg: SolverConfig, telemetry: str | None) -> dict:
    t0 = time.perf_counter()
    converged = True
    try:
        res = solve(A, cfg, telemetry_path=telemetry)
    except ConvergenceError as exc:
        if exc.partial is None:
            raise
        res, converged = exc.partial, False
    wall = time.perf_counter() - t0
    rep = metrics(A, res.S, res.Q, truth if converged else None,
                  res.eigenvalues if converged else None, wall, res.stats)
    return report_row(rep, matrix=spec.label, n=A.shape[0], seed=spec.seed,
                      condition=cfg.deflation.label, workers=cfg.workers,
                      tile_size=res.stats.get("tile_size", ""),
                      deterministic=int(cfg.deterministic), converged=int(converged))


def _emit(rows, fmt: str) -> None:
    sys.stdout.write(rows_to_csv(rows) if fmt == "csv" else rows_to_json(rows) + "\n")


def cmd_solve(args) -> int:
    spec = _spec(args)
    A, truth = spec.build()
    row = _run(A, truth, spec, _config(args, args.workers), args.telemetry)
    _emit([row], args.out)
    return 0 if row["converged"] else 3


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}")
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("values must be positive")
    return vals


def cmd_bench(args) -> int:
    spec = _spec(args)
    A, truth = spec.build()
    rows = []
    for w in args.workers:
        tel = f"{args.telemetry}.w{w}.csv" if args.telemetry else None
        rows.append(_run(A, truth, spec, _config(args, w), tel))
    _emit(rows, args.out)
    return 0


def cmd_compare(args) -> int:
    spec = _spec(args)
    A, truth = spec.build()
    conds = ["lapack", "norm", f"fixed:{args.fixed_eps!r}"]
    rows = [_run(A, truth, spec, _config(args, args.workers, c), None) for c in conds]
    _emit(rows, args.out)
    return 0


def calibrate(sizes, repeats: int = 3, seed: int = 0):
    """Time the sequential AED kernel on random Hessenberg windows and fit ``a n^b + c``."""
    samples = []
    for n in sizes:
        W = gen_hessrand(int(n), seed)
        s = float(W[1, 0]) if n > 1 else 1.0
        small_aed(W, s)  # compile / warm caches
        best = min(_timed(small_aed, W, s) for _ in range(repeats))
        samples.append((float(n), best))
    return fit_performance_model(samples, return_model=True), samples


def _timed(fn, *a) -> float:
    t0 = time.perf_counter()
    fn(*a)
    return time.perf_counter() - t0


def cmd_calibrate(args) -> int:
    model, samples = calibrate(args.sizes, args.repeats, args.seed)
    model.save(args.save)
    rows = [{"n": int(n), "seconds": t, "predicted": model.predict(n)} for n, t in samples]
    if args.out == "json":
        import json
        print(json.dumps({"model": {"a": model.a, "b": model.b, "c": model.c,
                                    "residual": model.residual}, "samples": rows}, indent=2))
    else:
        print("n,seconds,predicted")
        for r in rows:
            print(f"{r['n']},{r['seconds']!r},{r['predicted']!r}")
    print(f"model written to {args.save}", file=sys.stderr)
    return 0


def cmd_gen(args) -> int:
    if args.kind == "syn":
        A, _ = MatrixSpec("syn", args.n, args.seed).build()
    else:
        A = gen_hessrand(args.n, args.seed)
    fmt = args.format or ("mtx" if args.output.endswith((".mtx", ".mm")) else "dense")
    if fmt == "mtx":
        write_matrix_market(args.output, A)
    else:
        write_dense(args.output, A)
    print(f"wrote {args.kind} n={args.n} seed={args.seed} to {args.output} ({fmt})", file=sys.stderr)
    return 0


def _common(p: argparse.ArgumentParser, workers_list: bool = False) -> None:
    p.add_argument("--matrix", required=True, help="syn, hessrand or a .mtx / dense file path")
    p.add_argument("--n", type=int, help="dimension for generated matrices")
    p.add_argument("--seed", type=int, default=0)
    if workers_list:
        p.add_argument("--workers", type=_int_list, default=[1, 2, 4, 8],
                       help="comma separated worker counts (default 1,2,4,8)")
    else:
        p.add_argument("--workers", type=int, default=1)
    p.add_argument("--tile-size", type=int, default=None)
    p.add_argument("--deflation", default="lapack", help="lapack | norm | fixed:EPS")
    p.add_argument("--deterministic", action="store_true",
                   help="size-threshold AED choice and worker-independent tiling")
    p.add_argument("--out", choices=("csv", "json"), default="json")
    p.add_argument("--telemetry", metavar="PATH", help="per-task CSV trace")
    p.add_argument("--model", metavar="PATH", help="AED timing model from `calibrate`")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="taskqr", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one matrix and report accuracy metrics")
    _common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="worker sweep, one row per worker count")
    _common(p, workers_list=True)
    p.set_defaults(func=cmd_bench, out="csv")

    p = sub.add_parser("compare-deflation", help="one row per deflation condition")
    _common(p)
    p.add_argument("--fixed-eps", type=float, default=2.0**-52)
    p.set_defaults(func=cmd_compare, out="csv")

    p = sub.add_parser("calibrate", help="fit the sequential AED timing model")
    p.add_argument("--sizes", type=_int_list, default=[64, 96, 128, 192, 256, 384, 512])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--save", default="aed_model.json", metavar="PATH")
    p.add_argument("--out", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("gen", help="write a generated matrix to a file")
    p.add_argument("--kind", choices=("syn", "hessrand"), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True, metavar="PATH")
    p.add_argument("--format", choices=("mtx", "dense"))
    p.set_defaults(func=cmd_gen)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, MatrixFileError, OSError) as exc:
        print(f"taskqr: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
