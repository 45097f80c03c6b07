"""Command-line entry point: ``fillin {order,fillin,bench,train,generate}``.

Exit codes: 0 ok, 2 input/usage error, 3 ordering method failure,
4 training divergence.  ``FILLIN_SEED`` overrides the training seed.

Fill counts are structural, no-pivot Cholesky: ``2 nnz(L) - n - nnz(A)``.
"""
from __future__ import annotations

import argparse
import csv
import glob
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import orderings
from .encoder import Encoder, EncoderConfig
from .pfm import PfmConfig, TrainingDivergence, infer_ordering, log_to_stream, train
from .sparse import (MatrixFormatError, PermutationError, generate_grid_laplacian,
                     generate_random_spd, parse_matrix_market, read_permutation, to_graph,
                     write_matrix_market, write_permutation)
from .symbolic import symbolic_fill

EXIT_OK, EXIT_INPUT, EXIT_METHOD, EXIT_DIVERGED = 0, 2, 3, 4
METHODS = [m.value for m in orderings.OrderingMethod]
BENCH_HEADER = ["matrix_id", "n", "nnz_A", "method", "fill_count", "fill_ratio",
                "ordering_time_ms"]
FILL_DEFINITION = "structural no-pivot Cholesky fill: 2*nnz(L) - n - nnz(A)"


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _load_matrix(path):
    try:
        return parse_matrix_market(path)
    except (OSError, MatrixFormatError, UnicodeDecodeError) as exc:
        raise CliError(f"cannot load matrix {path}: {exc}") from exc


def _load_encoder(path) -> Encoder:
    try:
        return Encoder.load(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CliError(f"cannot load checkpoint {path}: {exc}") from exc


def compute_ordering(A, method: str, encoder: Encoder | None = None):
    if method == "pfm":
        if encoder is None:
            raise CliError("--method pfm requires --checkpoint")
        return infer_ordering(A, encoder)
    return orderings.order(to_graph(A), method)


def _expand(patterns: list[str]) -> list[str]:
    paths = []
    for pat in patterns:
        hits = sorted(glob.glob(pat))
        paths.extend(hits if hits else [pat])
    return paths


# ---------------------------------------------------------------- commands

def cmd_order(args) -> int:
    if args.method == "pfm" and not args.checkpoint:
        raise CliError("--method pfm requires --checkpoint")
    A = _load_matrix(args.matrix)
    encoder = _load_encoder(args.checkpoint) if args.checkpoint else None
    try:
        p = compute_ordering(A, args.method, encoder)
    except CliError:
        raise
    except Exception as exc:
        raise CliError(f"method {args.method} failed: {exc}", EXIT_METHOD) from exc
    write_permutation(p, args.out)
    return EXIT_OK


def cmd_fillin(args) -> int:
    A = _load_matrix(args.matrix)
    p = None
    if args.perm:
        try:
            p = read_permutation(Path(args.perm))
        except (OSError, PermutationError) as exc:
            raise CliError(f"cannot read permutation {args.perm}: {exc}") from exc
        if p.n != A.n:
            raise CliError(f"permutation has {p.n} entries, matrix has {A.n} rows")
    print(symbolic_fill(A, p).to_json())
    return EXIT_OK


def _bench_one(matrix_id, A, method, encoder):
    try:
        t0 = time.perf_counter()
        p = compute_ordering(A, method, encoder)
        ms = (time.perf_counter() - t0) * 1e3
        rep = symbolic_fill(A, p)
        return [matrix_id, A.n, A.nnz, method, rep.fill_count, repr(rep.fill_ratio),
                f"{ms:.3f}"]
    except Exception as exc:
        # failures keep the row; the note sits in the fill_count column
        return [matrix_id, A.n, A.nnz, method, f"error: {exc}", "", ""]


def cmd_bench(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise CliError(f"unknown methods {bad}; choose from {METHODS}")
    if "pfm" in methods and not args.checkpoint:
        raise CliError("method pfm requires --checkpoint")
    encoder = _load_encoder(args.checkpoint) if args.checkpoint else None

    paths = _expand(args.matrices)
    rows, loaded = [], {}
    for path in paths:
        mid = Path(path).stem
        try:
            loaded[mid] = _load_matrix(path)
        except CliError as exc:
            print(str(exc), file=sys.stderr)
            rows.extend([mid, "", "", m, f"error: {exc}", "", ""] for m in methods)
    if not loaded:
        raise CliError("no matrix could be loaded")

    tasks = [(mid, A, m) for mid, A in loaded.items() for m in methods]
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        rows.extend(pool.map(lambda t: _bench_one(*t, encoder), tasks))
    rows.sort(key=lambda r: (r[0], r[3]))
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_HEADER)
        w.writerows(rows)
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        cfg = PfmConfig.from_text(Path(args.config).read_text())
    except (OSError, ValueError, TypeError) as exc:
        raise CliError(f"invalid config {args.config}: {exc}") from exc
    env_seed = os.environ.get("FILLIN_SEED")
    if env_seed is not None:
        try:
            cfg = replace(cfg, seed=int(env_seed))
        except ValueError:
            raise CliError(f"FILLIN_SEED must be an integer, got {env_seed!r}") from None
    paths = _expand(args.matrices)
    matrices = [_load_matrix(p) for p in paths]
    if not matrices:
        raise CliError("no training matrices")
    too_big = [p for p, A in zip(paths, matrices) if A.n > cfg.max_n]
    if too_big:
        raise CliError(f"matrices exceed the dense training bound {cfg.max_n}: {too_big}")
    try:
        enc_cfg = EncoderConfig(mode=args.mode, seed=cfg.seed)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    log_fh = open(args.log, "w") if args.log else sys.stdout
    try:
        encoder = train(matrices, cfg, enc_cfg, log_sink=log_to_stream(log_fh),
                        matrix_ids=[Path(p).stem for p in paths])
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}; snapshot={json.dumps(exc.snapshot)}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    finally:
        if log_fh is not sys.stdout:
            log_fh.close()
    encoder.save(args.out)
    return EXIT_OK


def cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.kind == "grid":
            if args.rows is None or args.cols is None:
                raise CliError("--kind grid needs --rows and --cols")
            A = generate_grid_laplacian(args.rows, args.cols)
            name = f"grid_{args.rows}x{args.cols}.mtx"
        else:
            if args.n is None or args.density is None:
                raise CliError("--kind random-spd needs --n and --density")
            A = generate_random_spd(args.n, args.density, args.seed)
            name = f"spd_n{args.n}_d{args.density:g}_s{args.seed}.mtx"
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    write_matrix_market(A, out / name)
    print(out / name)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fillin", description=__doc__.split("\n")[0],
                                 epilog=f"Fill definition: {FILL_DEFINITION}.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("order", help="compute an ordering and write it as a permutation file")
    p.add_argument("--matrix", required=True)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_order)

    p = sub.add_parser("fillin", help="report fill for a matrix and optional permutation",
                       description=f"Prints a JSON fill report ({FILL_DEFINITION}).")
    p.add_argument("--matrix", required=True)
    p.add_argument("--perm")
    p.set_defaults(func=cmd_fillin)

    p = sub.add_parser("bench", help="compare ordering methods over a set of matrices")
    p.add_argument("--matrices", required=True, nargs="+", help="paths or glob patterns")
    p.add_argument("--methods", default="natural,rcm,md,fiedler")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train", help="train the PFM reordering model")
    p.add_argument("--matrices", required=True, nargs="+", help="paths or glob patterns")
    p.add_argument("--config", required=True, help="key=value text file")
    p.add_argument("--out", required=True, help="checkpoint path (JSON)")
    p.add_argument("--mode", default="multigrid", choices=["direct", "sage", "multigrid"])
    p.add_argument("--log", help="write the JSON-lines training log here instead of stdout")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="write synthetic Matrix Market files")
    p.add_argument("--kind", required=True, choices=["grid", "random-spd"])
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--density", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"fillin: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
