"""Command-line entry point: ``spherehash <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import data_io as io
from . import geometry as geo
from .codec import make_database, search
from .evaluation import BenchmarkConfig, export_weight_projections, run_benchmark, write_rows
from .network import load_checkpoint
from .training import TrainConfig, train


def load_config(path) -> dict:
    if path is None:
        return {}
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise SystemExit(f"{path}: configuration must be a mapping")
    return data


def cmd_prepare(args, cfg: dict) -> None:
    bench = BenchmarkConfig.from_dict({**cfg.get("bench", {}), "seed": args.seed,
                                       **({"base": args.base} if args.base else {}),
                                       **({"learn": args.learn} if args.learn else {}),
                                       **({"train_source": args.train_source} if args.train_source else {}),
                                       **({"sizes": tuple(args.sizes)} if args.sizes else {})})
    from .evaluation import load_split

    split = load_split(bench, k=args.gt_k)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_fvecs(out / "train.fvecs", split.train)
    io.write_fvecs(out / "query.fvecs", split.query)
    io.write_fvecs(out / "database.fvecs", split.database)
    io.write_ivecs(out / "gt.ivecs", split.truth)
    io.write_ivecs(out / "train_gt.ivecs", io.self_neighbours(split.train, args.k))
    print(f"wrote splits {tuple(len(s) for s in (split.train, split.query, split.database))} to {out}")


def cmd_train(args, cfg: dict) -> None:
    tc = TrainConfig.from_dict({**cfg.get("train", {}), "seed": args.seed})
    for key in ("M", "K", "epochs", "batch_size", "negatives"):
        value = getattr(args, key)
        if value is not None:
            setattr(tc, key, value)
    data = io.read_vectors(args.data).data
    neighbours = io.read_ivecs(args.neighbours) if args.neighbours else None
    train(data, tc, neighbours=neighbours, checkpoint=args.out, log_path=args.log)
    print(f"saved checkpoint to {args.out}")


def cmd_encode(args, cfg: dict) -> None:
    model, _, _ = load_checkpoint(args.checkpoint)
    codes = model.encode(io.read_vectors(args.input).data)
    io.write_code_database(args.out, make_database(codes, model.config.M, model.config.K))
    print(f"encoded {len(codes)} vectors into {args.out}")


def cmd_search(args, cfg: dict) -> None:
    model, _, _ = load_checkpoint(args.checkpoint)
    db = io.read_code_database(args.codes)
    queries = io.read_vectors(args.queries).data
    if args.mode == "adc":
        reps = model.adc_query(queries)
        # search() turns the row cosines into 2 - 2q tables
        results = [search(r, db, args.n, "adc") for r in reps]
    else:
        codes = model.encode(queries)
        results = [search(c, db, args.n, "symmetric") for c in codes]
    ranked = np.stack([r[0] for r in results])
    if str(args.out).endswith(".ivecs"):
        io.write_ivecs(args.out, ranked)
    else:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["query", "rank", "index", "distance"])
            for qi, (idx, dist) in enumerate(results):
                for rank, (i, d) in enumerate(zip(idx, dist)):
                    writer.writerow([qi, rank, int(i), repr(float(d))])
    print(f"wrote results for {len(ranked)} queries to {args.out}")


def cmd_bench(args, cfg: dict) -> None:
    bench_cfg = {**cfg.get("bench", {}), "seed": args.seed}
    if "train" in cfg:
        bench_cfg["train"] = {**cfg["train"], **bench_cfg.get("train", {})}
    if args.methods:
        bench_cfg["methods"] = args.methods
    if args.bits:
        bench_cfg["bits"] = args.bits
    if args.no_timings:
        bench_cfg["timings"] = False
    if args.jobs:
        bench_cfg["jobs"] = args.jobs
    config = BenchmarkConfig.from_dict(bench_cfg)
    cells = run_benchmark(config, args.out)
    for c in cells:
        print(c["method"], c["bits"], c.get("recall", c.get("error")))


def cmd_geolab(args, cfg: dict) -> None:
    rows = []
    for n in args.n:
        points = geo.SAMPLERS[args.shape](n, args.samples, args.seed + n)
        hist = geo.pairwise_histogram(points, bins=args.bins, upper=geo.max_distance(args.shape, n),
                                      seed=args.seed)
        for lo, hi, mass in zip(hist.edges[:-1], hist.edges[1:], hist.masses):
            rows.append([args.shape, n, repr(float(lo)), repr(float(hi)), repr(float(mass)),
                         repr(hist.mean), repr(hist.var)])
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["shape", "n", "bin_lo", "bin_hi", "mass", "mean", "var"])
        writer.writerows(rows)
    print(f"wrote {len(rows)} histogram rows to {args.out}")


def cmd_export_weights(args, cfg: dict) -> None:
    model, _, _ = load_checkpoint(args.checkpoint)
    y = model.embed(io.read_vectors(args.inputs).data) if args.inputs else None
    w_rows, y_rows = export_weight_projections(model, args.sample, args.seed, y)
    write_rows(args.out, w_rows)
    if y_rows:
        out = Path(args.out)
        write_rows(out.with_name(out.stem + "_y" + out.suffix), y_rows)
    print(f"wrote {len(w_rows)} weight projections to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spherehash", description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", help="YAML file with 'train' and 'bench' sections")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="split a corpus and compute exact ground truth")
    p.add_argument("--base", help=".fvecs/.bvecs corpus; synthetic data when omitted")
    p.add_argument("--learn", help="optional BigANN learn file")
    p.add_argument("--train-source", choices=["base", "learn"])
    p.add_argument("--sizes", type=int, nargs=3, metavar=("TRAIN", "QUERY", "DATABASE"))
    p.add_argument("--k", type=int, default=10, help="neighbours per training point")
    p.add_argument("--gt-k", type=int, default=100, help="ground-truth neighbours per query")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train the catalyser and quantiser")
    p.add_argument("--data", required=True)
    p.add_argument("--neighbours", help="ivecs k-NN table of the training set")
    p.add_argument("--M", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--negatives", choices=["uniform", "semi-hard"])
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="encode vectors into a packed code database")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("search", help="exhaustive search of a code database")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--codes", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--mode", choices=["adc", "symmetric"], default="adc")
    p.add_argument("--out", required=True, help=".ivecs or .csv")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("bench", help="recall benchmark across methods and bit budgets")
    p.add_argument("--methods", nargs="+")
    p.add_argument("--bits", type=int, nargs="+")
    p.add_argument("--no-timings", action="store_true", help="write zero timings (byte-stable CSV)")
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("geolab", help="pairwise-distance histograms on simplex, sphere, cube")
    p.add_argument("--shape", choices=sorted(geo.SAMPLERS), required=True)
    p.add_argument("--n", type=int, nargs="+", required=True)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_geolab)

    p = sub.add_parser("export-weights", help="2-axis projections of quantiser rows")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sample", type=int, default=500)
    p.add_argument("--inputs", help="vectors whose embeddings are projected alongside")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_weights)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args, load_config(args.config))
    except (io.FormatError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
