"""Recall metrics, the bit-rate benchmark and quantiser-weight exports."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import baselines as bl
from . import data_io as io
from .codec import adc_scan, bits_per_index, build_adc_table, rank_scan, symmetric_scan
from .training import TrainConfig, train

log = logging.getLogger(__name__)

BENCH_COLUMNS = ["method", "bits", "M", "K", "N", "recall", "encode_time_ms", "scan_time_ms"]
PROJECTION_COLUMNS = ["block", "axis_i", "axis_j", "w_x", "w_y"]
METHODS = ("proposed", "proposed_sym", "lsh", "itq", "pq")
DEFAULT_GRID = {16: (4, 16), 32: (8, 16), 64: (8, 256), 128: (16, 256)}


def recall_at(ranked, truth_first, n: int) -> float:
    """Fraction of queries whose true nearest neighbour is among the first ``n`` results."""
    ranked = np.atleast_2d(np.asarray(ranked))
    truth = np.asarray(truth_first)
    if truth.shape != (ranked.shape[0],):
        raise ValueError(f"ground truth for {truth.shape} queries, rankings for {ranked.shape[0]}")
    if ranked.shape[1] < n:
        raise ValueError(f"ranked lists have {ranked.shape[1]} entries, need at least {n}")
    return float(np.mean(np.any(ranked[:, :n] == truth[:, None], axis=1)))


@dataclass
class BenchmarkConfig:
    base: str | None = None  # .fvecs/.bvecs; None selects the synthetic generator
    learn: str | None = None
    train_source: str = "base"  # "base" or "learn"
    sizes: tuple[int, int, int] = (5000, 1000, 10000)  # train, query, database
    methods: list[str] = field(default_factory=lambda: ["proposed", "lsh", "itq", "pq"])
    bits: list[int] = field(default_factory=lambda: [16, 32, 64, 128])
    grid: dict[int, tuple[int, int]] = field(default_factory=lambda: dict(DEFAULT_GRID))
    recall_ns: tuple[int, ...] = (1, 10, 100)
    seed: int = 0
    itq_iters: int = 50
    kmeans_iters: int = 25
    pq_k: int = 256
    timings: bool = True
    jobs: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        self.grid = {int(b): tuple(mk) for b, mk in self.grid.items()}
        self.sizes = tuple(self.sizes)
        self.recall_ns = tuple(self.recall_ns)
        if self.train_source not in ("base", "learn"):
            raise ValueError("train_source must be 'base' or 'learn'")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
        for b in self.bits:
            if any(m.startswith("proposed") for m in self.methods):
                if b not in self.grid:
                    raise ValueError(f"no (M, K) grid entry for {b} bits")
                M, K = self.grid[b]
                if M * bits_per_index(K) != b:
                    raise ValueError(f"grid entry (M={M}, K={K}) does not give {b} bits")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkConfig":
        d = dict(d)
        tc = d.pop("train", {})
        if "grid" in d:
            # entries given in a config file extend the default grid
            d["grid"] = {**DEFAULT_GRID, **{int(b): tuple(mk) for b, mk in d["grid"].items()}}
        return cls(train=tc if isinstance(tc, TrainConfig) else TrainConfig.from_dict(tc), **d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["grid"] = {str(k): list(v) for k, v in self.grid.items()}
        return out


@dataclass
class Split:
    train: np.ndarray
    query: np.ndarray
    database: np.ndarray
    truth: np.ndarray  # (n_query, k) ascending neighbours in the database


def load_split(config: BenchmarkConfig, k: int = 100) -> Split:
    n_train, n_query, n_db = config.sizes
    if config.base is None:
        pool = io.gaussian_mixture(n_train + n_query + n_db, seed=config.seed)
        learn = None
    else:
        pool = io.read_vectors(config.base).data
        learn = io.read_vectors(config.learn).data if config.learn else None
    if config.train_source == "learn":
        if learn is None:
            raise ValueError("train_source 'learn' needs a learn file")
        (_, query, database), _ = io.split_dataset(pool, (0, n_query, n_db), config.seed)
        train_rows = np.random.default_rng(config.seed).permutation(len(learn))[:n_train]
        train_set = learn[np.sort(train_rows)]
    else:
        (train_set, query, database), _ = io.split_dataset(pool, config.sizes, config.seed)
    truth = io.brute_force_neighbours(query, database, min(k, len(database)))
    return Split(train_set, query, database, truth)


def _cell_layout(method: str, bits: int, config: BenchmarkConfig) -> tuple[int, int]:
    if method.startswith("proposed"):
        return config.grid[bits]
    if method == "pq":
        return bits // bits_per_index(config.pq_k), config.pq_k
    return bits, 2


def run_cell(method: str, bits: int, split: Split, config: BenchmarkConfig) -> dict:
    """Train, encode and scan one (method, bits) cell."""
    ns = [n for n in config.recall_ns if n <= len(split.database)]
    top = max(ns)
    M, K = _cell_layout(method, bits, config)
    seed = config.seed
    if method.startswith("proposed"):
        tc = TrainConfig(**{**asdict(config.train), "M": M, "K": K, "seed": seed,
                            "weights": config.train.weights})
        model, _ = train(split.train, tc)
        t0 = time.perf_counter()
        codes = model.encode(split.database)
        if method == "proposed":
            queries = build_adc_table(model.adc_query(split.query))
            t1 = time.perf_counter()
            sq = adc_scan(queries, codes)
        else:
            queries = model.encode(split.query)
            t1 = time.perf_counter()
            sq = symmetric_scan(queries, codes)
    elif method in ("lsh", "itq"):
        model = bl.lsh_train(split.train, bits, seed) if method == "lsh" else \
            bl.itq_train(split.train, bits, config.itq_iters, seed)
        t0 = time.perf_counter()
        codes = model.encode(split.database)
        q = model.encode(split.query)
        t1 = time.perf_counter()
        sq = bl.hamming_scan(q, codes)
    elif method == "pq":
        model = bl.pq_train(split.train, M, K, config.kmeans_iters, seed)
        t0 = time.perf_counter()
        codes = model.encode(split.database)
        tables = model.adc_tables(split.query)
        t1 = time.perf_counter()
        sq = adc_scan(tables, codes)
    else:
        raise ValueError(f"unknown method {method!r}")
    ranked = rank_scan(sq, top)
    t2 = time.perf_counter()
    truth = split.truth[:, 0]
    return {
        "method": method, "bits": bits, "M": M, "K": K,
        "recall": {n: recall_at(ranked, truth, n) for n in ns},
        "encode_time_ms": (t1 - t0) * 1e3 if config.timings else 0.0,
        "scan_time_ms": (t2 - t1) * 1e3 if config.timings else 0.0,
    }


def _safe_cell(args):
    method, bits, split, config = args
    try:
        return run_cell(method, bits, split, config)
    except Exception as exc:  # one failed cell must not stop the sweep
        log.exception("cell %s/%d failed", method, bits)
        M, K = _cell_layout(method, bits, config)
        return {"method": method, "bits": bits, "M": M, "K": K, "error": f"{type(exc).__name__}: {exc}"}


def run_benchmark(config: BenchmarkConfig, out_dir: str | Path | None = None,
                  split: Split | None = None) -> list[dict]:
    """Every (method, bits) cell; writes bench.csv and bench.json into ``out_dir``."""
    split = split if split is not None else load_split(config)
    jobs = [(m, b, split, config) for b in config.bits for m in config.methods]
    if config.jobs > 1:
        with ProcessPoolExecutor(config.jobs) as pool:
            cells = list(pool.map(_safe_cell, jobs))
    else:
        cells = [_safe_cell(j) for j in jobs]
    if out_dir is not None:
        write_report(out_dir, cells, config)
    return cells


def report_rows(cells: list[dict], ns) -> list[dict]:
    rows = []
    for c in cells:
        for n in ns:
            rows.append({
                "method": c["method"], "bits": c["bits"], "M": c["M"], "K": c["K"], "N": n,
                "recall": c.get("recall", {}).get(n, float("nan")),
                "encode_time_ms": c.get("encode_time_ms", float("nan")),
                "scan_time_ms": c.get("scan_time_ms", float("nan")),
            })
    return rows


def write_report(out_dir, cells: list[dict], config: BenchmarkConfig) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = report_rows(cells, config.recall_ns)
    with open(out / "bench.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
    summary = {
        "config": config.to_dict(),
        "rows": rows,
        "errors": {f"{c['method']}/{c['bits']}": c["error"] for c in cells if "error" in c},
    }
    (out / "bench.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=str))


# --------------------------------------------------------------------------
# quantiser weight projections
# --------------------------------------------------------------------------


def export_weight_projections(model, sample: int = 500, seed: int = 0, y=None):
    """Projections of each block's quantiser rows onto two random coordinate axes.

    Returns (weight rows, y rows); both use the columns block, axis_i,
    axis_j, w_x, w_y. ``y`` is an optional (n, M, K) embedding sample whose
    blocks are projected onto the same axes.
    """
    rng = np.random.default_rng(seed)
    W = model.W.value
    w_rows, y_rows = [], []
    for m in range(W.shape[0]):
        i, j = np.sort(rng.choice(W.shape[2], size=2, replace=False))
        pick = np.sort(rng.choice(W.shape[1], size=min(sample, W.shape[1]), replace=False))
        for r in pick:
            w_rows.append({"block": m, "axis_i": int(i), "axis_j": int(j),
                           "w_x": float(W[m, r, i]), "w_y": float(W[m, r, j])})
        if y is not None:
            ys = np.asarray(y)[:, m]
            take = np.sort(rng.choice(len(ys), size=min(sample, len(ys)), replace=False))
            for r in take:
                y_rows.append({"block": m, "axis_i": int(i), "axis_j": int(j),
                               "w_x": float(ys[r, i]), "w_y": float(ys[r, j])})
    return w_rows, y_rows


def write_rows(path, rows: list[dict], columns=PROJECTION_COLUMNS) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
