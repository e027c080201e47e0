"""Triplet sampling from a neighbour graph and the optimisation loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import losses as L
from . import numerics as nx
from .codec import adc_scan, build_adc_table, rank_scan
from .data_io import brute_force_neighbours, self_neighbours
from .network import CatalyserConfig, HashNet, save_checkpoint
from .numerics import AdamState

log = logging.getLogger(__name__)

LOG_COLUMNS = [
    "kind", "epoch", "step", "tri_z", "tri_y", "koleo_y", "koleo_w", "quant", "total",
    "block_entropy", "batch_entropy", "code_entropy", "val_recall",
]


class TrainingError(RuntimeError):
    pass


@dataclass
class TripletBatch:
    """Row indices into the minibatch inputs."""

    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray


class TripletSampler:
    """Draws anchors, neighbour positives and non-neighbour negatives.

    A minibatch holds B anchors followed by their B positives; each anchor's
    negative is another row of the same minibatch that is neither the anchor
    itself nor one of its listed neighbours.
    """

    def __init__(self, data: np.ndarray, neighbours: np.ndarray, strategy: str = "uniform",
                 seed: int = 0, margin: float = 0.1):
        if strategy not in ("uniform", "semi-hard"):
            raise ValueError(f"unknown negative mining strategy {strategy!r}")
        self.data = np.asarray(data, dtype=np.float64)
        self.neighbours = [np.asarray(row) for row in neighbours]
        self.strategy = strategy
        self.margin = margin
        self.rng = np.random.default_rng(seed)
        self.usable = np.array([i for i, row in enumerate(self.neighbours) if len(row) > 0])
        skipped = len(self.neighbours) - len(self.usable)
        if skipped:
            log.warning("%d points have no neighbours and are never used as anchors", skipped)
        if len(self.usable) < 2:
            raise ValueError("need at least two points with neighbours")

    def sample(self, batch_size: int, model: HashNet | None = None):
        """Returns (inputs of shape (2B, d), dataset ids, TripletBatch)."""
        B = min(batch_size, len(self.usable))
        anchors = self.rng.choice(self.usable, size=B, replace=False)
        positives = np.array([self.rng.choice(self.neighbours[a]) for a in anchors])
        ids = np.concatenate([anchors, positives])
        inputs = self.data[ids]
        candidates = []
        for i, a in enumerate(anchors):
            banned = np.isin(ids, self.neighbours[a]) | (ids == a)
            candidates.append(np.flatnonzero(~banned))
        neg = np.array([self.rng.choice(c) if len(c) else -1 for c in candidates])
        if self.strategy == "semi-hard" and model is not None:
            y = model.embed(inputs).reshape(2 * B, -1)
            for i in range(B):
                c = candidates[i]
                if not len(c):
                    continue
                d_pos = np.linalg.norm(y[i] - y[B + i])
                d_neg = np.linalg.norm(y[c] - y[i], axis=1)
                violating = d_neg < d_pos + self.margin
                if violating.any():
                    j = np.flatnonzero(violating)
                    neg[i] = c[j[np.argmin(d_neg[j])]]
        keep = neg >= 0
        rows = np.arange(B)
        batch = TripletBatch(rows[keep], (B + rows)[keep], neg[keep])
        return inputs, ids, batch


def compute_components(model: HashNet, inputs, batch: TripletBatch, w: L.LossWeights):
    y = model.catalyse(inputs)
    z = model.quantise_soft(y)
    _, b = model.quantise_hard(y)
    a, p, n = batch.anchor, batch.positive, batch.negative
    return L.LossComponents(
        tri_z=L.asymmetric_triplet_loss(nx.take(z, a), nx.take(b, p), nx.take(b, n), w.margin_z),
        tri_y=L.triplet_loss(nx.take(y, a), nx.take(y, p), nx.take(y, n), w.margin_y),
        koleo_y=L.koleo_loss(nx.take(y, a), w.eps_log),
        koleo_w=L.koleo_w_loss(model.W, w.eps_log),
        quant=L.quant_pull_loss(y, model.W),
    )


def make_optimizers(model: HashNet, lr: float = 1e-3) -> dict[str, AdamState]:
    return {
        "catalyser": AdamState(model.catalyser_params, lr=lr),
        "quantiser": AdamState(model.quantiser_params, lr=lr),
    }


def train_step(model: HashNet, inputs, batch: TripletBatch, w: L.LossWeights,
               optimizers: dict[str, AdamState]) -> dict[str, float]:
    """One update of both parameter groups; returns the loss breakdown.

    The catalyser only sees tri_z + l1 tri_y - l2 koleo_y; the quantiser
    only sees tri_z - l3 koleo_w + l4 quant.
    """
    model.train()
    comps = compute_components(model, inputs, batch, w)
    values = comps.values()
    total = L.total_objective(comps, w)
    values["total"] = total.item()
    if not all(np.isfinite(v) for v in values.values()):
        raise TrainingError(f"non-finite loss component(s): {values}")
    cat = optimizers["catalyser"]
    quant = optimizers["quantiser"]
    loss_a = L.catalyser_objective(comps, w)
    loss_b = L.quantiser_objective(comps, w)
    grads_a = nx.grad(loss_a, cat.params) if loss_a.requires_grad else [np.zeros_like(p.value) for p in cat.params]
    grads_b = nx.grad(loss_b, quant.params) if loss_b.requires_grad else [np.zeros_like(p.value) for p in quant.params]
    nx.adam_step(cat, grads_a)
    nx.adam_step(quant, grads_b)
    model.renormalize_rows()
    return values


@dataclass
class TrainConfig:
    M: int = 4
    K: int = 16
    hidden: int = 256
    layers: int = 2
    batch_size: int = 128
    epochs: int = 30
    lr: float = 1e-3
    negatives: str = "uniform"
    k_neighbours: int = 10
    val_fraction: float = 0.05
    seed: int = 0
    weights: L.LossWeights = field(default_factory=L.LossWeights)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        weights = L.LossWeights(**d.pop("weights", {}))
        return cls(weights=weights, **d)

    def to_dict(self) -> dict:
        return asdict(self)


def recall_first_neighbour(ranked: np.ndarray, truth: np.ndarray, n: int) -> float:
    hits = np.any(ranked[:, :n] == np.asarray(truth)[:, None], axis=1)
    return float(np.mean(hits))


def adc_recall(model: HashNet, queries, database, truth_first, n: int = 10) -> float:
    codes = model.encode(database)
    tables = build_adc_table(model.adc_query(queries))
    ranked = rank_scan(adc_scan(tables, codes), min(n, len(database)))
    return recall_first_neighbour(ranked, truth_first, n)


def train(data, config: TrainConfig, neighbours=None, checkpoint: str | Path | None = None,
          log_path: str | Path | None = None) -> tuple[HashNet, list[dict]]:
    """Train a HashNet on ``data``; returns the best model (by validation recall) and the log rows.

    ``neighbours`` is the k-NN table of ``data`` within itself; it is computed
    when absent. A held-out validation slice of the training points is used
    as queries against the remaining training points.
    """
    data = np.asarray(getattr(data, "data", data), dtype=np.float64)
    rng = np.random.default_rng(config.seed)
    n_val = int(round(config.val_fraction * len(data)))
    perm = rng.permutation(len(data))
    val_idx, fit_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    fit = data[fit_idx]
    if neighbours is None or n_val:
        neighbours = self_neighbours(fit, config.k_neighbours)
    val_truth = brute_force_neighbours(data[val_idx], fit, 1)[:, 0] if n_val else None

    model = HashNet(CatalyserConfig(data.shape[1], config.M, config.K, config.hidden, config.layers),
                    seed=config.seed)
    optimizers = make_optimizers(model, config.lr)
    sampler = TripletSampler(fit, neighbours, config.negatives, seed=config.seed + 1,
                             margin=config.weights.margin_y)
    rows: list[dict] = []
    best = (-1.0, None)
    steps_per_epoch = max(1, len(fit) // config.batch_size)
    step = 0

    def snapshot():
        return {k: v.copy() for k, v in model.state_arrays().items()}

    if config.epochs == 0:
        best = (0.0, snapshot())
    for epoch in range(config.epochs):
        for _ in range(steps_per_epoch):
            inputs, _, batch = sampler.sample(config.batch_size, model)
            values = train_step(model, inputs, batch, config.weights, optimizers)
            step += 1
            rows.append({"kind": "step", "epoch": epoch, "step": step, **values})
        diag = epoch_diagnostics(model, fit, data[val_idx] if n_val else None, val_truth)
        rows.append({"kind": "epoch", "epoch": epoch, "step": step, **diag})
        log.info("epoch %d: %s", epoch, diag)
        score = diag["val_recall"] if n_val else float(epoch)
        if score > best[0]:
            best = (score, snapshot())
    model.load_arrays(best[1])
    model.eval()
    if checkpoint is not None:
        save_checkpoint(checkpoint, model, optimizers, extra={"train_config": config.to_dict()})
    if log_path is not None:
        write_log(log_path, rows)
    return model, rows


def epoch_diagnostics(model: HashNet, fit, val, val_truth) -> dict:
    sample = fit[: min(len(fit), 2048)]
    y = model.embed(sample)
    z = nx.softmax(nx.block_apply(model.W.value, y), axis=-1).value
    codes = model.encode(sample)
    diag = {
        "block_entropy": L.per_sample_block_entropy(z),
        "batch_entropy": L.batch_block_entropy(z),
        "code_entropy": float(L.code_histogram_entropy(codes, model.config.K).mean()),
        "val_recall": float("nan"),
    }
    if val is not None and len(val):
        diag["val_recall"] = adc_recall(model, val, fit, val_truth, 10)
    return diag


def write_log(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k, "")) for k in LOG_COLUMNS})


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v
