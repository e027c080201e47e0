"""Training objectives and entropy diagnostics.

All functions take :class:`~spherehash.numerics.Tensor` inputs (plain arrays
are wrapped) and return scalar tensors, except the diagnostics which work on
plain arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Tensor

EPS_LOG = 1e-10


@dataclass
class LossWeights:
    tri_y: float = 0.1  # lambda_1
    koleo_y: float = 0.1  # lambda_2
    koleo_w: float = 0.1  # lambda_3
    quant: float = 0.1  # lambda_4
    margin_z: float = 0.1
    margin_y: float = 0.1
    eps_log: float = EPS_LOG

    def __post_init__(self):
        if min(self.tri_y, self.koleo_y, self.koleo_w, self.quant) < 0:
            raise ValueError("loss weights must be non-negative")
        if min(self.margin_z, self.margin_y) < 0:
            raise ValueError("margins must be non-negative")
        if self.eps_log <= 0:
            raise ValueError("eps_log must be positive")


def _flat(t: Tensor) -> Tensor:
    return nx.reshape(t, (t.shape[0], -1)) if t.value.ndim > 2 else t


def triplet_loss(anchor, positive, negative, margin: float) -> Tensor:
    """Mean over triplets of ``[||a - p|| - ||a - n|| + margin]_+``."""
    a, p, n = (_flat(nx.as_tensor(t)) for t in (anchor, positive, negative))
    if not a.shape == p.shape == n.shape:
        raise nx.ShapeError(f"triplet shapes differ: {a.shape}, {p.shape}, {n.shape}")
    d_pos = nx.euclidean_norm(nx.sub(a, p), axis=-1)
    d_neg = nx.euclidean_norm(nx.sub(a, n), axis=-1)
    return nx.mean(nx.hinge(nx.add(nx.sub(d_pos, d_neg), margin)))


def _check_one_hot(b: np.ndarray) -> None:
    if not (np.all((b == 0) | (b == 1)) and np.all(b.sum(axis=-1) == 1)):
        raise ValueError("binary codes must be one-hot within every block")


def asymmetric_triplet_loss(z_anchor, b_positive, b_negative, margin: float) -> Tensor:
    """Triplet hinge between a relaxed anchor code and hard positive/negative codes.

    ``b_positive`` and ``b_negative`` are (B, M, K) one-hot blocks, normally the
    output of :func:`~spherehash.numerics.straight_through_argmax` so that the
    gradient still reaches the network behind them.
    """
    bp, bn = nx.as_tensor(b_positive), nx.as_tensor(b_negative)
    _check_one_hot(bp.value)
    _check_one_hot(bn.value)
    return triplet_loss(z_anchor, bp, bn, margin)


def koleo_loss(points, eps_log: float = EPS_LOG) -> Tensor:
    """``sum_i log(max(rho_i, eps))`` with rho_i the distance to i's nearest other point.

    This is the quantity to maximise; :func:`total_objective` subtracts it.
    """
    p = _flat(nx.as_tensor(points))
    n = p.shape[0]
    if n < 2:
        raise ValueError("KoLeo needs at least 2 points")
    x = p.value
    sq = _sqdist(x)
    np.fill_diagonal(sq, np.inf)
    nearest = np.argmin(sq, axis=1)
    rho = nx.euclidean_norm(nx.sub(p, nx.take(p, nearest)), axis=-1)
    return nx.tsum(nx.log(nx.clamp_min(rho, eps_log)))


def _sqdist(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(1)
    return np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)


def koleo_w_loss(W, eps_log: float = EPS_LOG) -> Tensor:
    """KoLeo term over the rows of each quantiser block, summed over blocks."""
    W = nx.as_tensor(W)
    if W.value.ndim != 3 or W.shape[1] < 2:
        raise ValueError(f"quantiser needs (M, K, K) weights with K >= 2, got {W.shape}")
    terms = [koleo_loss(nx.take(W, m), eps_log) for m in range(W.shape[0])]
    total = terms[0]
    for t in terms[1:]:
        total = nx.add(total, t)
    return total


def nearest_rows(y: np.ndarray, W: np.ndarray) -> np.ndarray:
    """(B, M) index of the W_m row closest in Euclidean distance to each y block."""
    d = (np.sum(W * W, axis=-1)[None] - 2.0 * nx.block_apply(W, y))
    return np.argmin(d, axis=-1)


def quant_pull_loss(y, W) -> Tensor:
    """``sum_{i,m} ||y_i^(m) - w_m[nearest]||``, unsquared."""
    y, W = nx.as_tensor(y), nx.as_tensor(W)
    if y.value.ndim != 3 or W.value.ndim != 3 or y.shape[1:] != (W.shape[0], W.shape[2]):
        raise nx.ShapeError(f"quant_pull_loss: y {y.shape} incompatible with W {W.shape}")
    idx = nearest_rows(y.value, W.value)
    blocks = np.broadcast_to(np.arange(W.shape[0]), idx.shape)
    chosen = nx.take(W, (blocks, idx))
    return nx.tsum(nx.euclidean_norm(nx.sub(y, chosen), axis=-1))


def block_entropy(z) -> float:
    """Mean entropy in bits of the M blocks of one (M, K) code; 0 log 0 = 0."""
    z = np.asarray(z, dtype=np.float64)
    safe = np.where(z > 0, z, 1.0)
    return float(-np.sum(z * np.log2(safe)) / z.shape[0])


def per_sample_block_entropy(z_batch) -> float:
    z = np.asarray(z_batch, dtype=np.float64)
    return float(np.mean([block_entropy(row) for row in z]))


def batch_block_entropy(z_batch) -> float:
    """Block entropy of the batch-mean code."""
    return block_entropy(np.mean(np.asarray(z_batch, dtype=np.float64), axis=0))


def code_histogram_entropy(codes, K: int) -> np.ndarray:
    """Per-block entropy in bits of the empirical index histogram of (n, M) codes."""
    codes = np.asarray(codes)
    out = []
    for m in range(codes.shape[1]):
        p = np.bincount(codes[:, m], minlength=K) / codes.shape[0]
        p = p[p > 0]
        out.append(float(-(p * np.log2(p)).sum()))
    return np.asarray(out)


@dataclass
class LossComponents:
    tri_z: Tensor
    tri_y: Tensor
    koleo_y: Tensor
    koleo_w: Tensor
    quant: Tensor

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k).item() for k in ("tri_z", "tri_y", "koleo_y", "koleo_w", "quant")}


def total_objective(c: LossComponents, w: LossWeights) -> Tensor:
    """tri_z + l1 tri_y - l2 koleo_y - l3 koleo_w + l4 quant."""
    out = c.tri_z
    out = nx.add(out, nx.mul(c.tri_y, w.tri_y))
    out = nx.sub(out, nx.mul(c.koleo_y, w.koleo_y))
    out = nx.sub(out, nx.mul(c.koleo_w, w.koleo_w))
    return nx.add(out, nx.mul(c.quant, w.quant))


def catalyser_objective(c: LossComponents, w: LossWeights) -> Tensor:
    """Terms that train the catalyser: tri_z + l1 tri_y - l2 koleo_y."""
    return nx.sub(nx.add(c.tri_z, nx.mul(c.tri_y, w.tri_y)), nx.mul(c.koleo_y, w.koleo_y))


def quantiser_objective(c: LossComponents, w: LossWeights) -> Tensor:
    """Terms that train W: tri_z - l3 koleo_w + l4 quant."""
    return nx.add(nx.sub(c.tri_z, nx.mul(c.koleo_w, w.koleo_w)), nx.mul(c.quant, w.quant))
