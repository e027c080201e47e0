"""Reference hashing methods: random-hyperplane LSH, ITQ and product quantisation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data_io import read_container, squared_distances, write_container

log = logging.getLogger(__name__)

LSH_MAGIC = b"SPHL"
ITQ_MAGIC = b"SPHI"
PQ_MAGIC = b"SPHP"


def hamming_scan(query_bits, db_bits) -> np.ndarray:
    """Hamming distances between (nq, B) and (n, B) 0/1 matrices."""
    q = np.atleast_2d(query_bits).astype(np.float64)
    x = np.asarray(db_bits, dtype=np.float64)
    return q.sum(1)[:, None] + x.sum(1)[None, :] - 2.0 * q @ x.T


# --------------------------------------------------------------------------
# LSH
# --------------------------------------------------------------------------


@dataclass
class LshModel:
    mean: np.ndarray
    directions: np.ndarray  # (B, d), unit rows
    seed: int = 0

    @property
    def bits(self) -> int:
        return self.directions.shape[0]

    def encode(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return ((x - self.mean) @ self.directions.T >= 0).astype(np.uint8)

    def save(self, path) -> None:
        write_container(path, LSH_MAGIC, {"seed": self.seed},
                        {"mean": self.mean, "directions": self.directions})

    @classmethod
    def load(cls, path) -> "LshModel":
        meta, a = read_container(path, LSH_MAGIC)
        return cls(a["mean"], a["directions"], meta["seed"])


def lsh_train(data, bits: int, seed: int = 0) -> LshModel:
    if bits < 1:
        raise ValueError("LSH needs at least one bit")
    data = np.asarray(data, dtype=np.float64)
    r = np.random.default_rng(seed).normal(size=(bits, data.shape[1]))
    r /= np.linalg.norm(r, axis=1, keepdims=True)
    return LshModel(data.mean(axis=0), r, seed)


# --------------------------------------------------------------------------
# ITQ
# --------------------------------------------------------------------------


@dataclass
class ItqModel:
    mean: np.ndarray
    components: np.ndarray  # (d, B) orthonormal columns
    rotation: np.ndarray  # (B, B)
    errors: list[float] = field(default_factory=list)

    @property
    def bits(self) -> int:
        return self.rotation.shape[0]

    def project(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return (x - self.mean) @ self.components @ self.rotation

    def encode(self, x) -> np.ndarray:
        return (self.project(x) >= 0).astype(np.uint8)

    def save(self, path) -> None:
        write_container(path, ITQ_MAGIC, {"errors": self.errors},
                        {"mean": self.mean, "components": self.components, "rotation": self.rotation})

    @classmethod
    def load(cls, path) -> "ItqModel":
        meta, a = read_container(path, ITQ_MAGIC)
        return cls(a["mean"], a["components"], a["rotation"], meta["errors"])


def _signs(v: np.ndarray) -> np.ndarray:
    return np.where(v >= 0, 1.0, -1.0)


def itq_fit_rotation(v: np.ndarray, iters: int, rng: np.random.Generator,
                     rotation: np.ndarray | None = None):
    """Alternate sign assignment and orthogonal Procrustes on projected data ``v``.

    Returns the rotation and the quantisation error ||sign(VR) - VR||^2 measured
    after each rotation update (preceded by the error of the initial rotation).
    """
    b = v.shape[1]
    if rotation is None:
        rotation, _ = np.linalg.qr(rng.normal(size=(b, b)))
    errors = [float(np.sum((_signs(v @ rotation) - v @ rotation) ** 2))]
    for _ in range(iters):
        codes = _signs(v @ rotation)
        u, _, vt = np.linalg.svd(v.T @ codes)
        rotation = u @ vt
        vr = v @ rotation
        errors.append(float(np.sum((codes - vr) ** 2)))
    return rotation, errors


def itq_train(data, bits: int, iters: int = 50, seed: int = 0) -> ItqModel:
    data = np.asarray(data, dtype=np.float64)
    if data.shape[0] < bits:
        raise ValueError(f"ITQ needs at least {bits} points, got {data.shape[0]}")
    mean = data.mean(axis=0)
    centred = data - mean
    cov = centred.T @ centred / max(1, len(data) - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    rank = int(np.sum(evals > evals[0] * 1e-10)) if evals[0] > 0 else 0
    if rank < bits:
        log.warning("covariance has rank %d < %d requested bits; using %d bits", rank, bits, rank)
        bits = max(1, rank)
    components = evecs[:, :bits]
    rotation, errors = itq_fit_rotation(centred @ components, iters, np.random.default_rng(seed))
    return ItqModel(mean, components, rotation, errors)


# --------------------------------------------------------------------------
# PQ
# --------------------------------------------------------------------------


def kmeans(x: np.ndarray, k: int, iters: int, rng: np.random.Generator,
           history: list[float] | None = None) -> np.ndarray:
    """Lloyd's k-means with k-means++ seeding; empty clusters re-seeded from the farthest point."""
    n = x.shape[0]
    if n < k:
        raise ValueError(f"k-means needs at least {k} points, got {n}")
    centres = np.empty((k, x.shape[1]))
    centres[0] = x[rng.integers(n)]
    closest = ((x - centres[0]) ** 2).sum(1)
    for j in range(1, k):
        total = closest.sum()
        i = rng.choice(n, p=closest / total) if total > 0 else rng.integers(n)
        centres[j] = x[i]
        closest = np.minimum(closest, ((x - centres[j]) ** 2).sum(1))
    for _ in range(iters):
        d = squared_distances(x, centres)
        labels = np.argmin(d, axis=1)
        dist = d[np.arange(n), labels]
        if history is not None:
            history.append(float(dist.sum()))
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centres)
        np.add.at(sums, labels, x)
        for j in np.flatnonzero(counts == 0):
            far = int(np.argmax(dist))
            centres[j] = x[far]
            dist[far] = 0.0
        live = counts > 0
        centres[live] = sums[live] / counts[live, None]
    return centres


@dataclass
class PqModel:
    codebooks: np.ndarray  # (M, K, d / M)

    @property
    def M(self) -> int:
        return self.codebooks.shape[0]

    @property
    def K(self) -> int:
        return self.codebooks.shape[1]

    @property
    def bits(self) -> int:
        return self.M * int(np.ceil(np.log2(self.K)))

    def _split(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return x.reshape(x.shape[0], self.M, -1)

    def encode(self, x) -> np.ndarray:
        sub = self._split(x)
        return np.stack([np.argmin(squared_distances(sub[:, m], self.codebooks[m]), axis=1)
                         for m in range(self.M)], axis=1)

    def decode(self, codes) -> np.ndarray:
        codes = np.atleast_2d(codes)
        return np.concatenate([self.codebooks[m][codes[:, m]] for m in range(self.M)], axis=1)

    def adc_tables(self, queries, chunk: int = 128) -> np.ndarray:
        """(nq, M, K) squared sub-distances from raw queries to every centroid."""
        sub = self._split(queries)
        out = np.empty((sub.shape[0], self.M, self.K))
        # explicit differences, so a query sitting on a centroid gets exactly 0
        for i in range(0, sub.shape[0], chunk):
            diff = sub[i : i + chunk, :, None, :] - self.codebooks[None]
            out[i : i + chunk] = np.einsum("qmkd,qmkd->qmk", diff, diff)
        return out

    def adc(self, query, code) -> float:
        table = self.adc_tables(query)[0]
        return float(np.sqrt(table[np.arange(self.M), np.asarray(code)].sum()))

    def save(self, path) -> None:
        write_container(path, PQ_MAGIC, {}, {"codebooks": self.codebooks})

    @classmethod
    def load(cls, path) -> "PqModel":
        _, a = read_container(path, PQ_MAGIC)
        return cls(a["codebooks"])


def pq_train(data, M: int, K: int = 256, iters: int = 25, seed: int = 0,
             history: list[list[float]] | None = None) -> PqModel:
    data = np.asarray(data, dtype=np.float64)
    d = data.shape[1]
    if d % M:
        raise ValueError(f"dimension {d} is not divisible by {M} sub-quantisers")
    if data.shape[0] < K:
        raise ValueError(f"PQ needs at least K={K} training points, got {data.shape[0]}")
    rng = np.random.default_rng(seed)
    sub = data.reshape(len(data), M, d // M)
    books = []
    for m in range(M):
        h = [] if history is not None else None
        books.append(kmeans(sub[:, m], K, iters, rng, h))
        if history is not None:
            history.append(h)
    return PqModel(np.stack(books))
