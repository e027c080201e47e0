"""BigANN vector files, dataset splits, exact ground truth and code databases.

Record layout of ``.fvecs`` / ``.bvecs`` / ``.ivecs``: a little-endian int32
dimension followed by that many float32 / uint8 / int32 values. Every file
here is little-endian regardless of host byte order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CODE_DB_MAGIC = b"SPH1"


class FormatError(ValueError):
    """Malformed vector, code or checkpoint file."""


@dataclass
class VectorSet:
    data: np.ndarray  # (count, dim) float64

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.count


def _read_records(path, item_dtype: np.dtype) -> np.ndarray:
    buf = Path(path).read_bytes()
    if not buf:
        return np.zeros((0, 0), dtype=item_dtype)
    if len(buf) < 4:
        raise FormatError(f"{path}: truncated record at byte offset 0")
    (dim,) = struct.unpack_from("<i", buf, 0)
    if dim <= 0:
        raise FormatError(f"{path}: non-positive dimension {dim} at byte offset 0")
    record = 4 + dim * item_dtype.itemsize
    count, tail = divmod(len(buf), record)
    if tail:
        raise FormatError(f"{path}: truncated record at byte offset {count * record}")
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(count, record)
    dims = raw[:, :4].copy().view("<i4").ravel()
    bad = np.flatnonzero(dims != dim)
    if bad.size:
        i = int(bad[0])
        raise FormatError(
            f"{path}: record {i} at byte offset {i * record} declares dim {dims[i]}, expected {dim}"
        )
    return raw[:, 4:].copy().view(item_dtype).reshape(count, dim)


def _write_records(path, values: np.ndarray, item_dtype: np.dtype) -> None:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError(f"expected a 2-D table, got shape {values.shape}")
    count, dim = values.shape
    header = np.full((count, 1), dim, dtype="<i4").view(np.uint8)
    body = np.ascontiguousarray(values.astype(item_dtype)).view(np.uint8).reshape(count, -1)
    Path(path).write_bytes(np.hstack([header, body]).tobytes())


def _validated(data: np.ndarray, path) -> VectorSet:
    data = data.astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: non-finite values")
    return VectorSet(data)


def read_fvecs(path) -> VectorSet:
    return _validated(_read_records(path, np.dtype("<f4")), path)


def read_bvecs(path) -> VectorSet:
    return _validated(_read_records(path, np.dtype("u1")), path)


def read_ivecs(path) -> np.ndarray:
    return _read_records(path, np.dtype("<i4")).astype(np.int64)


def write_fvecs(path, data) -> None:
    _write_records(path, data, np.dtype("<f4"))


def write_bvecs(path, data) -> None:
    data = np.asarray(data)
    if data.size and (data.min() < 0 or data.max() > 255):
        raise ValueError("bvecs values must lie in [0, 255]")
    _write_records(path, data, np.dtype("u1"))


def write_ivecs(path, table) -> None:
    """Write a neighbour table; every row must have the same length."""
    if not isinstance(table, np.ndarray):
        lengths = {len(row) for row in table}
        if len(lengths) > 1:
            raise ValueError(f"ivecs rows must share one length, got {sorted(lengths)}")
        table = np.asarray(table, dtype=np.int64).reshape(len(table), -1)
    _write_records(path, table, np.dtype("<i4"))


def read_vectors(path) -> VectorSet:
    suffix = Path(path).suffix
    if suffix == ".fvecs":
        return read_fvecs(path)
    if suffix == ".bvecs":
        return read_bvecs(path)
    raise FormatError(f"{path}: unsupported vector file extension {suffix!r}")


# --------------------------------------------------------------------------
# ground truth and splits
# --------------------------------------------------------------------------


def squared_distances(queries: np.ndarray, database: np.ndarray) -> np.ndarray:
    q = np.asarray(queries, dtype=np.float64)
    x = np.asarray(database, dtype=np.float64)
    d = (q * q).sum(1)[:, None] + (x * x).sum(1)[None, :] - 2.0 * q @ x.T
    return np.maximum(d, 0.0)


def brute_force_neighbours(queries, database, k: int, chunk: int = 256) -> np.ndarray:
    """Exact k nearest database rows per query, ties to the lower index.

    Candidates come from the expanded-square distance; their final order is
    settled on directly recomputed distances so rounding in the expansion
    cannot reorder near-ties.
    """
    q = np.asarray(getattr(queries, "data", queries), dtype=np.float64)
    x = np.asarray(getattr(database, "data", database), dtype=np.float64)
    if q.ndim != 2 or x.ndim != 2 or q.shape[1] != x.shape[1]:
        raise ValueError(f"dimension mismatch: queries {q.shape}, database {x.shape}")
    if not 1 <= k <= x.shape[0]:
        raise ValueError(f"k={k} out of range for a database of {x.shape[0]} rows")
    out = np.empty((q.shape[0], k), dtype=np.int64)
    extra = min(x.shape[0], k + 16)
    for start in range(0, q.shape[0], chunk):
        block = q[start : start + chunk]
        d = squared_distances(block, x)
        cand = np.argpartition(d, extra - 1, axis=1)[:, :extra] if extra < x.shape[0] else None
        for i, row in enumerate(block):
            idx = np.arange(x.shape[0]) if cand is None else np.sort(cand[i])
            exact = ((x[idx] - row) ** 2).sum(1)
            order = np.lexsort((idx, exact))[:k]
            out[start + i] = idx[order]
    return out


def self_neighbours(data, k: int) -> np.ndarray:
    """k nearest neighbours of each row within the same set, excluding itself."""
    x = np.asarray(getattr(data, "data", data), dtype=np.float64)
    full = brute_force_neighbours(x, x, min(k + 1, x.shape[0]))
    rows = []
    for i, row in enumerate(full):
        rows.append(row[row != i][:k])
    return np.asarray(rows, dtype=np.int64)


def split_dataset(data, sizes: tuple[int, int, int], seed: int):
    """Disjoint random (train, query, database) subsets of the rows of ``data``.

    Returns the three arrays and the three index arrays used to cut them.
    """
    x = np.asarray(getattr(data, "data", data))
    if any(s < 0 for s in sizes) or sum(sizes) > x.shape[0]:
        raise ValueError(f"split sizes {tuple(sizes)} exceed {x.shape[0]} available rows")
    perm = np.random.default_rng(seed).permutation(x.shape[0])
    edges = np.cumsum(sizes)
    parts = np.split(perm[: edges[-1]], edges[:-1])
    return [x[p] for p in parts], parts


def gaussian_mixture(count: int, dim: int = 128, clusters: int = 64, seed: int = 0) -> np.ndarray:
    """Synthetic SIFT-like data: non-negative anisotropic Gaussian clusters.

    Each cluster has its own random low-rank-plus-diagonal covariance so that
    neighbourhoods are not isotropic.
    """
    rng = np.random.default_rng(seed)
    centres = rng.gamma(2.0, 10.0, size=(clusters, dim))
    rank = 8
    factors = rng.normal(0.0, 6.0, size=(clusters, dim, rank))
    weights = rng.dirichlet(np.full(clusters, 5.0))
    labels = rng.choice(clusters, size=count, p=weights)
    latent = rng.normal(size=(count, rank))
    noise = rng.normal(0.0, 3.0, size=(count, dim))
    x = centres[labels] + np.einsum("ndr,nr->nd", factors[labels], latent) + noise
    return np.clip(x, 0.0, None)


# --------------------------------------------------------------------------
# packed code databases
# --------------------------------------------------------------------------


@dataclass
class CodeDatabase:
    M: int
    K: int
    payload: np.ndarray  # (count, bytes_per_code) uint8

    @property
    def count(self) -> int:
        return self.payload.shape[0]


def bytes_per_code(M: int, K: int) -> int:
    bits = max(1, int(np.ceil(np.log2(K))))
    return (M * bits + 7) // 8


def write_code_database(path, db: CodeDatabase) -> None:
    header = CODE_DB_MAGIC + struct.pack("<III", db.M, db.K, db.count)
    Path(path).write_bytes(header + np.ascontiguousarray(db.payload, dtype=np.uint8).tobytes())


def read_code_database(path) -> CodeDatabase:
    buf = Path(path).read_bytes()
    if len(buf) < 16 or buf[:4] != CODE_DB_MAGIC:
        raise FormatError(f"{path}: not a code database (bad magic)")
    M, K, count = struct.unpack_from("<III", buf, 4)
    width = bytes_per_code(M, K)
    if len(buf) - 16 != count * width:
        raise FormatError(f"{path}: payload holds {len(buf) - 16} bytes, expected {count * width}")
    payload = np.frombuffer(buf, dtype=np.uint8, offset=16).reshape(count, width).copy()
    return CodeDatabase(M, K, payload)


# --------------------------------------------------------------------------
# parameter containers (checkpoints for the network and the baselines)
# --------------------------------------------------------------------------

CONTAINER_VERSION = 1


def write_container(path, magic: bytes, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """magic, u32 version, u32 header length, JSON header, raw little-endian arrays."""
    manifest = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dtype = "<f8" if arr.dtype.kind == "f" else "<i8"
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        blobs.append(np.ascontiguousarray(arr.astype(dtype)).tobytes())
    header = json.dumps({"meta": meta, "arrays": manifest}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(magic + struct.pack("<II", CONTAINER_VERSION, len(header)) + header)
        for blob in blobs:
            fh.write(blob)


def read_container(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:4] != magic:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}, expected {magic!r}")
    version, hlen = struct.unpack_from("<II", buf, 4)
    if version != CONTAINER_VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    try:
        header = json.loads(buf[12 : 12 + hlen])
    except ValueError as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    arrays = {}
    offset = 12 + hlen
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        n = int(np.prod(entry["shape"], dtype=np.int64))
        end = offset + n * dtype.itemsize
        if end > len(buf):
            raise FormatError(f"{path}: payload truncated in array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(buf[offset:end], dtype=dtype).reshape(entry["shape"]).copy()
        offset = end
    if offset != len(buf):
        raise FormatError(f"{path}: {len(buf) - offset} trailing bytes")
    return header["meta"], arrays
