"""Structured binary codes: bit packing, distances and exhaustive search.

A code is M block indices in [0, K); it stands for the concatenation of M
one-hot K-vectors. Indices are packed with ceil(log2 K) bits each, LSB first,
blocks in order, zero-padded to a whole byte.
"""

from __future__ import annotations

import numpy as np

from .data_io import CodeDatabase, bytes_per_code


def bits_per_index(K: int) -> int:
    if K < 2:
        raise ValueError(f"K must be at least 2, got {K}")
    return int(np.ceil(np.log2(K)))


def _check_codes(codes: np.ndarray, K: int) -> np.ndarray:
    codes = np.asarray(codes)
    if codes.dtype.kind not in "iu":
        raise TypeError(f"codes must be integers, got {codes.dtype}")
    if codes.size and (codes.min() < 0 or codes.max() >= K):
        raise ValueError(f"code index out of range [0, {K})")
    return codes.astype(np.int64)


def pack(codes, M: int, K: int) -> np.ndarray:
    """Pack an (M,) code or an (n, M) batch into uint8 rows."""
    codes = _check_codes(codes, K)
    single = codes.ndim == 1
    codes = np.atleast_2d(codes)
    if codes.shape[1] != M:
        raise ValueError(f"expected {M} blocks per code, got {codes.shape[1]}")
    nbits = bits_per_index(K)
    bits = (codes[:, :, None] >> np.arange(nbits)) & 1
    bits = bits.reshape(codes.shape[0], M * nbits).astype(np.uint8)
    width = bytes_per_code(M, K)
    padded = np.zeros((codes.shape[0], width * 8), dtype=np.uint8)
    padded[:, : M * nbits] = bits
    out = np.packbits(padded, axis=1, bitorder="little")
    return out[0] if single else out


def unpack(payload, M: int, K: int) -> np.ndarray:
    """Inverse of :func:`pack`."""
    payload = np.asarray(payload, dtype=np.uint8)
    single = payload.ndim == 1
    payload = np.atleast_2d(payload)
    width = bytes_per_code(M, K)
    if payload.shape[1] < width:
        raise ValueError(f"payload too short: {payload.shape[1]} bytes, need {width}")
    nbits = bits_per_index(K)
    bits = np.unpackbits(payload[:, :width], axis=1, bitorder="little")[:, : M * nbits]
    bits = bits.reshape(-1, M, nbits).astype(np.int64)
    codes = (bits << np.arange(nbits)).sum(axis=2)
    if codes.size and codes.max() >= K:
        raise ValueError(f"decoded index out of range [0, {K})")
    return codes[0] if single else codes


def make_database(codes, M: int, K: int) -> CodeDatabase:
    return CodeDatabase(M, K, pack(np.atleast_2d(codes), M, K))


def one_hot(codes, K: int) -> np.ndarray:
    """Materialise (..., M) codes as (..., M*K) concatenated one-hot vectors."""
    codes = np.asarray(codes)
    out = np.zeros(codes.shape + (K,))
    np.put_along_axis(out, codes[..., None], 1.0, axis=-1)
    return out.reshape(codes.shape[:-1] + (codes.shape[-1] * K,))


def symmetric_distance(code_a, code_b) -> float:
    """Euclidean distance between the one-hot embeddings: sqrt(2 * mismatches)."""
    a, b = np.asarray(code_a), np.asarray(code_b)
    if a.shape != b.shape:
        raise ValueError(f"code shapes differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(2.0 * np.count_nonzero(a != b)))


def build_adc_table(query) -> np.ndarray:
    """Per-block lookup table ``2 - 2 q[m, k]`` for a unit-norm (M, K) query.

    With unit-norm query blocks this is the squared distance between the
    query block and the k-th one-hot axis. A stack of (n, M, K) queries gives
    a stack of tables.
    """
    q = np.asarray(query, dtype=np.float64)
    if q.ndim not in (2, 3):
        raise ValueError(f"ADC query must be (M, K) or (n, M, K), got shape {q.shape}")
    return 2.0 - 2.0 * q


def adc_distance(query, code) -> float:
    table = build_adc_table(query)
    code = np.asarray(code)
    if table.ndim != 2:
        raise ValueError("adc_distance takes a single (M, K) query")
    if code.shape != (table.shape[0],):
        raise ValueError(f"code of shape {code.shape} does not match {table.shape[0]} blocks")
    sq = table[np.arange(table.shape[0]), code].sum()
    return float(np.sqrt(max(sq, 0.0)))


def _rank(sq: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    # stable sort keeps equal distances in ascending database order
    order = np.argsort(sq, axis=-1, kind="stable")[..., :n]
    dist = np.sqrt(np.maximum(np.take_along_axis(sq, order, axis=-1), 0.0))
    return order, dist


def symmetric_scan(query_codes, db_codes) -> np.ndarray:
    """Squared symmetric distances, (n_queries, n_db)."""
    q = np.atleast_2d(query_codes)
    db = np.asarray(db_codes)
    out = np.zeros((q.shape[0], db.shape[0]))
    for m in range(db.shape[1]):
        out += q[:, m, None] != db[None, :, m]
    return 2.0 * out


def adc_scan(tables, db_codes) -> np.ndarray:
    """Squared ADC distances from (n_queries, M, K) tables, (n_queries, n_db)."""
    tables = np.asarray(tables)
    if tables.ndim == 2:
        tables = tables[None]
    db = np.asarray(db_codes)
    out = np.zeros((tables.shape[0], db.shape[0]))
    for m in range(db.shape[1]):
        out += tables[:, m, db[:, m]]
    return out


def search(query, database, n: int, mode: str = "adc"):
    """Exhaustive top-n scan of a code database.

    ``query`` is an integer (M,) code in symmetric mode, or a real (M, K)
    block representation in ADC mode. ``database`` is a :class:`CodeDatabase`
    or an (count, M) array of codes. Returns (indices, distances).
    """
    if isinstance(database, CodeDatabase):
        K = database.K
        codes = unpack(database.payload, database.M, database.K)
    else:
        codes = np.atleast_2d(np.asarray(database))
        K = None
    if codes.shape[0] == 0:
        raise ValueError("search over an empty database")
    if not 1 <= n <= codes.shape[0]:
        raise ValueError(f"n={n} out of range for {codes.shape[0]} codes")
    query = np.asarray(query)
    if mode == "symmetric":
        if query.dtype.kind not in "iu" or query.ndim != 1:
            raise ValueError("symmetric search needs an integer (M,) code")
        sq = symmetric_scan(query[None], codes)[0]
    elif mode == "adc":
        if query.dtype.kind in "iub" or query.ndim != 2:
            raise ValueError("ADC search needs a real (M, K) query representation, not a code")
        if K is not None and query.shape != (database.M, K):
            raise ValueError(f"query shape {query.shape} does not match database ({database.M}, {K})")
        sq = adc_scan(build_adc_table(query), codes)[0]
    else:
        raise ValueError(f"unknown search mode {mode!r}")
    return _rank(sq, n)


def rank_scan(sq: np.ndarray, n: int) -> np.ndarray:
    """Top-n indices per row of a precomputed squared-distance matrix."""
    return _rank(np.atleast_2d(sq), n)[0]
