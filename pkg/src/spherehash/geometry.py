"""Pairwise-distance distributions on the simplex, the sphere and the cube."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

MAX_PAIRS = 1_000_000


def sample_simplex(n: int, count: int, seed: int = 0) -> np.ndarray:
    """Uniform points on the (n-1)-simplex in R^n: normalised unit-rate exponentials."""
    if n < 2:
        raise ValueError("simplex needs n >= 2")
    e = np.random.default_rng(seed).exponential(size=(count, n))
    return e / e.sum(axis=1, keepdims=True)


def sample_sphere(n: int, count: int, seed: int = 0) -> np.ndarray:
    """Uniform points on the unit sphere in R^n."""
    if n < 2:
        raise ValueError("sphere needs n >= 2")
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(count, n))
    norms = np.linalg.norm(g, axis=1)
    while np.any(norms == 0):
        bad = norms == 0
        g[bad] = rng.normal(size=(int(bad.sum()), n))
        norms = np.linalg.norm(g, axis=1)
    return g / norms[:, None]


def sample_cube(n: int, count: int, seed: int = 0) -> np.ndarray:
    if n < 1:
        raise ValueError("cube needs n >= 1")
    return np.random.default_rng(seed).uniform(size=(count, n))


SAMPLERS = {"simplex": sample_simplex, "sphere": sample_sphere, "cube": sample_cube}


def max_distance(shape: str, n: int) -> float:
    return {"simplex": np.sqrt(2.0), "sphere": 2.0, "cube": np.sqrt(n)}[shape]


def sphere_distance_pdf(d, n: int, normalized: bool = True):
    """Density of the distance between two uniform points on the unit sphere in R^n.

    Proportional to d^(n-2) (1 - d^2/4)^((n-3)/2) on [0, 2]; the normalised
    form divides by the integral of that expression over [0, 2].
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    d = np.asarray(d, dtype=np.float64)
    if np.any((d < 0) | (d > 2)):
        raise ValueError("distance must lie in [0, 2]")
    val = _unnormalized(d, n)
    return val / _sphere_norm(n) if normalized else val


def _unnormalized(d, n):
    with np.errstate(divide="ignore", invalid="ignore"):
        base = np.clip(1.0 - d * d / 4.0, 0.0, None)
        out = np.power(d, n - 2.0) * np.power(base, (n - 3.0) / 2.0)
    return np.where(np.isfinite(out), out, np.inf)


@lru_cache(maxsize=None)
def _sphere_norm(n: int) -> float:
    value, _ = integrate.quad(lambda t: float(_unnormalized(np.float64(t), n)), 0.0, 2.0,
                              epsrel=1e-8, limit=200)
    return value


def sphere_distance_cdf(d, n: int) -> np.ndarray:
    d = np.atleast_1d(np.asarray(d, dtype=np.float64))
    out = np.empty_like(d)
    for i, v in enumerate(d):
        v = min(max(v, 0.0), 2.0)
        out[i] = integrate.quad(lambda t: float(_unnormalized(np.float64(t), n)), 0.0, v,
                                epsrel=1e-8, limit=200)[0] / _sphere_norm(n)
    return out


def simplex_landmarks(n: int) -> dict[str, float]:
    """Vertex-to-centre and vertex-to-vertex distances of the simplex in R^n."""
    if n < 2:
        raise ValueError("n must be at least 2")
    return {"vertex_to_center": float(np.sqrt(n - 1) / np.sqrt(n)), "vertex_to_vertex": float(np.sqrt(2.0))}


@dataclass
class DistanceHistogram:
    n: int
    samples: int
    edges: np.ndarray
    masses: np.ndarray
    mean: float
    var: float


def pair_distances(points, seed: int = 0, max_pairs: int = MAX_PAIRS) -> np.ndarray:
    """Distances over all unordered pairs, or a uniform sample of ``max_pairs`` of them."""
    x = np.asarray(points, dtype=np.float64)
    m = len(x)
    if m < 2:
        raise ValueError("need at least two points")
    total = m * (m - 1) // 2
    if total <= max_pairs:
        i, j = np.triu_indices(m, k=1)
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, m, size=max_pairs)
        j = rng.integers(0, m - 1, size=max_pairs)
        j = j + (j >= i)
    return np.linalg.norm(x[i] - x[j], axis=1)


def pairwise_histogram(points, bins: int = 50, upper: float | None = None, seed: int = 0,
                       max_pairs: int = MAX_PAIRS) -> DistanceHistogram:
    d = pair_distances(points, seed, max_pairs)
    hi = upper if upper is not None else max(float(d.max()), 1e-12)
    counts, edges = np.histogram(d, bins=bins, range=(0.0, hi))
    return DistanceHistogram(np.asarray(points).shape[1], len(points), edges,
                             counts / counts.sum(), float(d.mean()), float(d.var()))


def independent_pair_distances(shape: str, n: int, pairs: int, seed: int = 0) -> np.ndarray:
    """Distances of ``pairs`` independent point pairs drawn from one shape."""
    sampler = SAMPLERS[shape]
    a = sampler(n, pairs, seed)
    b = sampler(n, pairs, seed + 1_000_003)
    return np.linalg.norm(a - b, axis=1)


def ks_statistic(samples, cdf) -> float:
    """Two-sided Kolmogorov-Smirnov distance between samples and a CDF callable."""
    x = np.sort(np.asarray(samples))
    f = cdf(x)
    m = len(x)
    return float(max(np.max(np.arange(1, m + 1) / m - f), np.max(f - np.arange(m) / m)))


def sphere_cdf_table(n: int, points: int = 2001):
    """Tabulated analytic CDF on a grid over [0, 2], returned as an interpolating callable."""
    grid = np.linspace(0.0, 2.0, points)
    cells = [integrate.quad(lambda t: float(_unnormalized(np.float64(t), n)), a, b, epsrel=1e-8)[0]
             for a, b in zip(grid[:-1], grid[1:])]
    cdf = np.concatenate([[0.0], np.cumsum(cells)]) / _sphere_norm(n)
    return lambda d: np.interp(d, grid, cdf)
