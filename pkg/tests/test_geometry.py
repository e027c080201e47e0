import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from spherehash import geometry as geo


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 64), st.integers(0, 10_000))
def test_samplers_respect_domains_and_seeds(n, seed):
    s = geo.sample_simplex(n, 200, seed)
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)
    u = geo.sample_sphere(n, 200, seed)
    np.testing.assert_allclose(np.linalg.norm(u, axis=1), 1.0, atol=1e-12)
    c = geo.sample_cube(n, 200, seed)
    assert np.all((c >= 0) & (c <= 1))
    for f in geo.SAMPLERS.values():
        assert f(n, 10, seed).tobytes() == f(n, 10, seed).tobytes()


def test_sampler_errors():
    with pytest.raises(ValueError):
        geo.sample_simplex(1, 10)
    with pytest.raises(ValueError):
        geo.sample_sphere(1, 10)
    with pytest.raises(ValueError):
        geo.sample_cube(0, 10)


def test_simplex_marginal_and_mean():
    s = geo.sample_simplex(2, 100_000, seed=1)
    assert geo.ks_statistic(s[:, 0], lambda x: np.clip(x, 0, 1)) < 0.02
    n = 5
    t = geo.sample_simplex(n, 20_000, seed=2)
    # Dirichlet(1,...,1) marginal variance (n - 1) / (n^2 (n + 1))
    sigma = np.sqrt((n - 1) / (n * n * (n + 1)) / len(t))
    assert np.all(np.abs(t.mean(axis=0) - 1 / n) < 3 * sigma)


def _circle_mean_oracle():
    # chord length 2 sin(phi / 2) with phi uniform on [0, pi]
    return integrate.quad(lambda phi: 2 * np.sin(phi / 2), 0, np.pi)[0] / np.pi


def test_sphere_means():
    d = geo.independent_pair_distances("sphere", 1024, 20_000, seed=3)
    assert abs(d.mean() - np.sqrt(2)) < 0.01
    d2 = geo.independent_pair_distances("sphere", 2, 200_000, seed=4)
    assert abs(_circle_mean_oracle() - 4 / np.pi) < 1e-12
    assert abs(d2.mean() - 4 / np.pi) < 0.01


@pytest.mark.parametrize("n", [256, 1024])
def test_sphere_variance_scaling(n):
    d = geo.independent_pair_distances("sphere", n, 20_000, seed=n)
    ratio = d.var() / (1 / (2 * n))
    assert 1 / 1.25 < ratio < 1.25


def test_cube_means():
    d = geo.independent_pair_distances("cube", 1, 100_000, seed=5)
    assert abs(d.mean() - 1 / 3) < 0.005
    means = [geo.independent_pair_distances("cube", n, 100_000, seed=6).mean() for n in (1, 4, 16, 64)]
    assert np.all(np.diff(means) > 0)


def test_sphere_pdf_properties():
    d = np.linspace(0, 2, 9)
    p3 = geo.sphere_distance_pdf(d, 3)
    np.testing.assert_allclose(p3, d / 2, atol=1e-8)
    for n in (4, 8, 32):
        assert geo.sphere_distance_pdf(0.0, n) == 0.0
        assert geo.sphere_distance_pdf(2.0, n) == 0.0
        total = integrate.quad(lambda t: float(geo.sphere_distance_pdf(t, n)), 0, 2)[0]
        assert abs(total - 1) < 1e-7
    with pytest.raises(ValueError):
        geo.sphere_distance_pdf(2.1, 4)
    with pytest.raises(ValueError):
        geo.sphere_distance_pdf(-0.1, 4)


def test_sphere_ks_n16():
    d = geo.independent_pair_distances("sphere", 16, 100_000, seed=7)
    assert geo.ks_statistic(d, geo.sphere_cdf_table(16)) < 0.02
    np.testing.assert_allclose(geo.sphere_cdf_table(16)([0.7, 1.3]), geo.sphere_distance_cdf([0.7, 1.3], 16),
                               atol=1e-6)


def test_simplex_landmarks():
    lm = geo.simplex_landmarks(2)
    assert lm["vertex_to_center"] == pytest.approx(np.sqrt(0.5), abs=1e-15)
    assert lm["vertex_to_vertex"] == pytest.approx(np.sqrt(2), abs=1e-15)
    vc = [geo.simplex_landmarks(n)["vertex_to_center"] for n in range(2, 200)]
    assert np.all(np.diff(vc) > 0) and vc[-1] < 1
    for n in (3, 7, 50):
        e = np.eye(n)
        assert geo.simplex_landmarks(n)["vertex_to_center"] == pytest.approx(np.linalg.norm(e[0] - 1 / n), abs=1e-12)
        assert geo.simplex_landmarks(n)["vertex_to_vertex"] == pytest.approx(np.linalg.norm(e[0] - e[1]), abs=1e-12)


def test_simplex_mean_decreasing():
    means = [geo.independent_pair_distances("simplex", n, 50_000, seed=8).mean() for n in (4, 16, 64, 256)]
    assert np.all(np.diff(means) < 0)


def test_histogram():
    h = geo.pairwise_histogram(np.array([[0.0, 0.0], [0.3, 0.4]]), bins=5, upper=1.0)
    assert h.masses.sum() == 1.0 and h.masses[2] == 1.0
    pts = geo.sample_sphere(8, 300, seed=9)
    h = geo.pairwise_histogram(pts, bins=20, upper=2.0)
    assert h.masses.sum() == pytest.approx(1.0, abs=1e-12)
    assert h.edges[0] == 0 and h.edges[-1] == 2.0
    with pytest.raises(ValueError):
        geo.pairwise_histogram(pts[:1])


def test_pair_subsampling_is_seeded():
    pts = geo.sample_cube(3, 3000, seed=0)
    a = geo.pair_distances(pts, seed=1, max_pairs=1000)
    b = geo.pair_distances(pts, seed=1, max_pairs=1000)
    assert len(a) == 1000 and a.tobytes() == b.tobytes()
