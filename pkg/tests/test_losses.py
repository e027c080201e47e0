import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group

from spherehash import losses as L
from spherehash import numerics as nx
from spherehash.numerics import Tensor

from gradcheck import REL_TOL, check_all_terms, components, small_problem


def _triplet_at(d_pos, d_neg, margin):
    a = np.zeros((1, 2))
    return L.triplet_loss(a, np.array([[d_pos, 0.0]]), np.array([[0.0, d_neg]]), margin).item()


def test_triplet_examples():
    assert _triplet_at(1.0, 2.0, 0.5) == 0.0
    assert _triplet_at(1.0, 1.2, 0.5) == pytest.approx(0.3)


def test_asymmetric_triplet_examples():
    z = np.array([[[1.0, 0.0]]])
    bp = np.array([[[1.0, 0.0]]])
    bn = np.array([[[0.0, 1.0]]])
    assert L.asymmetric_triplet_loss(z, bp, bn, 0.0).item() == 0.0
    za = Tensor(np.array([[[0.3, 0.7]]]), requires_grad=True)
    loss = L.asymmetric_triplet_loss(za, bp, bp, 0.2)
    assert loss.item() == pytest.approx(0.2)
    np.testing.assert_array_equal(nx.grad(loss, [za])[0], 0.0)
    with pytest.raises(ValueError):
        L.asymmetric_triplet_loss(z, np.array([[[0.5, 0.5]]]), bn, 0.1)


def test_asymmetric_triplet_reaches_catalyser_through_every_path():
    model, x, batch = small_problem(3)
    y = model.catalyse(x)
    z = model.quantise_soft(y)
    _, b = model.quantise_hard(y)
    a, p, n = batch.anchor, batch.positive, batch.negative
    # anchor path only
    via_z = L.asymmetric_triplet_loss(nx.take(z, a), nx.take(b.value, p), nx.take(b.value, n), 0.5)
    # hard-code paths only
    via_b = L.asymmetric_triplet_loss(nx.take(z.value, a), nx.take(b, p), nx.take(b, n), 0.5)
    w0 = model.weights[0]
    assert np.any(nx.grad(via_z, [w0])[0] != 0)
    assert np.any(nx.grad(via_b, [w0])[0] != 0)


def test_koleo_examples():
    assert L.koleo_loss(np.array([[0.0], [2.5]])).item() == pytest.approx(2 * np.log(2.5))
    assert L.koleo_loss(np.array([[0.0], [1.0], [3.0]])).item() == pytest.approx(np.log(2))
    dup = L.koleo_loss(np.array([[1.0, 1.0], [1.0, 1.0]]), eps_log=1e-10).item()
    assert dup == pytest.approx(2 * np.log(1e-10))
    with pytest.raises(ValueError):
        L.koleo_loss(np.zeros((1, 3)))


def test_koleo_w_examples():
    W = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    assert L.koleo_w_loss(W).item() == pytest.approx(np.log(2))
    v = np.array([0.6, 0.8])
    assert L.koleo_w_loss(np.array([[v, -v]])).item() == pytest.approx(2 * np.log(2))
    with pytest.raises(ValueError):
        L.koleo_w_loss(np.ones((1, 1, 2)))


def test_koleo_w_ascent_spreads_clustered_rows():
    rng = np.random.default_rng(0)
    base = rng.normal(size=4)
    rows = base + 0.05 * rng.normal(size=(6, 4))
    W = Tensor((rows / np.linalg.norm(rows, axis=1, keepdims=True))[None], requires_grad=True)
    opt = nx.AdamState([W], lr=1e-2)

    def min_gap():
        d = L._sqdist(W.value[0])
        np.fill_diagonal(d, np.inf)
        return np.sqrt(d.min())

    gaps = [min_gap()]
    for _ in range(100):
        loss = nx.mul(L.koleo_w_loss(W), -1.0)
        nx.adam_step(opt, nx.grad(loss, [W]))
        W.value = W.value / np.linalg.norm(W.value, axis=-1, keepdims=True)
        gaps.append(min_gap())
    assert gaps[-1] > gaps[0]
    # compare ten-step windows so single-step jitter between near-tied pairs is not counted
    windows = np.array(gaps[1:]).reshape(10, 10).mean(axis=1)
    assert np.all(np.diff(windows) > 0)


def test_quant_pull_examples():
    y = np.array([[[1.0, 0.0]]])
    assert L.quant_pull_loss(y, np.array([[[0.0, 1.0], [1.0, 0.0]]])).item() == 0.0
    assert L.quant_pull_loss(y, np.array([[[0.0, 1.0], [-1.0, 0.0]]])).item() == pytest.approx(np.sqrt(2))


def test_nearest_rows_matches_exhaustive_scan():
    rng = np.random.default_rng(1)
    y = rng.normal(size=(1000, 3, 8))
    y /= np.linalg.norm(y, axis=-1, keepdims=True)
    W = rng.normal(size=(3, 8, 8))
    W /= np.linalg.norm(W, axis=-1, keepdims=True)
    got = L.nearest_rows(y, W)
    for i in range(0, 1000, 7):
        for m in range(3):
            d = [np.linalg.norm(y[i, m] - W[m, k]) for k in range(8)]
            assert got[i, m] == int(np.argmin(d))


def test_entropy_examples():
    K = 8
    one_hot = np.eye(K)[None, [3]]
    uniform = np.full((1, 2, K), 1.0 / K)
    assert L.block_entropy(one_hot[0]) == 0.0
    assert L.block_entropy(uniform[0]) == pytest.approx(3.0)
    spread = np.eye(K)[:, None, :]
    assert L.per_sample_block_entropy(spread) == 0.0
    assert L.batch_block_entropy(spread) == pytest.approx(np.log2(K))


def test_total_objective_reductions():
    model, x, batch = small_problem(0)
    w0 = L.LossWeights(tri_y=0, koleo_y=0, koleo_w=0, quant=0)
    c = components(model, x, batch, w0)
    assert L.total_objective(c, w0).item() == c.tri_z.item()
    w = L.LossWeights(tri_y=0.3, koleo_y=0.2, koleo_w=0.1, quant=0.4)
    c.tri_z = Tensor(np.array(0.0))
    c.tri_y = Tensor(np.array(0.0))
    want = -0.2 * c.koleo_y.item() - 0.1 * c.koleo_w.item() + 0.4 * c.quant.item()
    assert L.total_objective(c, w).item() == pytest.approx(want)


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        L.LossWeights(tri_y=-1)
    with pytest.raises(ValueError):
        L.LossWeights(margin_z=-0.1)
    with pytest.raises(ValueError):
        L.LossWeights(eps_log=0)


def test_every_term_matches_finite_differences():
    errors, _, _ = check_all_terms(seed=0)
    assert set(errors) == {"tri_z", "tri_y", "koleo_y", "koleo_w", "quant", "total"}
    for name, err in errors.items():
        assert err < REL_TOL, (name, err)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_batch_permutation_and_isometry_invariance(seed):
    rng = np.random.default_rng(seed)
    a, p, n = rng.normal(size=(3, 10, 6))
    perm = rng.permutation(10)
    base = L.triplet_loss(a, p, n, 0.3).item()
    assert L.triplet_loss(a[perm], p[perm], n[perm], 0.3).item() == pytest.approx(base, rel=1e-12, abs=1e-12)
    Q = ortho_group.rvs(6, random_state=seed)
    t = rng.normal(size=6)
    iso = L.triplet_loss(a @ Q + t, p @ Q + t, n @ Q + t, 0.3).item()
    assert iso == pytest.approx(base, rel=1e-9, abs=1e-12)
    k = L.koleo_loss(a).item()
    assert L.koleo_loss(a[perm]).item() == pytest.approx(k, rel=1e-12)
    assert L.koleo_loss(a + t).item() == pytest.approx(k, rel=1e-9)
    c = rng.uniform(0.1, 10)
    assert L.koleo_loss(c * a).item() == pytest.approx(k + 10 * np.log(c), rel=1e-9, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_quant_pull_nonnegative_and_zero_on_rows(seed):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(2, 4, 4))
    W /= np.linalg.norm(W, axis=-1, keepdims=True)
    y = rng.normal(size=(5, 2, 4))
    y /= np.linalg.norm(y, axis=-1, keepdims=True)
    assert L.quant_pull_loss(y, W).item() >= 0
    on_rows = W[np.arange(2)[None], rng.integers(0, 4, size=(5, 2))]
    assert L.quant_pull_loss(on_rows, W).item() == pytest.approx(0.0, abs=1e-7)
    z = nx.softmax(rng.normal(size=(5, 2, 4)), axis=-1).value
    e = L.block_entropy(z[0])
    assert 0 <= e <= 2.0 + 1e-12
