import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spherehash import numerics as nx
from spherehash.data_io import FormatError
from spherehash.network import CatalyserConfig, HashNet, load_checkpoint, quantise_indices, save_checkpoint
from spherehash.training import make_optimizers


@pytest.fixture
def model():
    return HashNet(CatalyserConfig(8, 3, 5, hidden=16), seed=2)


def test_config_validation():
    with pytest.raises(ValueError):
        CatalyserConfig(8, 0, 4)
    with pytest.raises(ValueError):
        CatalyserConfig(8, 2, 1)
    assert CatalyserConfig(8, 4, 16).d_out == 64


def test_block_norms_and_simplex(model):
    x = np.random.default_rng(0).normal(size=(40, 8))
    y = model.catalyse(x)
    assert y.shape == (40, 3, 5)
    np.testing.assert_allclose(np.linalg.norm(y.value, axis=-1), 1.0, atol=1e-9)
    z = model.quantise_soft(y).value
    assert np.all(z >= 0)
    np.testing.assert_allclose(z.sum(axis=-1), 1.0, atol=1e-9)
    idx, _ = model.quantise_hard(y)
    np.testing.assert_array_equal(idx, np.argmax(z, axis=-1))


def test_input_errors(model):
    with pytest.raises(nx.ShapeError):
        model.catalyse(np.zeros((4, 7)))
    with pytest.raises(nx.ShapeError):
        model.catalyse(np.zeros((0, 8)))


def test_all_zero_parameters_stay_finite(model):
    for t in model.weights + model.biases:
        t.value = np.zeros_like(t.value)
    y = model.catalyse(np.ones((4, 8))).value
    np.testing.assert_array_equal(y, 0.0)


def test_final_layer_normalisation():
    net = HashNet(CatalyserConfig(2, 1, 4, hidden=4), seed=0)
    net.weights[-1].value = np.zeros_like(net.weights[-1].value)
    net.biases[-1].value = np.array([3.0, 4.0, 0.0, 0.0])
    y = net.catalyse(np.random.default_rng(0).normal(size=(3, 2))).value
    np.testing.assert_allclose(y[:, 0], [[0.6, 0.8, 0.0, 0.0]] * 3)


def test_first_hidden_batch_mean(model):
    x = np.random.default_rng(1).normal(size=(64, 8)) * 4 + 2
    pre = x @ model.weights[0].value + model.biases[0].value
    normed = nx.batch_norm(pre, nx.BatchNormState.create(16)).value
    assert np.all(np.abs(normed.mean(axis=0)) < 1e-6)


def test_quantise_examples():
    net = HashNet(CatalyserConfig(2, 1, 3, hidden=4), seed=0)
    net.W.value = np.eye(3)[None]
    y = np.array([[[0.0, 1.0, 0.0]]])
    z = net.quantise_soft(y).value
    np.testing.assert_allclose(z[0, 0], nx.softmax(np.array([0.0, 1.0, 0.0])).value)
    assert np.argmax(z) == 1
    eq = np.ones((1, 1, 3)) / np.sqrt(3)
    np.testing.assert_allclose(net.quantise_soft(eq).value, 1 / 3)
    logits_y = np.array([[[0.2, 0.9, -0.1]]])
    assert net.quantise_hard(logits_y)[0][0, 0] == 1
    assert net.quantise_hard(np.zeros((1, 1, 3)))[0][0, 0] == 0


def test_argmax_is_smallest_angle(model):
    rng = np.random.default_rng(3)
    y = rng.normal(size=(1000, 3, 5))
    y /= np.linalg.norm(y, axis=-1, keepdims=True)
    soft = np.argmax(model.quantise_soft(y).value, axis=-1)
    hard, _ = model.quantise_hard(y)
    np.testing.assert_array_equal(soft, hard)
    W = model.W.value
    for i in range(0, 1000, 11):
        for m in range(3):
            angles = [np.arccos(np.clip(W[m, k] @ y[i, m], -1, 1)) for k in range(5)]
            assert hard[i, m] == int(np.argmin(angles))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_scale_invariant_decisions(seed, c):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(2, 4, 4))
    W /= np.linalg.norm(W, axis=-1, keepdims=True)
    y = rng.normal(size=(6, 2, 4))
    y /= np.linalg.norm(y, axis=-1, keepdims=True)
    np.testing.assert_array_equal(quantise_indices(y, W), quantise_indices(c * y, W))


def test_renormalisation_is_noop_on_unit_rows(model):
    y = model.embed(np.random.default_rng(0).normal(size=(50, 8)))
    before = quantise_indices(y, model.W.value)
    model.renormalize_rows()
    np.testing.assert_array_equal(before, quantise_indices(y, model.W.value))
    np.testing.assert_allclose(np.linalg.norm(model.W.value, axis=-1), 1.0, atol=1e-12)


def test_checkpoint_roundtrip(tmp_path, model):
    x = np.random.default_rng(0).normal(size=(30, 8))
    model.catalyse(x)  # moves the running statistics
    opts = make_optimizers(model)
    for opt in opts.values():
        nx.adam_step(opt, [np.ones_like(p.value) for p in opt.params])
    model.eval()
    save_checkpoint(tmp_path / "m.sphc", model, opts, extra={"note": "x"})
    back, back_opts, extra = load_checkpoint(tmp_path / "m.sphc")
    assert extra == {"note": "x"}
    for k, v in model.state_arrays().items():
        assert back.state_arrays()[k].tobytes() == v.tobytes()
    for g in opts:
        assert back_opts[g].t == opts[g].t
        for a, b in zip(opts[g].m + opts[g].v, back_opts[g].m + back_opts[g].v):
            np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(back.encode(x), model.encode(x))


def test_checkpoint_errors(tmp_path, model):
    path = tmp_path / "m.sphc"
    save_checkpoint(path, model)
    with pytest.raises(FormatError):
        load_checkpoint(path, CatalyserConfig(8, 3, 4, hidden=16))
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    (tmp_path / "bad.sphc").write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "bad.sphc")


def test_feature_hook():
    net = HashNet(CatalyserConfig(4, 2, 4, hidden=8), seed=0, feature_fn=lambda x: x[:, :4])
    assert net.encode(np.ones((3, 10))).shape == (3, 2)
