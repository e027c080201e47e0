"""Catalyser network and learned block quantiser.

features x --(identity feature extractor)--> catalyser --> y on a product of
M unit spheres in R^K --> quantiser: z = per-block softmax(W_m y_m) at train
time, b = per-block argmax at test time.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import numerics as nx
from .data_io import FormatError, read_container, write_container
from .numerics import AdamState, BatchNormState, Tensor

CHECKPOINT_MAGIC = b"SPHC"


@dataclass(frozen=True)
class CatalyserConfig:
    d_in: int
    M: int
    K: int
    hidden: int = 256
    layers: int = 2

    def __post_init__(self):
        if self.M < 1 or self.K < 2:
            raise ValueError(f"need M >= 1 and K >= 2, got M={self.M}, K={self.K}")
        if self.d_in < 1 or self.hidden < 1 or self.layers < 0:
            raise ValueError("d_in, hidden must be positive and layers non-negative")

    @property
    def d_out(self) -> int:
        return self.M * self.K


def random_unit_rows(rng: np.random.Generator, shape) -> np.ndarray:
    w = rng.normal(size=shape)
    return w / np.linalg.norm(w, axis=-1, keepdims=True)


class HashNet:
    """Parameters and forward passes of the catalyser and the quantiser."""

    def __init__(self, config: CatalyserConfig, seed: int = 0,
                 feature_fn: Callable[[np.ndarray], np.ndarray] | None = None):
        self.config = config
        self.feature_fn = feature_fn
        rng = np.random.default_rng(seed)
        widths = [config.d_in] + [config.hidden] * config.layers + [config.d_out]
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            bound = np.sqrt(6.0 / fan_in) if i < config.layers else np.sqrt(3.0 / fan_in)
            self.weights.append(Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), True, f"fc{i}.w"))
            self.biases.append(Tensor(np.zeros(fan_out), True, f"fc{i}.b"))
        self.norms = [BatchNormState.create(config.hidden) for _ in range(config.layers)]
        for i, bn in enumerate(self.norms):
            bn.gamma.name, bn.beta.name = f"bn{i}.gamma", f"bn{i}.beta"
        self.W = Tensor(random_unit_rows(rng, (config.M, config.K, config.K)), True, "quant.W")
        self.training = True

    # parameter groups -----------------------------------------------------

    @property
    def catalyser_params(self) -> list[Tensor]:
        params = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            params += [w, b]
            if i < len(self.norms):
                params += [self.norms[i].gamma, self.norms[i].beta]
        return params

    @property
    def quantiser_params(self) -> list[Tensor]:
        return [self.W]

    def train(self, mode: bool = True) -> "HashNet":
        self.training = mode
        for bn in self.norms:
            bn.training = mode
        return self

    def eval(self) -> "HashNet":
        return self.train(False)

    def renormalize_rows(self) -> None:
        w = self.W.value
        self.W.value = w / np.maximum(np.linalg.norm(w, axis=-1, keepdims=True), nx.EPS_NORM)

    # forward --------------------------------------------------------------

    def features(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return self.feature_fn(x) if self.feature_fn is not None else x

    def catalyse(self, x, update_stats: bool = True) -> Tensor:
        """(B, d_in) inputs -> (B, M, K) embedding with unit-norm blocks."""
        x = self.features(x)
        cfg = self.config
        if x.ndim != 2 or x.shape[1] != cfg.d_in:
            raise nx.ShapeError(f"expected inputs of shape (batch, {cfg.d_in}), got {x.shape}")
        if x.shape[0] == 0:
            raise nx.ShapeError("empty batch")
        h = Tensor(x)
        for i in range(cfg.layers):
            h = nx.add(nx.matmul(h, self.weights[i]), self.biases[i])
            h = nx.relu(nx.batch_norm(h, self.norms[i], update_stats=update_stats))
        out = nx.add(nx.matmul(h, self.weights[-1]), self.biases[-1])
        return nx.l2_normalize(nx.reshape(out, (x.shape[0], cfg.M, cfg.K)), axis=-1)

    def logits(self, y) -> Tensor:
        return nx.block_linear(y, self.W)

    def quantise_soft(self, y) -> Tensor:
        return nx.softmax(self.logits(y), axis=-1)

    def quantise_hard(self, y) -> tuple[np.ndarray, Tensor]:
        """Block argmax indices and the matching straight-through one-hot tensor."""
        logits = self.logits(y)
        onehot = nx.straight_through_argmax(logits, axis=-1)
        return np.argmax(logits.value, axis=-1), onehot

    def embed(self, x, batch: int = 4096) -> np.ndarray:
        """Eval-mode embedding y as a plain array, computed in chunks."""
        x = self.features(x)
        prev = self.training
        self.eval()
        try:
            parts = [self.catalyse(x[i : i + batch]).value for i in range(0, len(x), batch)]
        finally:
            self.train(prev)
        return np.concatenate(parts) if parts else np.zeros((0, self.config.M, self.config.K))

    def encode(self, x, batch: int = 4096) -> np.ndarray:
        """(n, d_in) inputs -> (n, M) integer codes."""
        return quantise_indices(self.embed(x, batch), self.W.value)

    def adc_query(self, x) -> np.ndarray:
        """Query representation for ADC against learned codes.

        Per block this is the vector of cosines between y and each quantiser
        row, so the table entry ``2 - 2 cos`` is the squared distance from y
        to the row that code index stands for.
        """
        y = self.embed(x)
        return nx.block_apply(self.W.value, y)

    # persistence ----------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {}
        for t in self.catalyser_params + self.quantiser_params:
            arrays[t.name] = t.value
        for i, bn in enumerate(self.norms):
            arrays[f"bn{i}.running_mean"] = bn.running_mean
            arrays[f"bn{i}.running_var"] = bn.running_var
        return arrays

    def _named(self) -> dict[str, Tensor]:
        named = {}
        for t in self.catalyser_params + self.quantiser_params:
            named[t.name] = t
        return named

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self._named().items():
            if name not in arrays:
                raise FormatError(f"checkpoint lacks parameter {name!r}")
            if arrays[name].shape != t.shape:
                raise FormatError(f"parameter {name!r}: checkpoint shape {arrays[name].shape}, model {t.shape}")
            t.value = arrays[name].astype(np.float64)
        for i, bn in enumerate(self.norms):
            bn.running_mean = arrays[f"bn{i}.running_mean"].astype(np.float64)
            bn.running_var = arrays[f"bn{i}.running_var"].astype(np.float64)


def quantise_indices(y: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Block argmax of ``W_m y_m``; ties go to the lowest index."""
    return np.argmax(nx.block_apply(W, y), axis=-1)


def save_checkpoint(path, model: HashNet, optimizers: dict[str, AdamState] | None = None,
                    extra: dict | None = None) -> None:
    arrays = dict(model.state_arrays())
    opt_meta = {}
    for group, opt in (optimizers or {}).items():
        opt_meta[group] = {"t": opt.t, "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2,
                           "eps": opt.eps, "params": [p.name for p in opt.params]}
        for p, m, v in zip(opt.params, opt.m, opt.v):
            arrays[f"adam.{group}.{p.name}.m"] = m
            arrays[f"adam.{group}.{p.name}.v"] = v
    meta = {"config": asdict(model.config), "optimizers": opt_meta, "extra": extra or {}}
    write_container(path, CHECKPOINT_MAGIC, meta, arrays)


def load_checkpoint(path, config: CatalyserConfig | None = None):
    """Returns (model, optimizers, extra metadata).

    When ``config`` is given, the stored configuration must match it.
    """
    meta, arrays = read_container(path, CHECKPOINT_MAGIC)
    stored = CatalyserConfig(**meta["config"])
    if config is not None and config != stored:
        raise FormatError(f"checkpoint config {stored} does not match requested {config}")
    model = HashNet(stored)
    model.load_arrays(arrays)
    named = model._named()
    optimizers = {}
    for group, info in meta.get("optimizers", {}).items():
        params = [named[n] for n in info["params"]]
        opt = AdamState(params, lr=info["lr"], beta1=info["beta1"], beta2=info["beta2"],
                        eps=info["eps"], t=info["t"],
                        m=[arrays[f"adam.{group}.{n}.m"] for n in info["params"]],
                        v=[arrays[f"adam.{group}.{n}.v"] for n in info["params"]])
        optimizers[group] = opt
    return model, optimizers, meta.get("extra", {})
