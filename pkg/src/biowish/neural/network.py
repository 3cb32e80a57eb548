"""Sequential networks and the two WISHNET architectures."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .layers import (BatchNorm, Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2D, ReLU,
                     ShapeError, build_layer)

WISHNET_TF = "wishnet_tf"
WISHNET_T = "wishnet_t"

INPUT_SHAPES = {WISHNET_TF: (25, 41, 3), WISHNET_T: (3, 300, 1)}


def _ch(c: int, width: float) -> int:
    return max(1, int(round(c * width)))


def wishnet_tf_layers(width: float = 1.0, dropout: float = 0.5) -> list[Layer]:
    """Time/frequency network over a 25x41x3 log-PSD tensor; 1024-wide embedding at width 1."""
    c1, c2, c3, c4 = (_ch(c, width) for c in (128, 256, 512, 1024))
    return [
        Conv2D(3, 5, 3, c1, pad=(1, 2)), ReLU(), MaxPool2D(2, 2), Dropout(dropout),
        Conv2D(3, 5, c1, c2, pad=(1, 2)), ReLU(), MaxPool2D(2, 2),
        Conv2D(3, 5, c2, c3, pad=(1, 2)), ReLU(), MaxPool2D(2, 2), Dropout(dropout),
        Conv2D(3, 5, c3, c4, pad=(0, 0)), ReLU(),
    ]


def wishnet_t_layers(width: float = 1.0, dropout: float = 0.5) -> list[Layer]:
    """Time-domain network over a 3x300 frame; 128-wide embedding at width 1."""
    c1, c2, c3, c4, c5, c6 = (_ch(c, width) for c in (32, 32, 64, 64, 64, 128))
    return [
        Conv2D(3, 5, 1, c1), BatchNorm(c1), ReLU(), MaxPool2D(1, 2), Dropout(dropout),
        Conv2D(1, 5, c1, c2), ReLU(), MaxPool2D(1, 2), Dropout(dropout),
        Conv2D(1, 5, c2, c3), ReLU(), MaxPool2D(1, 2),
        Conv2D(1, 5, c3, c4), ReLU(), MaxPool2D(1, 2),
        Conv2D(1, 5, c4, c5), ReLU(), MaxPool2D(1, 2),
        Conv2D(1, 5, c5, c6), ReLU(),
    ]


class Network:
    """Ordered layer stack: embedding trunk, optionally followed by a softmax head.

    ``n_embed`` is the number of leading layers whose flattened output is the
    embedding. Inputs are standardized with ``input_mean``/``input_std``
    (fitted on training data) before the first layer.
    """

    def __init__(self, arch: str, layers: list[Layer], input_shape: tuple[int, ...],
                 n_embed: int | None = None, width: float = 1.0, dropout: float = 0.5,
                 dtype=np.float64):
        self.arch = arch
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.n_embed = len(layers) if n_embed is None else n_embed
        self.width = width
        self.dropout = dropout
        self.n_classes = 0
        self.mode = "eval"
        self.dtype = np.dtype(dtype)
        self.input_mean = np.zeros(1, dtype=self.dtype)
        self.input_std = np.ones(1, dtype=self.dtype)
        self.rng = np.random.default_rng(0)
        for i, layer in enumerate(layers):
            layer.index = i
        if isinstance(layers[0], Conv2D):
            layers[0].input_grad = False
        self.shapes()  # validate the chain at build time

    # -- structure ------------------------------------------------------
    def shapes(self) -> list[tuple[str, tuple[int, ...], tuple[int, ...]]]:
        out = []
        shape = self.input_shape
        for layer in self.layers:
            nxt = layer.output_shape(shape)
            out.append((layer.kind, shape, nxt))
            shape = nxt
        return out

    @property
    def embed_dim(self) -> int:
        shape = self.input_shape
        for layer in self.layers[: self.n_embed]:
            shape = layer.output_shape(shape)
        return int(np.prod(shape))

    def add_head(self, n_classes: int) -> None:
        """Append dropout and a dense softmax head on top of the embedding."""
        if self.n_classes:
            raise ValueError("network already has a head")
        head = [Flatten(), Dropout(self.dropout), Dense(self.embed_dim, n_classes)]
        for offset, layer in enumerate(head):
            layer.index = len(self.layers) + offset
        self.layers.extend(head)
        self.n_classes = n_classes

    def initialize(self, seed: int) -> None:
        """He-uniform kernels, zero biases."""
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            if isinstance(layer, (Conv2D, Dense)):
                W = layer.params["W"]
                fan_in = int(np.prod(W.shape[:-1]))
                limit = np.sqrt(6.0 / fan_in)
                layer.params["W"] = rng.uniform(-limit, limit, size=W.shape).astype(self.dtype)
                layer.params["b"] = np.zeros(W.shape[-1], dtype=self.dtype)
        self.cast(self.dtype)
        self.reseed(seed)

    def reseed(self, seed: int) -> None:
        self.rng = np.random.default_rng([seed, 1])
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.rng = self.rng

    def cast(self, dtype) -> None:
        self.dtype = np.dtype(dtype)
        for layer in self.layers:
            for store in (layer.params, layer.buffers):
                for k, v in store.items():
                    store[k] = np.asarray(v, dtype=self.dtype)
        self.input_mean = self.input_mean.astype(self.dtype)
        self.input_std = self.input_std.astype(self.dtype)

    def fit_input_normalization(self, x: np.ndarray) -> None:
        """Standardize per (height, channel) position, pooling batch and width."""
        x = np.asarray(x, dtype=np.float64)
        mean = x.mean(axis=(0, 2), keepdims=True)[0]
        std = x.std(axis=(0, 2), keepdims=True)[0]
        std[std < 1e-12] = 1.0
        self.input_mean = mean.astype(self.dtype)
        self.input_std = std.astype(self.dtype)

    # -- parameters -----------------------------------------------------
    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        """Parameters then buffers, in declaration order; the model-file blob order."""
        yield "input_mean", self.input_mean
        yield "input_std", self.input_std
        for layer in self.layers:
            for k, v in layer.params.items():
                yield f"{layer.index}.{k}", v
            for k, v in layer.buffers.items():
                yield f"{layer.index}.{k}", v

    def set_array(self, name: str, value: np.ndarray) -> None:
        if name in ("input_mean", "input_std"):
            setattr(self, name, value.astype(self.dtype))
            return
        idx, key = name.split(".", 1)
        layer = self.layers[int(idx)]
        store = layer.params if key in layer.params else layer.buffers
        store[key] = value.astype(self.dtype)

    def trainable(self) -> list[tuple[Layer, str]]:
        return [(layer, k) for layer in self.layers for k in layer.params]

    # -- computation ----------------------------------------------------
    def _prepare(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"expected input of shape (N, {self.input_shape}), got {x.shape}")
        return (x - self.input_mean) / self.input_std

    def forward(self, x: np.ndarray, train: bool = False, upto: int | None = None) -> np.ndarray:
        h = self._prepare(x)
        for layer in self.layers[:upto]:
            h = layer.forward(h, train=train)
        return h

    def backward(self, dout: np.ndarray, upto: int | None = None) -> np.ndarray | None:
        """Back-propagate ``dout``, filling every parameter gradient.

        Returns the input gradient, or None when the first layer is a
        convolution (network inputs never need a gradient).
        """
        for layer in reversed(self.layers[:upto]):
            dout = layer.backward(dout)
        return dout

    def embed(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Eval-mode embeddings, shape (N, embed_dim)."""
        x = np.asarray(x)
        parts = [
            self.forward(x[i:i + batch_size], train=False, upto=self.n_embed).reshape(
                len(x[i:i + batch_size]), -1)
            for i in range(0, len(x), batch_size)
        ]
        if not parts:
            return np.zeros((0, self.embed_dim), dtype=self.dtype)
        return np.concatenate(parts).astype(np.float64)

    def predict_proba(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        if not self.n_classes:
            raise ValueError("network has no classification head")
        x = np.asarray(x)
        out = [softmax(self.forward(x[i:i + batch_size], train=False).astype(np.float64))
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out)

    def spec(self) -> dict:
        return {
            "arch": self.arch, "width": self.width, "dropout": self.dropout,
            "input_shape": list(self.input_shape), "n_embed": self.n_embed,
            "n_classes": self.n_classes, "dtype": self.dtype.name,
            "layers": [layer.spec() for layer in self.layers],
        }

    @classmethod
    def from_spec(cls, spec: dict) -> "Network":
        layers = [build_layer(s) for s in spec["layers"]]
        net = cls(spec["arch"], layers, tuple(spec["input_shape"]), n_embed=spec["n_embed"],
                  width=spec["width"], dropout=spec["dropout"], dtype=spec["dtype"])
        net.n_classes = spec["n_classes"]
        net.cast(net.dtype)
        net.input_mean = np.zeros((1,) * (len(net.input_shape)), dtype=net.dtype)
        net.input_std = np.ones_like(net.input_mean)
        return net


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def build_network(arch: str, width: float = 1.0, dropout: float = 0.5, seed: int = 0,
                  dtype=np.float64) -> Network:
    if arch == WISHNET_TF:
        layers = wishnet_tf_layers(width, dropout)
    elif arch == WISHNET_T:
        layers = wishnet_t_layers(width, dropout)
    else:
        raise ValueError(f"unknown architecture {arch!r}")
    net = Network(arch, layers, INPUT_SHAPES[arch], width=width, dropout=dropout, dtype=dtype)
    net.initialize(seed)
    return net
