"""Layer primitives with hand-written backward passes.

Activations use NHWC layout: ``(batch, height, width, channels)``. Every layer
caches what its backward pass needs during ``forward(..., train=True)``; the
cache is overwritten on the next forward call, so one layer instance serves
one forward/backward pair at a time.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when a layer receives an input it cannot process."""


class Layer:
    kind = "Layer"

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.index = -1

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return shape

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> dict:
        return {"kind": self.kind}

    def _fail(self, msg: str) -> ShapeError:
        return ShapeError(f"layer {self.index} ({self.kind}): {msg}")


class Conv2D(Layer):
    """Stride-1 convolution with symmetric zero padding.

    Kernel shape is ``(kh, kw, c_in, c_out)``. With ``input_grad`` off the
    backward pass only fills parameter gradients and returns None (used for
    a network's first layer, whose input needs no gradient).
    """

    kind = "Conv2D"

    def __init__(self, kh: int, kw: int, c_in: int, c_out: int, pad=(0, 0)) -> None:
        super().__init__()
        self.kh, self.kw, self.c_in, self.c_out = kh, kw, c_in, c_out
        self.pad = (int(pad[0]), int(pad[1]))
        self.params["W"] = np.zeros((kh, kw, c_in, c_out))
        self.params["b"] = np.zeros(c_out)
        self.input_grad = True

    def output_shape(self, shape):
        h, w, c = shape
        ph, pw = self.pad
        if c != self.c_in:
            raise self._fail(f"expected {self.c_in} input channels, got {c}")
        if self.kh > h + 2 * ph or self.kw > w + 2 * pw:
            raise self._fail(f"kernel {self.kh}x{self.kw} larger than padded input {h}x{w}")
        return (h + 2 * ph - self.kh + 1, w + 2 * pw - self.kw + 1, self.c_out)

    def forward(self, x, train=False):
        n = x.shape[0]
        ho, wo, _ = self.output_shape(x.shape[1:])
        ph, pw = self.pad
        if ph or pw:
            x = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
        win = sliding_window_view(x, (self.kh, self.kw), axis=(1, 2))
        # (n, ho, wo, c, kh, kw) -> rows ordered (kh, kw, c) to match the kernel
        col = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, -1)
        W = self.params["W"]
        out = col @ W.reshape(-1, self.c_out) + self.params["b"]
        if train:
            self._cache = (col, x.shape)
        return out.reshape(n, ho, wo, self.c_out)

    def backward(self, dout):
        col, padded_shape = self._cache
        n, ho, wo, _ = dout.shape
        d = dout.reshape(-1, self.c_out)
        W = self.params["W"]
        self.grads["W"] = (col.T @ d).reshape(W.shape)
        self.grads["b"] = d.sum(axis=0)
        if not self.input_grad:
            return None
        dcol = (d @ W.reshape(-1, self.c_out).T).reshape(n, ho, wo, self.kh, self.kw, self.c_in)
        dx = np.zeros(padded_shape, dtype=dout.dtype)
        for i in range(self.kh):
            for j in range(self.kw):
                dx[:, i:i + ho, j:j + wo, :] += dcol[:, :, :, i, j, :]
        ph, pw = self.pad
        return dx[:, ph:padded_shape[1] - ph, pw:padded_shape[2] - pw, :]

    def spec(self):
        return {"kind": self.kind, "kernel": [self.kh, self.kw, self.c_in, self.c_out],
                "pad": list(self.pad)}


class MaxPool2D(Layer):
    """Non-overlapping max pooling; trailing rows/columns that do not fill a window are dropped."""

    kind = "MaxPool2D"

    def __init__(self, p: int, q: int) -> None:
        super().__init__()
        self.p, self.q = p, q

    def output_shape(self, shape):
        h, w, c = shape
        if self.p > h or self.q > w:
            raise self._fail(f"pool {self.p}x{self.q} larger than input {h}x{w}")
        return (h // self.p, w // self.q, c)

    def forward(self, x, train=False):
        n, h, w, c = x.shape
        ho, wo, _ = self.output_shape((h, w, c))
        p, q = self.p, self.q
        blocks = x[:, :ho * p, :wo * q, :].reshape(n, ho, p, wo, q, c)
        views = [blocks[:, :, i, :, j, :] for i in range(p) for j in range(q)]
        out = views[0]
        for v in views[1:]:
            out = np.maximum(out, v)
        if train:
            # one-hot mask of the first maximum in each window (ties -> lowest index)
            taken = np.zeros(out.shape, dtype=bool)
            masks = []
            for v in views:
                m = (v == out) & ~taken
                taken |= m
                masks.append(m)
            self._cache = (masks, x.shape)
        return out

    def backward(self, dout):
        masks, in_shape = self._cache
        n, h, w, c = in_shape
        ho, wo = dout.shape[1:3]
        p, q = self.p, self.q
        dblocks = np.zeros((n, ho, p, wo, q, c), dtype=dout.dtype)
        k = 0
        for i in range(p):
            for j in range(q):
                dblocks[:, :, i, :, j, :] = dout * masks[k]
                k += 1
        dx = np.zeros(in_shape, dtype=dout.dtype)
        dx[:, :ho * p, :wo * q, :] = dblocks.reshape(n, ho * p, wo * q, c)
        return dx

    def spec(self):
        return {"kind": self.kind, "pool": [self.p, self.q]}


class BatchNorm(Layer):
    """Per-channel batch normalization over (batch, height, width)."""

    kind = "BatchNorm"

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5) -> None:
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)

    def output_shape(self, shape):
        if shape[-1] != self.channels:
            raise self._fail(f"expected {self.channels} channels, got {shape[-1]}")
        return shape

    def forward(self, x, train=False):
        gamma, beta = self.params["gamma"], self.params["beta"]
        if not train:
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            return gamma * (x - rm) / np.sqrt(rv + self.eps) + beta
        if x.shape[0] < 2:
            raise self._fail("batch of 1 in train mode")
        axes = tuple(range(x.ndim - 1))
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        m = self.momentum
        self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * mean
        self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * var
        self._cache = (xhat, inv_std)
        return gamma * xhat + beta

    def backward(self, dout):
        xhat, inv_std = self._cache
        axes = tuple(range(dout.ndim - 1))
        count = dout.size // dout.shape[-1]
        self.grads["gamma"] = (dout * xhat).sum(axis=axes)
        self.grads["beta"] = dout.sum(axis=axes)
        dxhat = dout * self.params["gamma"]
        return (inv_std / count) * (
            count * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes)
        )

    def spec(self):
        return {"kind": self.kind, "channels": self.channels, "momentum": self.momentum,
                "eps": self.eps}


class ReLU(Layer):
    kind = "ReLU"

    def forward(self, x, train=False):
        if train:
            self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dout):
        return dout * self._mask


class Dropout(Layer):
    """Inverted dropout. Needs ``rng`` to be attached before training."""

    kind = "Dropout"

    def __init__(self, p: float = 0.5) -> None:
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self.rng: np.random.Generator | None = None

    def forward(self, x, train=False):
        if not train or self.p == 0.0:
            self._mask = None
            return x
        keep = self.rng.random(x.shape) >= self.p
        self._mask = (keep / (1.0 - self.p)).astype(x.dtype, copy=False)
        return x * self._mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask

    def spec(self):
        return {"kind": self.kind, "p": self.p}


class Flatten(Layer):
    kind = "Flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Dense(Layer):
    kind = "Dense"

    def __init__(self, n_in: int, n_out: int) -> None:
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.params["W"] = np.zeros((n_in, n_out))
        self.params["b"] = np.zeros(n_out)

    def output_shape(self, shape):
        if shape != (self.n_in,):
            raise self._fail(f"expected ({self.n_in},) input, got {shape}")
        return (self.n_out,)

    def forward(self, x, train=False):
        if train:
            self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        self.grads["W"] = self._x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"].T

    def spec(self):
        return {"kind": self.kind, "units": [self.n_in, self.n_out]}


def build_layer(spec: dict) -> Layer:
    kind = spec["kind"]
    if kind == "Conv2D":
        kh, kw, ci, co = spec["kernel"]
        return Conv2D(kh, kw, ci, co, pad=spec["pad"])
    if kind == "MaxPool2D":
        return MaxPool2D(*spec["pool"])
    if kind == "BatchNorm":
        return BatchNorm(spec["channels"], spec.get("momentum", 0.1), spec.get("eps", 1e-5))
    if kind == "ReLU":
        return ReLU()
    if kind == "Dropout":
        return Dropout(spec["p"])
    if kind == "Flatten":
        return Flatten()
    if kind == "Dense":
        return Dense(*spec["units"])
    raise ValueError(f"unknown layer kind {kind!r}")
