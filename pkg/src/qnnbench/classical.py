"""Classical models: random dense nets, CNNs with depthwise layers, and the dense-softmax baseline.

All models expose the same small interface used by the trainer:
``n_params``, ``init_params(rng)``, ``predict(X, flat)`` and
``value_and_grad(X, flat, upstream_fn)``. Parameters are one flat float vector;
each model documents its layout in ``unflatten``.

Image tensors are ``(batch, height, width, channels)``. Flattening before a
dense head is height-major, then width, then channel (C order).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuits import ShapeError

SCHEMA_VERSION = 1


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax(z):
    z = np.asarray(z, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(p, dp):
    """Chain ``dL/dp`` through softmax to ``dL/dz``."""
    return p * (dp - np.sum(dp * p, axis=-1, keepdims=True))


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


# ------------------------------------------------------------------- dense nets


@dataclass(frozen=True)
class DenseNetArchitecture:
    input_dim: int
    hidden: tuple[int, ...]
    seed: int | None = None

    @property
    def n_layers(self) -> int:
        return len(self.hidden)

    @property
    def layer_sizes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden, 1]
        return list(zip(dims[:-1], dims[1:]))

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "kind": "dense", "input_dim": self.input_dim,
                "hidden": list(self.hidden), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "DenseNetArchitecture":
        return cls(d["input_dim"], tuple(d["hidden"]), d.get("seed"))


def dense_param_count(arch: DenseNetArchitecture) -> int:
    return sum(i * o + o for i, o in arch.layer_sizes)


def sample_random_dense(d: int, rng_seed: int) -> DenseNetArchitecture:
    rng = np.random.default_rng(rng_seed)
    n_layers = int(rng.integers(1, 5))
    hidden = tuple(int(v) for v in rng.integers(2, 5, size=n_layers))
    return DenseNetArchitecture(d, hidden, seed=int(rng_seed))


class DenseNet:
    """Affine/ReLU stack with a single sigmoid output neuron."""

    output_kind = "score"

    def __init__(self, arch: DenseNetArchitecture):
        self.arch = arch
        self.n_params = dense_param_count(arch)

    def unflatten(self, flat) -> list[tuple[np.ndarray, np.ndarray]]:
        """Layout: for each layer, ``W`` (fan_in x fan_out, row-major) then ``b``."""
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} weights, got {flat.shape}")
        out, pos = [], 0
        for i, o in self.arch.layer_sizes:
            W = flat[pos:pos + i * o].reshape(i, o)
            pos += i * o
            out.append((W, flat[pos:pos + o]))
            pos += o
        return out

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        parts = []
        for i, o in self.arch.layer_sizes:
            parts += [glorot_uniform(rng, i, o, i * o), np.zeros(o)]
        return np.concatenate(parts)

    def _forward(self, X, flat):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.arch.input_dim:
            raise ShapeError(f"expected inputs of dimension {self.arch.input_dim}, got {X.shape[1]}")
        layers = self.unflatten(flat)
        acts = [X]
        h = X
        for k, (W, b) in enumerate(layers):
            z = h @ W + b
            h = relu(z) if k < len(layers) - 1 else sigmoid(z)
            acts.append(h)
        return layers, acts

    def predict(self, X, flat) -> np.ndarray:
        return self._forward(X, flat)[1][-1][:, 0]

    def value_and_grad(self, X, flat, upstream_fn):
        layers, acts = self._forward(X, flat)
        y = acts[-1][:, 0]
        loss, dy = upstream_fn(y)
        delta = (dy * y * (1.0 - y))[:, None]
        grads = []
        for k in range(len(layers) - 1, -1, -1):
            W, _ = layers[k]
            grads.append((acts[k].T @ delta, delta.sum(axis=0)))
            if k:
                delta = (delta @ W.T) * (acts[k] > 0)
        flat_grad = np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in reversed(grads)])
        return loss, y, flat_grad


def dense_forward(arch: DenseNetArchitecture, weights, x) -> float:
    return float(DenseNet(arch).predict(np.asarray(x, dtype=float)[None, :], weights)[0])


# ---------------------------------------------------------------- convolutions


def pad_amounts(size: int, k: int) -> tuple[int, int]:
    """Zero padding up to the next multiple of ``k``, split evenly with the extra on the far side."""
    total = (-size) % k
    return total // 2, total - total // 2


def pad_to_multiple(images: np.ndarray, k: int) -> np.ndarray:
    """Pad axes 1 and 2 of ``(batch, H, W, ...)`` so both are multiples of ``k``."""
    top, bottom = pad_amounts(images.shape[1], k)
    left, right = pad_amounts(images.shape[2], k)
    widths = [(0, 0), (top, bottom), (left, right)] + [(0, 0)] * (images.ndim - 3)
    return np.pad(images, widths)


def padded_shape(shape: tuple[int, int], k: int) -> tuple[int, int]:
    h, w = shape
    return h + sum(pad_amounts(h, k)), w + sum(pad_amounts(w, k))


def conv_output_shape(shape: tuple[int, int], k: int, stride: int) -> tuple[int, int]:
    h, w = shape
    if (h - k) % stride or (w - k) % stride or h < k or w < k:
        raise ShapeError(f"input {shape} incompatible with filter {k} and stride {stride}")
    return (h - k) // stride + 1, (w - k) // stride + 1


def conv2d(x: np.ndarray, filters: np.ndarray, stride: int, padding: str = "none", bias=None) -> np.ndarray:
    """Strided cross-correlation, ``out[i,j,f] = sum_{m,n,c} x[i*s+m, j*s+n, c] K[m,n,c,f] (+ b[f])``.

    ``x`` is ``(H, W, C)`` or batched ``(B, H, W, C)``; ``filters`` is ``(k, k, C, F)``.
    ``padding`` is ``"none"`` or ``"multiple"`` (zero-pad to a multiple of ``k``).
    """
    batched = x.ndim == 4
    X = x if batched else x[None]
    k = filters.shape[0]
    if filters.shape[2] != X.shape[3]:
        raise ShapeError(f"filter expects {filters.shape[2]} channels, input has {X.shape[3]}")
    if padding == "multiple":
        X = pad_to_multiple(X, k)
    elif padding != "none":
        raise ValueError(f"unknown padding policy {padding!r}")
    out = _conv_forward(X, filters, stride)
    if bias is not None:
        out = out + bias
    return out if batched else out[0]


def _conv_forward(X, K, stride):
    k = K.shape[0]
    ho, wo = conv_output_shape(X.shape[1:3], k, stride)
    out = np.zeros((X.shape[0], ho, wo, K.shape[3]))
    for m in range(k):
        for n in range(k):
            xs = X[:, m:m + stride * (ho - 1) + 1:stride, n:n + stride * (wo - 1) + 1:stride, :]
            out += xs @ K[m, n]
    return out


def _conv_backward(X, K, stride, dout):
    k = K.shape[0]
    ho, wo = dout.shape[1:3]
    dK = np.zeros_like(K)
    dX = np.zeros_like(X)
    for m in range(k):
        for n in range(k):
            sl = (slice(None), slice(m, m + stride * (ho - 1) + 1, stride),
                  slice(n, n + stride * (wo - 1) + 1, stride), slice(None))
            dK[m, n] = np.einsum("bhwc,bhwf->cf", X[sl], dout)
            dX[sl] += dout @ K[m, n].T
    return dK, dX


def _same_pad(k: int) -> tuple[int, int]:
    return (k - 1) // 2, k - 1 - (k - 1) // 2


def depthwise_conv(x: np.ndarray, filters: np.ndarray, bias=None) -> np.ndarray:
    """Stride-1, size-preserving depthwise convolution: channel ``c`` is filtered by ``filters[:, :, c]``."""
    batched = x.ndim == 4
    X = x if batched else x[None]
    if filters.shape[2] != X.shape[3]:
        raise ShapeError(f"{filters.shape[2]} depthwise filters for {X.shape[3]} channels")
    out = _depthwise_forward(X, filters)
    if bias is not None:
        out = out + bias
    return out if batched else out[0]


def _depthwise_forward(X, K):
    k = K.shape[0]
    a, b = _same_pad(k)
    Xp = np.pad(X, [(0, 0), (a, b), (a, b), (0, 0)])
    H, W = X.shape[1:3]
    out = np.zeros_like(X, dtype=float)
    for m in range(k):
        for n in range(k):
            out += Xp[:, m:m + H, n:n + W, :] * K[m, n]
    return out


def _depthwise_backward(X, K, dout):
    k = K.shape[0]
    a, b = _same_pad(k)
    Xp = np.pad(X, [(0, 0), (a, b), (a, b), (0, 0)])
    H, W = X.shape[1:3]
    dK = np.zeros_like(K)
    dXp = np.zeros_like(Xp)
    for m in range(k):
        for n in range(k):
            dK[m, n] = np.einsum("bhwc,bhwc->c", Xp[:, m:m + H, n:n + W, :], dout)
            dXp[:, m:m + H, n:n + W, :] += dout * K[m, n]
    return dK, dXp[:, a:a + H, a:a + W, :]


# ----------------------------------------------------------------------- CNNs


@dataclass(frozen=True)
class CnnArchitecture:
    filter_size: int
    n_dconv: int = 0
    bias: bool = False
    activation: str = "linear"  # applied after each convolution; linear or relu

    @property
    def n_filters(self) -> int:
        return self.filter_size**2

    @property
    def n_conv_layers(self) -> int:
        return 1 + self.n_dconv

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "kind": "cnn", "filter_size": self.filter_size,
                "n_dconv": self.n_dconv, "bias": self.bias, "activation": self.activation}

    @classmethod
    def from_dict(cls, d: dict) -> "CnnArchitecture":
        return cls(d["filter_size"], d["n_dconv"], d["bias"], d.get("activation", "linear"))


def cnn_parameter_count(arch: CnnArchitecture, image_shape: tuple[int, int]) -> dict[str, int]:
    """Closed-form counts: conv ``[(k^2)^2 + b k^2] l`` and dense ``2 h w k^2 / s^2 + 2`` on padded dims."""
    k = arch.filter_size
    kk = k * k
    h, w = padded_shape(image_shape, k)
    conv = (kk**2 + int(arch.bias) * kk) * arch.n_conv_layers
    dense = 2 * h * w * kk // (k * k) + 2
    return {"conv": conv, "dense": dense, "total": conv + dense}


def dense_head_count(n_inputs: int) -> int:
    return 2 * n_inputs + 2


class Cnn:
    """One strided conv layer (``k^2`` filters, stride ``k``), ``n_dconv`` depthwise layers, dense softmax head."""

    output_kind = "proba"

    def __init__(self, arch: CnnArchitecture, image_shape: tuple[int, int]):
        self.arch = arch
        self.image_shape = tuple(image_shape)
        k = arch.filter_size
        self.k = k
        self.padded = padded_shape(self.image_shape, k)
        self.feature_shape = conv_output_shape(self.padded, k, k) + (arch.n_filters,)
        self.n_features = int(np.prod(self.feature_shape))
        self._shapes = self._param_shapes()
        self.n_params = int(sum(int(np.prod(s)) for _, s in self._shapes))

    def _param_shapes(self):
        k, F = self.k, self.arch.n_filters
        shapes = [("conv_k", (k, k, 1, F))]
        if self.arch.bias:
            shapes.append(("conv_b", (F,)))
        for i in range(self.arch.n_dconv):
            shapes.append((f"dw{i}_k", (k, k, F)))
            if self.arch.bias:
                shapes.append((f"dw{i}_b", (F,)))
        shapes += [("dense_W", (self.n_features, 2)), ("dense_b", (2,))]
        return shapes

    def unflatten(self, flat) -> dict[str, np.ndarray]:
        """Layout: conv kernel, conv bias?, per depthwise layer kernel and bias?, dense W, dense b."""
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} weights, got {flat.shape}")
        out, pos = {}, 0
        for name, shape in self._shapes:
            size = int(np.prod(shape))
            out[name] = flat[pos:pos + size].reshape(shape)
            pos += size
        return out

    def param_sizes(self) -> dict[str, int]:
        return {name: int(np.prod(shape)) for name, shape in self._shapes}

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        k, F = self.k, self.arch.n_filters
        parts = []
        for name, shape in self._shapes:
            if name == "conv_k":
                parts.append(glorot_uniform(rng, k * k, k * k * F, shape).ravel())
            elif name.endswith("_k"):
                parts.append(glorot_uniform(rng, k * k, k * k, shape).ravel())
            elif name == "dense_W":
                parts.append(glorot_uniform(rng, self.n_features, 2, shape).ravel())
            else:
                parts.append(np.zeros(shape).ravel())
        return np.concatenate(parts)

    def _act(self, z):
        return relu(z) if self.arch.activation == "relu" else z

    def _forward(self, X, p):
        X = np.asarray(X, dtype=float)
        if X.shape[1:3] != self.image_shape:
            raise ShapeError(f"expected images of shape {self.image_shape}, got {X.shape[1:3]}")
        X = pad_to_multiple(X[..., None], self.k)
        cache = [X]
        h = self._act(_conv_forward(X, p["conv_k"], self.k) + p.get("conv_b", 0.0))
        cache.append(h)
        for i in range(self.arch.n_dconv):
            h = self._act(_depthwise_forward(h, p[f"dw{i}_k"]) + p.get(f"dw{i}_b", 0.0))
            cache.append(h)
        flat = h.reshape(h.shape[0], -1)
        probs = softmax(flat @ p["dense_W"] + p["dense_b"])
        return cache, flat, probs

    def predict(self, X, flat) -> np.ndarray:
        return self._forward(X, self.unflatten(flat))[2]

    def value_and_grad(self, X, flat, upstream_fn):
        p = self.unflatten(flat)
        cache, feats, probs = self._forward(X, p)
        loss, dprobs = upstream_fn(probs)
        dz = softmax_backward(probs, dprobs)
        g = {"dense_W": feats.T @ dz, "dense_b": dz.sum(axis=0)}
        dh = (dz @ p["dense_W"].T).reshape(cache[-1].shape)
        for i in range(self.arch.n_dconv - 1, -1, -1):
            if self.arch.activation == "relu":
                dh = dh * (cache[i + 2] > 0)
            if self.arch.bias:
                g[f"dw{i}_b"] = dh.sum(axis=(0, 1, 2))
            g[f"dw{i}_k"], dh = _depthwise_backward(cache[i + 1], p[f"dw{i}_k"], dh)
        if self.arch.activation == "relu":
            dh = dh * (cache[1] > 0)
        if self.arch.bias:
            g["conv_b"] = dh.sum(axis=(0, 1, 2))
        g["conv_k"], _ = _conv_backward(cache[0], p["conv_k"], self.k, dh)
        return loss, probs, np.concatenate([g[name].ravel() for name, _ in self._shapes])


class BaselineDense:
    """Flattened image into a 2-neuron softmax layer."""

    output_kind = "proba"

    def __init__(self, image_shape: tuple[int, int]):
        self.image_shape = tuple(image_shape)
        self.n_inputs = int(np.prod(image_shape))
        self.n_params = dense_head_count(self.n_inputs)

    def unflatten(self, flat):
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} weights, got {flat.shape}")
        return flat[:-2].reshape(self.n_inputs, 2), flat[-2:]

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return np.concatenate([glorot_uniform(rng, self.n_inputs, 2, 2 * self.n_inputs), np.zeros(2)])

    def predict(self, X, flat):
        W, b = self.unflatten(flat)
        X = np.asarray(X, dtype=float).reshape(len(X), -1)
        return softmax(X @ W + b)

    def value_and_grad(self, X, flat, upstream_fn):
        W, b = self.unflatten(flat)
        X = np.asarray(X, dtype=float).reshape(len(X), -1)
        probs = softmax(X @ W + b)
        loss, dprobs = upstream_fn(probs)
        dz = softmax_backward(probs, dprobs)
        return loss, probs, np.concatenate([(X.T @ dz).ravel(), dz.sum(axis=0)])
