"""Quantum convolution and the QCCNN (quantum conv layer + dense softmax head)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .circuits import QccnnCircuitSpec, ShapeError, clamp_unit, count_parameters
from .classical import (
    conv_output_shape,
    dense_head_count,
    glorot_uniform,
    pad_to_multiple,
    padded_shape,
    softmax,
    softmax_backward,
)
from .engine import CircuitTemplate, qccnn_template
from .statevector import apply_pauli_batch, term_expectations_batch


def extract_patches(images: np.ndarray, k: int) -> np.ndarray:
    """``(B, H, W)`` -> ``(B, H', W', k*k)`` non-overlapping windows, row-major within each window."""
    X = pad_to_multiple(np.asarray(images, dtype=float), k)
    B, H, W = X.shape
    ho, wo = conv_output_shape((H, W), k, k)
    return X.reshape(B, ho, k, wo, k).transpose(0, 1, 3, 2, 4).reshape(B, ho, wo, k * k)


@dataclass
class QuantumConvLayer:
    spec: QccnnCircuitSpec
    cache_patches: bool = True
    template: CircuitTemplate = field(init=False, repr=False)
    applications: int = field(default=0, init=False)

    def __post_init__(self):
        if self.spec.filter_h != self.spec.filter_w:
            raise ShapeError("quantum convolution uses square filters")
        self.template = qccnn_template(self.spec)
        self._z_terms = [{q: "Z"} for q in range(self.spec.n_qubits)]

    @property
    def k(self) -> int:
        return self.spec.filter_h

    @property
    def simulations(self) -> int:
        """Statevector simulations actually executed (fewer than ``applications`` when patches repeat)."""
        return self.template.executions

    def output_shape(self, image_shape) -> tuple[int, int, int]:
        h, w = conv_output_shape(padded_shape(tuple(image_shape), self.k), self.k, self.k)
        return h, w, self.spec.n_qubits

    def _unique(self, rows: np.ndarray):
        if self.cache_patches:
            return np.unique(rows, axis=0, return_inverse=True)
        return rows, np.arange(rows.shape[0])

    def forward(self, images: np.ndarray, params) -> tuple[np.ndarray, tuple]:
        images = np.asarray(images, dtype=float)
        if images.ndim == 2:
            images = images[None]
        patches = extract_patches(clamp_unit(images), self.k)
        B, ho, wo, n = patches.shape
        rows = patches.reshape(-1, n)
        uniq, inverse = self._unique(rows)
        inverse = np.asarray(inverse).ravel()
        self.applications += rows.shape[0]
        states = self.template.forward(uniq, params)
        z = term_expectations_batch(states, n, self._z_terms)
        out = z[inverse].reshape(B, ho, wo, n)
        return out, (uniq, inverse, states)

    def backward(self, params, cache, dout: np.ndarray) -> np.ndarray:
        """Gradient of ``sum(dout * output)`` w.r.t. the circuit parameters."""
        uniq, inverse, states = cache
        n = self.spec.n_qubits
        weights = np.zeros((uniq.shape[0], n))
        np.add.at(weights, inverse, dout.reshape(-1, n))
        lam = np.zeros_like(states)
        for q in range(n):
            lam += weights[:, q, None] * apply_pauli_batch(states, n, {q: "Z"})
        return self.template.backward(uniq, params, states, lam)


def quantum_convolve(image: np.ndarray, layer: QuantumConvLayer, params) -> np.ndarray:
    """Single ``H x W`` image -> ``H' x W' x n_q`` tensor of per-qubit ``<Z>`` values."""
    return layer.forward(np.asarray(image, dtype=float)[None], params)[0][0]


class QccnnModel:
    """Parameters: ``[circuit (per-layer phi, theta_ent), dense W (features x 2), dense b (2)]``."""

    output_kind = "proba"

    def __init__(self, spec: QccnnCircuitSpec, image_shape: tuple[int, int], cache_patches: bool = True):
        self.spec = spec
        self.image_shape = tuple(image_shape)
        self.layer = QuantumConvLayer(spec, cache_patches)
        self.feature_shape = self.layer.output_shape(self.image_shape)
        self.n_features = int(np.prod(self.feature_shape))
        self.n_quantum = count_parameters(spec).total
        self.n_params = self.n_quantum + dense_head_count(self.n_features)

    def unflatten(self, flat):
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got {flat.shape}")
        q = flat[:self.n_quantum]
        W = flat[self.n_quantum:-2].reshape(self.n_features, 2)
        return q, W, flat[-2:]

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        q = rng.uniform(0.0, 2 * np.pi, self.n_quantum)
        W = glorot_uniform(rng, self.n_features, 2, 2 * self.n_features)
        return np.concatenate([q, W, np.zeros(2)])

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 2:
            X = X[None]
        if X.shape[1:] != self.image_shape:
            raise ShapeError(f"expected images of shape {self.image_shape}, got {X.shape[1:]}")
        return X

    def predict(self, X, flat) -> np.ndarray:
        q, W, b = self.unflatten(flat)
        feats, _ = self.layer.forward(self._check(X), q)
        return softmax(feats.reshape(feats.shape[0], -1) @ W + b)

    def value_and_grad(self, X, flat, upstream_fn):
        q, W, b = self.unflatten(flat)
        feats, cache = self.layer.forward(self._check(X), q)
        F = feats.reshape(feats.shape[0], -1)
        probs = softmax(F @ W + b)
        loss, dprobs = upstream_fn(probs)
        dz = softmax_backward(probs, dprobs)
        dfeat = (dz @ W.T).reshape(feats.shape)
        g_q = self.layer.backward(q, cache, dfeat)
        return loss, probs, np.concatenate([g_q, (F.T @ dz).ravel(), dz.sum(axis=0)])


def qccnn_forward(model: QccnnModel, image, flat) -> np.ndarray:
    return model.predict(np.asarray(image, dtype=float)[None], flat)[0]


def qccnn_backward(model: QccnnModel, image, label: int, flat) -> np.ndarray:
    """Cross-entropy gradient for one labelled image."""
    from .training import LossKind, loss_and_grad

    def upstream(p):
        return loss_and_grad(LossKind.CE, p, [label])

    return model.value_and_grad(np.asarray(image, dtype=float)[None], flat, upstream)[2]
