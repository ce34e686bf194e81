"""Batched circuit execution with adjoint-mode gradients.

A :class:`CircuitTemplate` is the structure of a circuit with every gate angle
expressed as ``angle = f(x[feature], p[param])``. Running it over a batch of
inputs shares all per-gate work across the batch, and the adjoint sweep yields
the exact gradient of any weighted sum of Pauli expectations with respect to
the flat parameter vector ``p`` in one backward pass.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .circuits import (
    EncodingFunction,
    QccnnCircuitSpec,
    QnnArchitecture,
    ShapeError,
    count_parameters,
    observable_factors,
)
from .statevector import (
    apply_controlled_derivative_batch,
    apply_hadamard_all_batch,
    apply_matrix_batch,
    apply_pauli_batch,
    rotation_derivative,
    rotation_matrix,
    term_expectations_batch,
)


@dataclass(frozen=True)
class TemplateOp:
    kind: str  # rot | crot | had
    axis: str = "X"
    target: int = 0
    control: int | None = None
    param: int = -1
    feature: int = -1
    encoding: EncodingFunction | None = None

    def angle(self, X: np.ndarray, p: np.ndarray):
        if self.feature < 0:
            return p[self.param]
        x = X[:, self.feature]
        if self.encoding.has_parameter:
            return self.encoding(x, p[self.param])
        return self.encoding(x)

    def dangle(self, X: np.ndarray):
        if self.feature < 0:
            return 1.0
        return self.encoding.dphi(X[:, self.feature])


class CircuitTemplate:
    def __init__(self, n_qubits: int, ops: Sequence[TemplateOp], n_params: int, n_features: int):
        self.n_qubits = n_qubits
        self.ops = tuple(ops)
        self.n_params = n_params
        self.n_features = n_features
        self.executions = 0

    def forward(self, X: np.ndarray, p: np.ndarray) -> np.ndarray:
        """Output states, shape ``(batch, 2**n)``, starting from ``|0...0>``."""
        X = np.asarray(X, dtype=float)
        p = np.asarray(p, dtype=float)
        if p.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} circuit parameters, got {p.shape}")
        states = np.zeros((X.shape[0], 2**self.n_qubits), dtype=complex)
        states[:, 0] = 1.0
        self.executions += X.shape[0]
        for op in self.ops:
            if op.kind == "had":
                apply_hadamard_all_batch(states, self.n_qubits)
            else:
                m = rotation_matrix(op.axis, op.angle(X, p))
                apply_matrix_batch(states, m, self.n_qubits, op.target, op.control)
        return states

    def backward(self, X: np.ndarray, p: np.ndarray, states: np.ndarray, lam: np.ndarray) -> np.ndarray:
        """Gradient of ``sum_b Re <states_b| O_b |states_b>`` w.r.t. ``p``, given ``lam = O states``.

        ``O_b`` must be Hermitian; per-sample loss weights are folded into ``lam`` by the caller.
        """
        X = np.asarray(X, dtype=float)
        psi = states.copy()
        lam = lam.copy()
        grad = np.zeros(self.n_params)
        n = self.n_qubits
        for op in reversed(self.ops):
            if op.kind == "had":
                apply_hadamard_all_batch(psi, n)
                apply_hadamard_all_batch(lam, n)
                continue
            angle = op.angle(X, p)
            m_adj = np.conj(np.swapaxes(rotation_matrix(op.axis, angle), -1, -2))
            apply_matrix_batch(psi, m_adj, n, op.target, op.control)
            if op.param >= 0:
                dm = rotation_derivative(op.axis, angle)
                if op.control is None:
                    dpsi = apply_matrix_batch(psi.copy(), dm, n, op.target)
                else:
                    dpsi = apply_controlled_derivative_batch(psi, dm, n, op.target, op.control)
                g = 2.0 * np.einsum("bk,bk->b", lam.conj(), dpsi).real
                grad[op.param] += float(np.sum(g * op.dangle(X)))
            apply_matrix_batch(lam, m_adj, n, op.target, op.control)
        return grad


def qnn_template(arch: QnnArchitecture) -> CircuitTemplate:
    """Template over the flat circuit vector ``[phi, theta]`` of a randomized QNN."""
    counts = count_parameters(arch)
    n = arch.n_qubits
    ops: list[TemplateOp] = [TemplateOp("had")] if arch.hadamard_prefix else []
    ip, it = 0, counts.encoding
    for _layer in range(arch.n_layers):
        for r, rep in enumerate(arch.repetitions):
            for q in range(n):
                param = -1
                if rep.encoding.has_parameter:
                    param = ip
                    ip += 1
                ops.append(TemplateOp("rot", rep.encoding_axis, q, None, param, r * n + q, rep.encoding))
            for q in range(n):
                ops.append(TemplateOp("rot", rep.rotation_axis, q, None, it))
                it += 1
            for c, t in rep.entanglement.pairs(n):
                ops.append(TemplateOp("crot", rep.entanglement.axis, t, c, it))
                it += 1
    return CircuitTemplate(n, ops, counts.encoding + counts.circuit, arch.input_dim)


def qccnn_template(spec: QccnnCircuitSpec) -> CircuitTemplate:
    n = spec.n_qubits
    ops: list[TemplateOp] = []
    enc = EncodingFunction.ARCCOS_SCALE
    for layer in range(spec.n_layers):
        base = layer * spec.params_per_layer
        for q in range(n):
            ops.append(TemplateOp("rot", "Z", q, None, base + q, q, enc))
            ops.append(TemplateOp("rot", "Y", q, None, base + n + q, q, enc))
            ops.append(TemplateOp("rot", "Z", q, None, base + 2 * n + q, q, enc))
        for k, (c, t) in enumerate(spec.entanglement_spec.pairs(n)):
            ops.append(TemplateOp("crot", "X", t, c, base + 3 * n + k))
    return CircuitTemplate(n, ops, spec.params_per_layer * spec.n_layers, n)


def weighted_observable_apply(states: np.ndarray, n_qubits: int, factors, weights: np.ndarray) -> np.ndarray:
    """``sum_t w[b, t] P_t |psi_b>``; ``weights`` has shape ``(T,)`` or ``(batch, T)``."""
    weights = np.asarray(weights, dtype=float)
    out = np.zeros_like(states)
    for t, f in enumerate(factors):
        w = weights[..., t]
        if np.ndim(w):
            w = w[:, None]
        if not f:
            out += w * states
        else:
            out += w * apply_pauli_batch(states, n_qubits, f)
    return out


class QnnEvaluator:
    """Batched forward and gradient of a randomized QNN output ``<O(omega)>``."""

    def __init__(self, arch: QnnArchitecture):
        self.arch = arch
        self.template = qnn_template(arch)
        self.factors = observable_factors(arch.observable, arch.n_qubits)
        self.n_circuit = self.template.n_params

    def predict(self, X: np.ndarray, flat: np.ndarray) -> np.ndarray:
        states = self.template.forward(X, flat[:self.n_circuit])
        E = term_expectations_batch(states, self.arch.n_qubits, self.factors)
        return E @ flat[self.n_circuit:]

    def value_and_grad(self, X: np.ndarray, flat: np.ndarray, upstream_fn):
        """``upstream_fn(y) -> (loss, dloss/dy)``; returns ``(loss, y, grad)`` over the flat vector."""
        p = flat[:self.n_circuit]
        omega = flat[self.n_circuit:]
        states = self.template.forward(X, p)
        E = term_expectations_batch(states, self.arch.n_qubits, self.factors)
        y = E @ omega
        loss, dy = upstream_fn(y)
        lam = weighted_observable_apply(states, self.arch.n_qubits, self.factors, omega)
        lam *= dy[:, None]
        g_circ = self.template.backward(X, p, states, lam)
        g_omega = dy @ E
        return loss, y, np.concatenate([g_circ, g_omega])
