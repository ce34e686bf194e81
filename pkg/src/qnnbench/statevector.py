"""Exact statevector simulation for the rotation / controlled-rotation / Hadamard gate set.

Qubit ordering: qubit ``q`` is bit ``q`` of the amplitude index, i.e. qubit 0 is
the least-significant bit. ``|q1 q0> = |10>`` therefore lives at index 2.

Two layers live here. The value-level API (``StateVector``, ``apply_gate``,
``expectation``) works on one register. The batched kernels underneath operate on
arrays of shape ``(batch, 2**n)`` and are what the circuit engine uses when many
inputs go through the same circuit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence, Union

import numpy as np

MAX_QUBITS = 16

AXES = ("X", "Y", "Z")

_SQRT2_INV = 1.0 / np.sqrt(2.0)
_HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) * _SQRT2_INV


class SizeError(ValueError):
    """Requested register size outside the supported range."""


class QubitIndexError(IndexError):
    """A gate or observable references a qubit the register does not have."""


# --------------------------------------------------------------------------- types


@dataclass(frozen=True)
class Rotation:
    axis: str
    angle: float
    target: int

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown rotation axis {self.axis!r}")


@dataclass(frozen=True)
class ControlledRotation:
    axis: str
    angle: float
    control: int
    target: int

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown rotation axis {self.axis!r}")
        if self.control == self.target:
            raise ValueError("control and target must differ")


@dataclass(frozen=True)
class HadamardAll:
    pass


GateOp = Union[Rotation, ControlledRotation, HadamardAll]


@dataclass(frozen=True)
class ObservableTerm:
    """``coefficient * prod_q P_q``; an empty ``factors`` map is the identity."""

    coefficient: float
    factors: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        for q, p in self.factors.items():
            if p not in AXES:
                raise ValueError(f"unknown Pauli label {p!r} on qubit {q}")
        object.__setattr__(self, "factors", dict(sorted(self.factors.items())))

    def __hash__(self):
        return hash((self.coefficient, tuple(self.factors.items())))


@dataclass(frozen=True, eq=False)
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (2**self.n_qubits,):
            raise SizeError(
                f"expected {2**self.n_qubits} amplitudes for {self.n_qubits} qubits, got {amps.shape}"
            )
        object.__setattr__(self, "amplitudes", amps)

    def norm_squared(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)


# ---------------------------------------------------------------- gate matrices


def rotation_matrix(axis: str, angle) -> np.ndarray:
    """``exp(-i angle P / 2)``. ``angle`` may be an array; result has shape ``angle.shape + (2, 2)``."""
    angle = np.asarray(angle, dtype=float)
    c = np.cos(angle / 2)
    s = np.sin(angle / 2)
    m = np.empty(angle.shape + (2, 2), dtype=complex)
    if axis == "X":
        m[..., 0, 0] = c
        m[..., 0, 1] = -1j * s
        m[..., 1, 0] = -1j * s
        m[..., 1, 1] = c
    elif axis == "Y":
        m[..., 0, 0] = c
        m[..., 0, 1] = -s
        m[..., 1, 0] = s
        m[..., 1, 1] = c
    elif axis == "Z":
        m[..., 0, 0] = c - 1j * s
        m[..., 0, 1] = 0
        m[..., 1, 0] = 0
        m[..., 1, 1] = c + 1j * s
    else:
        raise ValueError(f"unknown rotation axis {axis!r}")
    return m


def rotation_derivative(axis: str, angle) -> np.ndarray:
    # d/dβ exp(-iβP/2) = -(i/2) P exp(-iβP/2) = exp(-i(β+π)P/2) / 2
    return 0.5 * rotation_matrix(axis, np.asarray(angle, dtype=float) + np.pi)


def gate_matrix(gate: GateOp, n_qubits: int) -> np.ndarray:
    """Dense ``2**n x 2**n`` matrix of ``gate``. Only meant for small registers and tests."""
    eye2 = np.eye(2, dtype=complex)

    def embed(single: dict[int, np.ndarray]) -> np.ndarray:
        out = np.array([[1.0 + 0j]])
        for q in reversed(range(n_qubits)):  # qubit n-1 is the most significant factor
            out = np.kron(out, single.get(q, eye2))
        return out

    if isinstance(gate, HadamardAll):
        return embed({q: _HADAMARD for q in range(n_qubits)})
    if isinstance(gate, Rotation):
        _check_qubit(gate.target, n_qubits)
        return embed({gate.target: rotation_matrix(gate.axis, gate.angle)})
    if isinstance(gate, ControlledRotation):
        _check_qubit(gate.control, n_qubits)
        _check_qubit(gate.target, n_qubits)
        p0 = np.diag([1.0, 0.0]).astype(complex)
        p1 = np.diag([0.0, 1.0]).astype(complex)
        r = rotation_matrix(gate.axis, gate.angle)
        return embed({gate.control: p0}) + embed({gate.control: p1, gate.target: r})
    raise TypeError(f"unsupported gate {gate!r}")


# -------------------------------------------------------------- batched kernels


def _check_qubit(q: int, n_qubits: int) -> None:
    if not 0 <= q < n_qubits:
        raise QubitIndexError(f"qubit {q} out of range for {n_qubits} qubits")


@lru_cache(maxsize=None)
def pair_indices(n_qubits: int, target: int, control: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs ``(i0, i1)`` differing only in the target bit (with the control bit set, if given)."""
    idx = np.arange(2**n_qubits)
    mask = (idx >> target) & 1 == 0
    if control is not None:
        mask &= (idx >> control) & 1 == 1
    i0 = idx[mask]
    i1 = i0 | (1 << target)
    i0.setflags(write=False)
    i1.setflags(write=False)
    return i0, i1


def apply_matrix_batch(states: np.ndarray, matrix: np.ndarray, n_qubits: int, target: int,
                       control: int | None = None) -> np.ndarray:
    """Apply a 2x2 ``matrix`` (shape ``(2, 2)`` or ``(batch, 2, 2)``) in place and return ``states``."""
    i0, i1 = pair_indices(n_qubits, target, control)
    a0 = states[:, i0]
    a1 = states[:, i1]
    if matrix.ndim == 2:
        m00, m01, m10, m11 = matrix[0, 0], matrix[0, 1], matrix[1, 0], matrix[1, 1]
    else:
        m00 = matrix[:, 0, 0, None]
        m01 = matrix[:, 0, 1, None]
        m10 = matrix[:, 1, 0, None]
        m11 = matrix[:, 1, 1, None]
    states[:, i0] = m00 * a0 + m01 * a1
    states[:, i1] = m10 * a0 + m11 * a1
    return states


def apply_controlled_derivative_batch(states: np.ndarray, matrix: np.ndarray, n_qubits: int,
                                      target: int, control: int) -> np.ndarray:
    """``(|1><1|_c ⊗ M_t) states``: the control-0 subspace is projected out."""
    out = np.zeros_like(states)
    i0, i1 = pair_indices(n_qubits, target, control)
    a0 = states[:, i0]
    a1 = states[:, i1]
    if matrix.ndim == 2:
        m00, m01, m10, m11 = matrix[0, 0], matrix[0, 1], matrix[1, 0], matrix[1, 1]
    else:
        m00 = matrix[:, 0, 0, None]
        m01 = matrix[:, 0, 1, None]
        m10 = matrix[:, 1, 0, None]
        m11 = matrix[:, 1, 1, None]
    out[:, i0] = m00 * a0 + m01 * a1
    out[:, i1] = m10 * a0 + m11 * a1
    return out


def apply_hadamard_all_batch(states: np.ndarray, n_qubits: int) -> np.ndarray:
    for q in range(n_qubits):
        apply_matrix_batch(states, _HADAMARD, n_qubits, q)
    return states


@lru_cache(maxsize=None)
def pauli_action(n_qubits: int, factors: tuple[tuple[int, str], ...]) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(perm, phase)`` with ``(P psi)[k] = phase[k] * psi[perm[k]]`` for the Pauli string."""
    idx = np.arange(2**n_qubits)
    flip = 0
    for q, p in factors:
        if p in ("X", "Y"):
            flip |= 1 << q
    src = idx ^ flip  # P|src> has a component on |k>
    phase = np.ones(2**n_qubits, dtype=complex)
    for q, p in factors:
        bit = (src >> q) & 1
        if p == "Z":
            phase *= np.where(bit == 1, -1.0, 1.0)
        elif p == "Y":
            phase *= np.where(bit == 0, 1j, -1j)
    src.setflags(write=False)
    phase.setflags(write=False)
    return src, phase


def apply_pauli_batch(states: np.ndarray, n_qubits: int, factors: Mapping[int, str]) -> np.ndarray:
    perm, phase = pauli_action(n_qubits, tuple(sorted(factors.items())))
    return states[:, perm] * phase


def term_expectations_batch(states: np.ndarray, n_qubits: int,
                            terms: Sequence[Mapping[int, str]]) -> np.ndarray:
    """``E[b, t] = <psi_b| P_t |psi_b>`` (real part) for unit-coefficient Pauli strings."""
    out = np.empty((states.shape[0], len(terms)))
    probs = None
    for t, factors in enumerate(terms):
        if not factors:
            if probs is None:
                probs = np.einsum("bk,bk->b", states.conj(), states).real
            out[:, t] = probs
            continue
        p_psi = apply_pauli_batch(states, n_qubits, factors)
        out[:, t] = np.einsum("bk,bk->b", states.conj(), p_psi).real
    return out


# --------------------------------------------------------------- value-level API


def zero_state(n_qubits: int, max_qubits: int = MAX_QUBITS) -> StateVector:
    if not 1 <= n_qubits <= max_qubits:
        raise SizeError(f"n_qubits must be in [1, {max_qubits}], got {n_qubits}")
    amps = np.zeros(2**n_qubits, dtype=complex)
    amps[0] = 1.0
    return StateVector(n_qubits, amps)


def apply_gate(state: StateVector, gate: GateOp) -> StateVector:
    n = state.n_qubits
    amps = state.amplitudes.copy()[None, :]
    if isinstance(gate, HadamardAll):
        apply_hadamard_all_batch(amps, n)
    elif isinstance(gate, Rotation):
        _check_qubit(gate.target, n)
        apply_matrix_batch(amps, rotation_matrix(gate.axis, gate.angle), n, gate.target)
    elif isinstance(gate, ControlledRotation):
        _check_qubit(gate.control, n)
        _check_qubit(gate.target, n)
        apply_matrix_batch(amps, rotation_matrix(gate.axis, gate.angle), n, gate.target, gate.control)
    else:
        raise TypeError(f"unsupported gate {gate!r}")
    return StateVector(n, amps[0])


def run_circuit(gates: Sequence[GateOp], n_qubits: int) -> StateVector:
    state = zero_state(n_qubits)
    for g in gates:
        state = apply_gate(state, g)
    return state


def expectation(state: StateVector, terms: Sequence[ObservableTerm]) -> float:
    """``sum_t c_t <psi|P_t|psi>``; the imaginary residue of each term is discarded."""
    n = state.n_qubits
    for term in terms:
        for q in term.factors:
            _check_qubit(q, n)
    if not terms:
        return 0.0
    values = term_expectations_batch(state.amplitudes[None, :], n, [t.factors for t in terms])[0]
    coeffs = np.array([t.coefficient for t in terms], dtype=float)
    return float(values @ coeffs)
