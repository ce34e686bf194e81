"""Circuit structures and builders for the randomized QNNs and the QCCNN filters.

Architectures only describe structure; trainable values live in ``ParameterSet``
(randomized QNNs) or in a flat vector laid out per layer (QCCNN). Builders return
plain gate lists that run on :mod:`qnnbench.statevector`.
"""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .statevector import (
    AXES,
    ControlledRotation,
    GateOp,
    HadamardAll,
    ObservableTerm,
    Rotation,
    expectation,
    run_circuit,
)

SCHEMA_VERSION = 1
SUPPORTED_DIMS = (2, 4, 8, 16, 32, 64)


class ShapeError(ValueError):
    """Parameter or input dimensions do not match the circuit structure."""


class EncodingDomainError(ValueError):
    """A feature value outside [0, 1] reached an encoding function."""


class DomainError(ValueError):
    """An argument lies outside the domain the builder supports."""


class EncodingFunction(str, enum.Enum):
    IDENTITY = "identity"
    ARCCOS = "arccos"
    SHIFT = "shift"
    SCALE = "scale"
    ARCCOS_SCALE = "arccos_scale"

    @property
    def has_parameter(self) -> bool:
        return self in (EncodingFunction.SHIFT, EncodingFunction.SCALE, EncodingFunction.ARCCOS_SCALE)

    def __call__(self, x, phi=None):
        x = np.asarray(x, dtype=float)
        if self is EncodingFunction.IDENTITY:
            return x
        if self is EncodingFunction.ARCCOS:
            return np.arccos(x)
        if self is EncodingFunction.SHIFT:
            return x + phi
        if self is EncodingFunction.SCALE:
            return x * phi
        return np.arccos(x) * phi

    def dphi(self, x):
        """Derivative of the encoded angle with respect to the trainable parameter."""
        x = np.asarray(x, dtype=float)
        if self is EncodingFunction.SHIFT:
            return np.ones_like(x)
        if self is EncodingFunction.SCALE:
            return x
        if self is EncodingFunction.ARCCOS_SCALE:
            return np.arccos(x)
        return np.zeros_like(x)


ENCODINGS = tuple(EncodingFunction)


def clamp_unit(x) -> np.ndarray:
    return np.clip(np.asarray(x, dtype=float), 0.0, 1.0)


def _check_unit(x) -> None:
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
        raise EncodingDomainError("feature values must lie in [0, 1]")


# ------------------------------------------------------------------ entanglement


@dataclass(frozen=True)
class EntanglementSpec:
    structure: str = "none"  # none | linear | circular | all_to_all
    axis: str = "X"

    def __post_init__(self):
        if self.structure not in ("none", "linear", "circular", "all_to_all"):
            raise ValueError(f"unknown entanglement structure {self.structure!r}")
        if self.axis not in AXES:
            raise ValueError(f"unknown entangling axis {self.axis!r}")

    def pairs(self, n_qubits: int) -> list[tuple[int, int]]:
        """(control, target) pairs; control is always the lower index."""
        if self.structure == "none":
            return []
        if self.structure == "linear":
            return [(i, i + 1) for i in range(n_qubits - 1)]
        if self.structure == "circular":
            return [(i, i + 1) for i in range(n_qubits - 1)] + [(0, n_qubits - 1)]
        return [(i, j) for i in range(n_qubits) for j in range(i + 1, n_qubits)]

    def n_gates(self, n_qubits: int) -> int:
        return len(self.pairs(n_qubits))


def entangling_gates(spec: EntanglementSpec, n_qubits: int, angles: Sequence[float]) -> list[GateOp]:
    pairs = spec.pairs(n_qubits)
    if len(angles) != len(pairs):
        raise ShapeError(f"expected {len(pairs)} entangling angles, got {len(angles)}")
    return [ControlledRotation(spec.axis, float(a), c, t) for (c, t), a in zip(pairs, angles)]


# ------------------------------------------------------------- randomized QNNs


@dataclass(frozen=True)
class RepetitionSpec:
    encoding_axis: str
    encoding: EncodingFunction
    rotation_axis: str
    entanglement: EntanglementSpec

    def to_dict(self) -> dict:
        return {
            "encoding_axis": self.encoding_axis,
            "encoding": self.encoding.value,
            "rotation_axis": self.rotation_axis,
            "entanglement": asdict(self.entanglement),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RepetitionSpec":
        return cls(
            encoding_axis=d["encoding_axis"],
            encoding=EncodingFunction(d["encoding"]),
            rotation_axis=d["rotation_axis"],
            entanglement=EntanglementSpec(**d["entanglement"]),
        )


@dataclass(frozen=True)
class QnnArchitecture:
    n_qubits: int
    input_dim: int
    n_layers: int
    repetitions: tuple[RepetitionSpec, ...]
    hadamard_prefix: bool = False
    observable: str = "pauli"  # pauli | ising
    seed: int | None = None

    def __post_init__(self):
        if self.n_qubits < 2 or self.input_dim % self.n_qubits:
            raise ShapeError(f"n_qubits={self.n_qubits} must be >= 2 and divide input_dim={self.input_dim}")
        if len(self.repetitions) != self.n_rep:
            raise ShapeError(f"expected {self.n_rep} repetition specs, got {len(self.repetitions)}")
        if not 1 <= self.n_layers:
            raise ShapeError("n_layers must be positive")
        if self.observable not in ("pauli", "ising"):
            raise ValueError(f"unknown observable kind {self.observable!r}")

    @property
    def n_rep(self) -> int:
        return self.input_dim // self.n_qubits

    @property
    def n_entangling_gates(self) -> int:
        return self.n_layers * sum(r.entanglement.n_gates(self.n_qubits) for r in self.repetitions)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "qnn",
            "n_qubits": self.n_qubits,
            "input_dim": self.input_dim,
            "n_layers": self.n_layers,
            "repetitions": [r.to_dict() for r in self.repetitions],
            "hadamard_prefix": self.hadamard_prefix,
            "observable": self.observable,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QnnArchitecture":
        if d.get("kind", "qnn") != "qnn":
            raise ValueError(f"not a QNN architecture: {d.get('kind')!r}")
        return cls(
            n_qubits=d["n_qubits"],
            input_dim=d["input_dim"],
            n_layers=d["n_layers"],
            repetitions=tuple(RepetitionSpec.from_dict(r) for r in d["repetitions"]),
            hadamard_prefix=d["hadamard_prefix"],
            observable=d["observable"],
            seed=d.get("seed"),
        )


@dataclass
class ParameterSet:
    phi: np.ndarray
    theta: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float).ravel()
        self.theta = np.asarray(self.theta, dtype=float).ravel()
        self.omega = np.asarray(self.omega, dtype=float).ravel()

    def flat(self) -> np.ndarray:
        return np.concatenate([self.phi, self.theta, self.omega])

    @classmethod
    def from_flat(cls, arch: QnnArchitecture, flat) -> "ParameterSet":
        counts = count_parameters(arch)
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (counts.total,):
            raise ShapeError(f"expected {counts.total} parameters, got {flat.shape}")
        a, b = counts.encoding, counts.encoding + counts.circuit
        return cls(flat[:a], flat[a:b], flat[b:])


@dataclass(frozen=True)
class ParameterCount:
    encoding: int
    circuit: int
    observable: int

    @property
    def total(self) -> int:
        return self.encoding + self.circuit + self.observable


def observable_size(kind: str, n_qubits: int) -> int:
    if kind == "pauli":
        return 1 + 3 * n_qubits
    if kind == "ising":
        return 1 + 2 * n_qubits + n_qubits * (n_qubits - 1) // 2
    raise ValueError(f"unknown observable kind {kind!r}")


def observable_factors(kind: str, n_qubits: int) -> list[dict[int, str]]:
    """Pauli strings in the order their weights appear in ``omega``."""
    terms: list[dict[int, str]] = [{}]
    if kind == "pauli":
        for n in range(n_qubits):
            terms += [{n: "X"}, {n: "Y"}, {n: "Z"}]
    elif kind == "ising":
        for n in range(n_qubits):
            terms += [{n: "X"}, {n: "Z"}]
        terms += [{n: "Z", m: "Z"} for n in range(n_qubits) for m in range(n + 1, n_qubits)]
    else:
        raise ValueError(f"unknown observable kind {kind!r}")
    return terms


def observable_terms(kind: str, n_qubits: int, omega) -> list[ObservableTerm]:
    factors = observable_factors(kind, n_qubits)
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (len(factors),):
        raise ShapeError(f"expected {len(factors)} observable weights, got {omega.shape}")
    return [ObservableTerm(float(w), f) for w, f in zip(omega, factors)]


def _qccnn_counts(spec: "QccnnCircuitSpec") -> ParameterCount:
    n = spec.n_qubits
    return ParameterCount(3 * n * spec.n_layers, spec.entanglement_spec.n_gates(n) * spec.n_layers, 0)


def count_parameters(arch) -> ParameterCount:
    if isinstance(arch, QccnnCircuitSpec):
        return _qccnn_counts(arch)
    n = arch.n_qubits
    enc = sum(n for r in arch.repetitions if r.encoding.has_parameter) * arch.n_layers
    circ = sum(n + r.entanglement.n_gates(n) for r in arch.repetitions) * arch.n_layers
    return ParameterCount(enc, circ, observable_size(arch.observable, n))


def build_feature_map(rep: RepetitionSpec, x_fragment, phi_slice=None) -> list[GateOp]:
    x_fragment = np.asarray(x_fragment, dtype=float)
    _check_unit(x_fragment)
    n = x_fragment.shape[0]
    if rep.encoding.has_parameter:
        phi_slice = np.asarray(phi_slice, dtype=float)
        if phi_slice.shape != (n,):
            raise ShapeError(f"expected {n} encoding parameters, got {phi_slice.shape}")
        angles = rep.encoding(x_fragment, phi_slice)
    else:
        angles = rep.encoding(x_fragment)
    return [Rotation(rep.encoding_axis, float(a), q) for q, a in enumerate(angles)]


def build_trainable_unitary(rep: RepetitionSpec, theta_slice, n_qubits: int) -> list[GateOp]:
    theta_slice = np.asarray(theta_slice, dtype=float)
    n_ent = rep.entanglement.n_gates(n_qubits)
    if theta_slice.shape != (n_qubits + n_ent,):
        raise ShapeError(f"expected {n_qubits + n_ent} circuit parameters, got {theta_slice.shape}")
    gates: list[GateOp] = [Rotation(rep.rotation_axis, float(t), q) for q, t in enumerate(theta_slice[:n_qubits])]
    return gates + entangling_gates(rep.entanglement, n_qubits, theta_slice[n_qubits:])


def assemble_pqc(arch: QnnArchitecture, x, params: ParameterSet) -> list[GateOp]:
    """Gate list in application order.

    The Hadamard block, when present, is applied to ``|0...0>`` before the layers.
    """
    x = clamp_unit(x)
    if x.shape != (arch.input_dim,):
        raise ShapeError(f"expected input of length {arch.input_dim}, got {x.shape}")
    counts = count_parameters(arch)
    if params.phi.size != counts.encoding or params.theta.size != counts.circuit:
        raise ShapeError("parameter set does not match architecture")
    n = arch.n_qubits
    gates: list[GateOp] = [HadamardAll()] if arch.hadamard_prefix else []
    ip = it = 0
    for _layer in range(arch.n_layers):
        for r, rep in enumerate(arch.repetitions):
            frag = x[r * n:(r + 1) * n]
            phi = None
            if rep.encoding.has_parameter:
                phi = params.phi[ip:ip + n]
                ip += n
            gates += build_feature_map(rep, frag, phi)
            k = n + rep.entanglement.n_gates(n)
            gates += build_trainable_unitary(rep, params.theta[it:it + k], n)
            it += k
    return gates


def evaluate_qnn(arch: QnnArchitecture, x, params: ParameterSet) -> float:
    state = run_circuit(assemble_pqc(arch, x, params), arch.n_qubits)
    return expectation(state, observable_terms(arch.observable, arch.n_qubits, params.omega))


def sample_random_qnn(d: int, rng_seed: int) -> QnnArchitecture:
    if d not in SUPPORTED_DIMS:
        raise DomainError(f"input dimension must be one of {SUPPORTED_DIMS}, got {d}")
    rng = np.random.default_rng(rng_seed)
    qubit_choices = [2**k for k in range(1, int(np.log2(d)) + 1)]
    n_qubits = int(rng.choice(qubit_choices))
    n_layers = int(rng.integers(1, 5))
    reps = []
    for _ in range(d // n_qubits):
        enc_axis = str(rng.choice(AXES))
        encoding = ENCODINGS[int(rng.integers(len(ENCODINGS)))]
        rot_axis = str(rng.choice(AXES))
        ent_axis = str(rng.choice(("none",) + AXES))
        if ent_axis == "none":
            ent = EntanglementSpec("none", "X")
        else:
            ent = EntanglementSpec(str(rng.choice(("linear", "all_to_all"))), ent_axis)
        reps.append(RepetitionSpec(enc_axis, encoding, rot_axis, ent))
    hadamard = bool(rng.integers(2))
    observable = ("pauli", "ising")[int(rng.integers(2))]
    return QnnArchitecture(n_qubits, d, n_layers, tuple(reps), hadamard, observable, seed=int(rng_seed))


def is_untrainable_diagonal(arch: QnnArchitecture) -> bool:
    if arch.hadamard_prefix:
        return False
    for rep in arch.repetitions:
        if rep.encoding_axis != "Z" or rep.rotation_axis != "Z":
            return False
        if rep.entanglement.structure != "none" and rep.entanglement.axis != "Z":
            return False
    return True


def initial_parameters(arch: QnnArchitecture, rng: np.random.Generator) -> ParameterSet:
    counts = count_parameters(arch)
    phi = rng.uniform(0.0, 2 * np.pi, counts.encoding)
    theta = rng.uniform(0.0, 2 * np.pi, counts.circuit)
    omega = rng.uniform(-1.0, 1.0, counts.observable)
    return ParameterSet(phi, theta, omega)


# ---------------------------------------------------------------------- QCCNN


@dataclass(frozen=True)
class QccnnCircuitSpec:
    filter_h: int
    filter_w: int
    n_layers: int = 1
    entanglement: str = "none"  # none | circular | all_to_all, always cR_X

    def __post_init__(self):
        if self.entanglement not in ("none", "circular", "all_to_all"):
            raise ValueError(f"unsupported QCCNN entanglement {self.entanglement!r}")
        if self.filter_h < 1 or self.filter_w < 1 or self.n_layers < 1:
            raise ShapeError("filter sizes and layer count must be positive")

    @property
    def n_qubits(self) -> int:
        return self.filter_h * self.filter_w

    @property
    def entanglement_spec(self) -> EntanglementSpec:
        return EntanglementSpec(self.entanglement, "X")

    @property
    def params_per_layer(self) -> int:
        return 3 * self.n_qubits + self.entanglement_spec.n_gates(self.n_qubits)

    @property
    def n_entangling_gates(self) -> int:
        return self.entanglement_spec.n_gates(self.n_qubits) * self.n_layers

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "kind": "qccnn_circuit", **asdict(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "QccnnCircuitSpec":
        return cls(d["filter_h"], d["filter_w"], d["n_layers"], d["entanglement"])


def split_qccnn_params(spec: QccnnCircuitSpec, params) -> tuple[np.ndarray, np.ndarray]:
    """Flat per-layer layout ``[phi_1(n), phi_2(n), phi_3(n), theta_ent]`` -> ``(phi[L,3,n], theta[L,M_ent])``."""
    params = np.asarray(params, dtype=float)
    n, per = spec.n_qubits, spec.params_per_layer
    if params.shape != (per * spec.n_layers,):
        raise ShapeError(f"expected {per * spec.n_layers} QCCNN parameters, got {params.shape}")
    blocks = params.reshape(spec.n_layers, per)
    return blocks[:, :3 * n].reshape(spec.n_layers, 3, n), blocks[:, 3 * n:]


def build_qccnn_circuit(spec: QccnnCircuitSpec, patch, params) -> list[GateOp]:
    patch = clamp_unit(patch)
    if patch.shape != (spec.n_qubits,):
        raise ShapeError(f"expected patch of length {spec.n_qubits}, got {patch.shape}")
    phi, theta = split_qccnn_params(spec, params)
    acos = np.arccos(patch)
    gates: list[GateOp] = []
    for layer in range(spec.n_layers):
        for q in range(spec.n_qubits):
            gates.append(Rotation("Z", float(acos[q] * phi[layer, 0, q]), q))
            gates.append(Rotation("Y", float(acos[q] * phi[layer, 1, q]), q))
            gates.append(Rotation("Z", float(acos[q] * phi[layer, 2, q]), q))
        gates += entangling_gates(spec.entanglement_spec, spec.n_qubits, theta[layer])
    return gates


def architecture_from_dict(d: dict):
    kind = d.get("kind", "qnn")
    if kind == "qnn":
        return QnnArchitecture.from_dict(d)
    if kind == "qccnn_circuit":
        return QccnnCircuitSpec.from_dict(d)
    raise ValueError(f"unknown architecture kind {kind!r}")
