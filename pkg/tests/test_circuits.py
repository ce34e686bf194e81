import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qnnbench.circuits import (
    DomainError,
    EncodingDomainError,
    EncodingFunction,
    EntanglementSpec,
    ParameterSet,
    QccnnCircuitSpec,
    QnnArchitecture,
    RepetitionSpec,
    ShapeError,
    architecture_from_dict,
    assemble_pqc,
    build_feature_map,
    build_qccnn_circuit,
    build_trainable_unitary,
    count_parameters,
    evaluate_qnn,
    initial_parameters,
    is_untrainable_diagonal,
    observable_size,
    sample_random_qnn,
)
from qnnbench.statevector import ControlledRotation, HadamardAll, Rotation


def rep(enc_axis="Y", enc=EncodingFunction.IDENTITY, rot_axis="Z", structure="none", ent_axis="Z"):
    return RepetitionSpec(enc_axis, enc, rot_axis, EntanglementSpec(structure, ent_axis))


def all_z_arch(n_qubits=2, d=4, layers=2, hadamard=False, observable="pauli"):
    reps = tuple(rep("Z", EncodingFunction.SHIFT, "Z", "linear", "Z") for _ in range(d // n_qubits))
    return QnnArchitecture(n_qubits, d, layers, reps, hadamard, observable)


class TestEntanglementSpec:
    @pytest.mark.parametrize("structure,n,count", [("linear", 5, 4), ("circular", 5, 5), ("all_to_all", 5, 10),
                                                    ("none", 5, 0), ("all_to_all", 2, 1)])
    def test_gate_counts(self, structure, n, count):
        assert EntanglementSpec(structure, "X").n_gates(n) == count

    def test_orientation_and_order(self):
        assert EntanglementSpec("all_to_all").pairs(3) == [(0, 1), (0, 2), (1, 2)]
        assert EntanglementSpec("circular").pairs(3) == [(0, 1), (1, 2), (0, 2)]


class TestFeatureMap:
    def test_identity_substitution(self):
        gates = build_feature_map(rep("Y"), [0.5, 0.25])
        assert gates == [Rotation("Y", 0.5, 0), Rotation("Y", 0.25, 1)]

    def test_arccos_of_one(self):
        gates = build_feature_map(rep(enc=EncodingFunction.ARCCOS), [1.0, 1.0])
        assert [g.angle for g in gates] == [0.0, 0.0]

    def test_scale_by_zero(self):
        gates = build_feature_map(rep(enc=EncodingFunction.SCALE), [0.3, 0.9], [0.0, 0.0])
        assert [g.angle for g in gates] == [0.0, 0.0]

    def test_out_of_domain(self):
        with pytest.raises(EncodingDomainError):
            build_feature_map(rep(), [1.5, 0.2])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.sampled_from(list(EncodingFunction)))
    def test_clamped_inputs_never_nan(self, x, enc):
        arch = QnnArchitecture(2, 2, 1, (rep(enc=enc),), False, "pauli")
        params = initial_parameters(arch, np.random.default_rng(0))
        assert np.isfinite(evaluate_qnn(arch, x, params))


class TestTrainableUnitary:
    def test_linear_z(self):
        gates = build_trainable_unitary(rep(structure="linear", ent_axis="Z"), [0.1, 0.2, 0.3], 2)
        assert gates == [Rotation("Z", 0.1, 0), Rotation("Z", 0.2, 1), ControlledRotation("Z", 0.3, 0, 1)]

    def test_all_to_all_counts(self):
        gates = build_trainable_unitary(rep(structure="all_to_all"), np.zeros(10), 4)
        assert sum(isinstance(g, Rotation) for g in gates) == 4
        assert sum(isinstance(g, ControlledRotation) for g in gates) == 6

    def test_no_entanglement(self):
        assert len(build_trainable_unitary(rep(), np.zeros(3), 3)) == 3

    def test_count_mismatch(self):
        with pytest.raises(ShapeError):
            build_trainable_unitary(rep(structure="linear"), np.zeros(2), 2)


class TestAssemble:
    def test_repetition_fragments(self):
        arch = QnnArchitecture(4, 8, 1, (rep(), rep()), False, "pauli")
        x = np.linspace(0.1, 0.8, 8)
        gates = assemble_pqc(arch, x, initial_parameters(arch, np.random.default_rng(0)))
        enc = [g.angle for g in gates if isinstance(g, Rotation) and g.axis == "Y"]
        np.testing.assert_allclose(enc, x)

    def test_single_layer_concatenation(self):
        r = rep(structure="linear")
        arch = QnnArchitecture(2, 2, 1, (r,), False, "pauli")
        p = ParameterSet([], [0.1, 0.2, 0.3], np.zeros(7))
        assert assemble_pqc(arch, [0.4, 0.6], p) == build_feature_map(r, [0.4, 0.6]) + build_trainable_unitary(
            r, [0.1, 0.2, 0.3], 2)

    def test_block_order(self):
        arch = QnnArchitecture(2, 4, 3, (rep("X"), rep("Y")), False, "pauli")
        gates = assemble_pqc(arch, np.full(4, 0.5), initial_parameters(arch, np.random.default_rng(0)))
        axes = [g.axis for g in gates[::2]]  # first gate of every 2-gate block
        assert len(gates) == 6 * 4
        assert axes == ["X", "Z", "Y", "Z"] * 3

    def test_hadamard_block_comes_first(self):
        arch = all_z_arch(hadamard=True)
        gates = assemble_pqc(arch, np.zeros(4), initial_parameters(arch, np.random.default_rng(0)))
        assert isinstance(gates[0], HadamardAll)
        assert sum(isinstance(g, HadamardAll) for g in gates) == 1

    def test_wrong_length(self):
        arch = all_z_arch()
        with pytest.raises(ShapeError):
            assemble_pqc(arch, np.zeros(3), initial_parameters(arch, np.random.default_rng(0)))

    def test_layer_structure_identical(self, rng):
        for seed in range(20):
            arch = sample_random_qnn(8, seed)
            gates = assemble_pqc(arch, rng.random(8), initial_parameters(arch, rng))
            start = int(arch.hadamard_prefix)
            per_layer = (len(gates) - start) // arch.n_layers
            shapes = [(type(g), g.axis, g.target, getattr(g, "control", None)) for g in gates[start:]]
            for l in range(1, arch.n_layers):
                assert shapes[l * per_layer:(l + 1) * per_layer] == shapes[:per_layer]


class TestEvaluate:
    def test_diagonal_closed_form(self, rng):
        arch = all_z_arch()
        for _ in range(20):
            p = initial_parameters(arch, rng)
            expected = p.omega[0] + p.omega[3] + p.omega[6]  # identity + Z on each qubit
            assert evaluate_qnn(arch, rng.random(4), p) == pytest.approx(expected, abs=1e-10)

    def test_zero_observable(self, rng):
        arch = sample_random_qnn(4, 3)
        p = initial_parameters(arch, rng)
        p.omega[:] = 0
        assert evaluate_qnn(arch, rng.random(4), p) == 0.0

    def test_untrainable_output_spread(self, rng):
        arch = all_z_arch(observable="ising")
        p0 = initial_parameters(arch, rng)
        outs = []
        for _ in range(20):
            p = initial_parameters(arch, rng)
            outs.append(evaluate_qnn(arch, rng.random(4), ParameterSet(p.phi, p.theta, p0.omega)))
        assert np.ptp(outs) < 1e-10


class TestSampler:
    def test_deterministic(self):
        assert sample_random_qnn(8, 42) == sample_random_qnn(8, 42)

    def test_qubit_frequencies(self):
        counts = {2: 0, 4: 0, 8: 0}
        for seed in range(10_000):
            counts[sample_random_qnn(8, seed).n_qubits] += 1
        for v in counts.values():
            assert abs(v / 10_000 - 1 / 3) < 0.02

    def test_d2(self):
        for seed in range(50):
            arch = sample_random_qnn(2, seed)
            assert arch.n_qubits == 2 and arch.n_rep == 1

    def test_bad_dimension(self):
        with pytest.raises(DomainError):
            sample_random_qnn(6, 0)

    def test_domain(self):
        for seed in range(300):
            arch = sample_random_qnn(16, seed)
            assert arch.n_qubits in (2, 4, 8, 16) and 1 <= arch.n_layers <= 4
            assert len(arch.repetitions) == 16 // arch.n_qubits
            for r in arch.repetitions:
                assert r.entanglement.structure in ("none", "linear", "all_to_all")


class TestDiagonalFlag:
    def test_all_z(self):
        assert is_untrainable_diagonal(all_z_arch())

    def test_hadamard_breaks(self):
        assert not is_untrainable_diagonal(all_z_arch(hadamard=True))

    @pytest.mark.parametrize("field_", ["enc", "rot", "ent"])
    def test_any_other_axis(self, field_):
        axes = {"enc": "X", "rot": "Z", "ent": "Z"} if field_ == "enc" else \
            {"enc": "Z", "rot": "Y", "ent": "Z"} if field_ == "rot" else {"enc": "Z", "rot": "Z", "ent": "X"}
        r = rep(axes["enc"], EncodingFunction.SHIFT, axes["rot"], "linear", axes["ent"])
        assert not is_untrainable_diagonal(QnnArchitecture(2, 2, 1, (r,), False, "pauli"))

    def test_hadamard_makes_all_z_trainable(self, rng):
        arch = all_z_arch(hadamard=True)
        p0 = initial_parameters(arch, rng)
        outs = [evaluate_qnn(arch, np.full(4, 0.5), ParameterSet(initial_parameters(arch, rng).phi,
                                                                   initial_parameters(arch, rng).theta, p0.omega))
                for _ in range(5)]
        assert np.ptp(outs) > 1e-3


class TestQccnnCircuit:
    def test_all_ones_patch(self):
        spec = QccnnCircuitSpec(2, 2, 1, "circular")
        gates = build_qccnn_circuit(spec, np.ones(4), np.arange(16, dtype=float))
        assert all(g.angle == 0 for g in gates if isinstance(g, Rotation))
        assert sum(isinstance(g, ControlledRotation) for g in gates) == 4

    def test_gate_order(self):
        spec = QccnnCircuitSpec(1, 2, 1, "none")
        gates = build_qccnn_circuit(spec, [0.5, 0.0], np.ones(6))
        assert [(g.axis, g.target) for g in gates] == [("Z", 0), ("Y", 0), ("Z", 0), ("Z", 1), ("Y", 1), ("Z", 1)]
        assert gates[0].angle == pytest.approx(np.arccos(0.5))

    def test_patch_length(self):
        with pytest.raises(ShapeError):
            build_qccnn_circuit(QccnnCircuitSpec(2, 2), np.ones(3), np.zeros(12))

    @pytest.mark.parametrize("spec,enc,circ", [
        (QccnnCircuitSpec(2, 2, 1, "circular"), 12, 4),
        (QccnnCircuitSpec(3, 3, 1, "all_to_all"), 27, 36),
        (QccnnCircuitSpec(2, 2, 3, "all_to_all"), 36, 18),
        (QccnnCircuitSpec(2, 2, 2, "none"), 24, 0),
    ])
    def test_counts(self, spec, enc, circ):
        c = count_parameters(spec)
        assert (c.encoding, c.circuit, c.observable) == (enc, circ, 0)


class TestCounts:
    def test_example(self):
        arch = QnnArchitecture(2, 2, 1, (rep(enc=EncodingFunction.SCALE, structure="linear"),), False, "pauli")
        c = count_parameters(arch)
        assert (c.encoding, c.circuit, c.observable, c.total) == (2, 3, 7, 12)

    @pytest.mark.parametrize("n", [2, 3, 4, 8])
    def test_observable_sizes(self, n):
        assert observable_size("pauli", n) == 1 + 3 * n
        assert observable_size("ising", n) == 1 + 2 * n + n * (n - 1) // 2

    def test_fuzz_consumption(self, rng):
        for seed in range(1000):
            arch = sample_random_qnn(int(rng.choice([2, 4, 8])), seed)
            c = count_parameters(arch)
            p = initial_parameters(arch, rng)
            assert p.flat().size == c.total
            gates = assemble_pqc(arch, np.full(arch.input_dim, 0.5), p)  # raises on any mismatch
            assert len(gates) == int(arch.hadamard_prefix) + arch.n_layers * sum(
                2 * arch.n_qubits + r.entanglement.n_gates(arch.n_qubits) for r in arch.repetitions)


class TestSerialization:
    def test_round_trip(self):
        for seed in range(30):
            arch = sample_random_qnn(8, seed)
            d = json.loads(json.dumps(arch.to_dict()))
            assert d["schema_version"] == 1 and d["seed"] == seed
            assert architecture_from_dict(d) == arch

    def test_qccnn_round_trip(self):
        spec = QccnnCircuitSpec(3, 3, 2, "circular")
        assert architecture_from_dict(json.loads(json.dumps(spec.to_dict()))) == spec
