import numpy as np
import pytest
from scipy.linalg import expm

from noisyoct.gates import (
    GATE_BUILDERS,
    ancilla_projector,
    entangling_unitary,
    hadamard_spec,
    hadamard_unitary,
    lie_closure_rank,
    operator_to_superop,
    pauli_x_embedded,
    pauli_x_embedded_spec,
    qubit_block_projector,
    staged_ancilla_spec,
    two_qubit_spec,
    unitary_to_superop,
)
from noisyoct.krotov import objective
from noisyoct.liouville import PAULI, commutator_superop, devectorize, pauli_basis, spin_operators, vectorize

from conftest import random_hermitian

SX, SY, SZ = spin_operators()


def test_identity_unitary_gives_identity_superop():
    assert np.allclose(unitary_to_superop(np.eye(2), pauli_basis(1)), np.eye(4))


def test_hadamard_superop_matches_reference_matrix():
    S = unitary_to_superop(hadamard_unitary(), pauli_basis(1))
    expected = np.array([[1, 0, 0, 0], [0, 0, 0, -1], [0, 0, -1, 0], [0, -1, 0, 0]])
    assert np.allclose(S, expected, atol=1e-15)
    assert np.allclose(S @ S, np.eye(4), atol=1e-13)


def test_non_unitary_rejected():
    with pytest.raises(ValueError):
        unitary_to_superop(np.diag([1.0, 0.5]), pauli_basis(1))
    with pytest.raises(ValueError):
        unitary_to_superop(np.eye(4), pauli_basis(1))


def test_superop_action_is_conjugation(rng):
    b = pauli_basis(2)
    U = expm(-1j * random_hermitian(rng, 4))
    S = unitary_to_superop(U, b)
    x = random_hermitian(rng, 4)
    assert np.allclose(devectorize(S @ vectorize(x, b), b), U @ x @ U.conj().T, atol=1e-13)


@pytest.mark.parametrize("name", ["hadamard", "entangling"])
def test_unitary_targets_are_orthogonal(name):
    spec = GATE_BUILDERS[name]()
    S = spec.target
    assert np.isrealobj(S)
    assert np.allclose(S.T @ S, np.eye(S.shape[0]), atol=1e-13)


def test_entangling_unitary_entries():
    U = entangling_unitary()
    assert np.array_equal(U.conj().T @ U, np.eye(4))
    assert set(np.unique(U)) <= {0, 1, 1j, -1j}


def test_hadamard_spec_defaults():
    spec = hadamard_spec()
    assert spec.horizon == pytest.approx(8 * np.pi / np.sqrt(2))
    assert np.allclose(spec.controls["c"], SX)
    assert np.allclose(spec.drift, SZ + SX)
    with pytest.raises(ValueError):
        hadamard_spec(u=0, a_x=0)


def test_hadamard_control_plane_angle():
    spec = hadamard_spec(phi=np.pi / 2)
    assert np.allclose(spec.controls["c"], SY, atol=1e-15)


def test_hadamard_lie_rank():
    spec = hadamard_spec()
    assert lie_closure_rank([spec.drift, spec.controls["c"]]) == 3


def test_rabi_period_returns_identity():
    spec = hadamard_spec(cycles=1)
    L = commutator_superop(spec.drift, spec.basis).real
    assert np.allclose(expm(spec.horizon * L), np.eye(4), atol=1e-8)


def test_all_operators_hermitian():
    for build in GATE_BUILDERS.values():
        spec = build()
        for op in [spec.drift] + spec.control_ops:
            assert np.allclose(op, op.conj().T, atol=1e-14)


def test_pauli_x_target_action():
    spec = pauli_x_embedded_spec()
    b = spec.basis
    rho = np.zeros((4, 4), dtype=complex)
    rho[2, 2] = 1.0  # |10><10|
    out = devectorize(spec.target @ vectorize(rho, b), b)
    expected = np.zeros((4, 4))
    expected[3, 3] = 1.0  # |11><11|
    assert np.allclose(out, expected, atol=1e-14)


def test_block_control_annihilates_ancilla_block():
    spec = pauli_x_embedded_spec(a_y=1.0)
    h = spec.controls["z"]
    P = ancilla_projector()
    assert np.allclose(h @ P, 0)
    assert np.allclose(P @ h, 0)


def test_identity_map_fidelity_against_embedded_target():
    spec = pauli_x_embedded_spec()
    # Tr O = |tr W|**2 = 0
    assert objective(np.eye(16), spec.target) == pytest.approx(0.0, abs=1e-15)
    assert np.vdot(spec.target, spec.target).real == pytest.approx(4.0)


def test_embedded_x_reachability_bound():
    # the reachable maps are exp(-i theta Hc); scan theta for the best overlap
    for a_y, bound in [(0.0, 1.0), (1.0, 0.5)]:
        spec = pauli_x_embedded_spec(a_y=a_y)
        h = spec.controls["z"]
        best = max(objective(unitary_to_superop(expm(-1j * th * h), spec.basis), spec.target)
                   for th in np.linspace(0, 4 * np.pi, 2001))
        assert best == pytest.approx(bound, abs=1e-4)


def test_two_qubit_spec_structure():
    spec = two_qubit_spec()
    assert spec.channel_names == ["z", "e"]
    assert np.allclose(spec.controls["e"], np.kron(SX, SZ))
    assert np.allclose(spec.controls["z"], np.kron(np.eye(2) - PAULI["Z"], SX + SY))
    assert spec.horizon == pytest.approx(12 * np.pi)
    assert not np.allclose(spec.drift @ spec.controls["e"], spec.controls["e"] @ spec.drift)
    with pytest.raises(ValueError):
        two_qubit_spec(omega1=0.0)


def test_two_qubit_lie_rank():
    spec = two_qubit_spec()
    assert lie_closure_rank([spec.drift] + spec.control_ops) == 15


def test_resonant_two_qubit_system_is_not_controllable():
    spec = two_qubit_spec(omega2=0.0)
    assert lie_closure_rank([spec.drift] + spec.control_ops) == 7


def test_staged_spec_shares_system():
    a, b = staged_ancilla_spec(), two_qubit_spec()
    assert np.allclose(a.drift, b.drift)
    assert a.channel_names == b.channel_names
    assert np.allclose(a.target, operator_to_superop(pauli_x_embedded(), a.basis))


def test_projectors():
    P, Q = ancilla_projector(), qubit_block_projector()
    assert np.allclose(P + Q, np.eye(4))
    assert np.trace(P @ np.eye(4) / 4).real == pytest.approx(0.5)
    inside = np.zeros((4, 4))
    inside[3, 3] = 1
    assert np.trace(P @ inside) == 0
    leak = np.zeros((4, 4))
    leak[0, 0] = 1
    assert np.trace(P @ leak) == 1


def test_specs_record_params():
    spec = two_qubit_spec(omega2=0.3)
    assert spec.params["omega2"] == 0.3
    rebuilt = two_qubit_spec(**spec.params)
    assert np.allclose(rebuilt.drift, spec.drift)
