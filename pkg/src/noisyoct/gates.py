"""Gate systems: drift and control Hamiltonians plus superoperator targets.

Spin operators are ``S = sigma / 2``.  Two-qubit operators are ordered
``|00>, |01>, |10>, |11>`` with the first qubit most significant.  The
"qubit block" of the embedded gates is the first-qubit-``|1>`` block, where
the Pauli-X target acts; the first-qubit-``|0>`` block is the ancilla
(spectator) block that is empty at ``t = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .liouville import (
    PAULI,
    OperatorBasis,
    _to_basis,
    default_basis,
    spin_operators,
)

__all__ = [
    "GateSpec",
    "operator_to_superop",
    "unitary_to_superop",
    "hadamard_unitary",
    "pauli_x_embedded",
    "entangling_unitary",
    "hadamard_spec",
    "pauli_x_embedded_spec",
    "two_qubit_spec",
    "staged_ancilla_spec",
    "ancilla_projector",
    "qubit_block_projector",
    "lie_closure_rank",
    "GATE_BUILDERS",
]

SX, SY, SZ = spin_operators()
I2 = np.eye(2, dtype=complex)
P0 = np.diag([1.0, 0.0]).astype(complex)
P1 = np.diag([0.0, 1.0]).astype(complex)


@dataclass(frozen=True, eq=False)
class GateSpec:
    """A controllable system together with its target map.

    ``controls`` maps channel name to control operator; ``guess`` maps
    channel name to the peak amplitude of the default Gaussian seed field.
    ``params`` records the constructor arguments for serialization.
    """

    name: str
    drift: np.ndarray
    controls: dict
    target: np.ndarray
    horizon: float
    basis: OperatorBasis
    guess: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @property
    def hilbert_dim(self):
        return self.drift.shape[0]

    @property
    def channel_names(self):
        return list(self.controls)

    @property
    def control_ops(self):
        return list(self.controls.values())


def operator_to_superop(W, basis):
    """Matrix of ``X -> W X W^dag`` for any square ``W``."""
    W = np.asarray(W, dtype=complex)
    sup = _to_basis(np.kron(W, W.conj()), basis)
    if basis.hermitian:
        return np.ascontiguousarray(sup.real)
    return sup


def unitary_to_superop(U, basis):
    """Matrix of ``X -> U X U^dag``; real orthogonal in a Hermitian basis."""
    U = np.asarray(U, dtype=complex)
    if U.shape != (basis.dim, basis.dim):
        raise ValueError("unitary does not match basis dimension")
    if not np.allclose(U.conj().T @ U, np.eye(basis.dim), rtol=0.0, atol=1e-12):
        raise ValueError("operator is not unitary")
    return operator_to_superop(U, basis)


def hadamard_unitary():
    """The single-qubit target: a pi rotation that sends x -> -z, z -> -x, y -> -y.

    In the basis ``I, S_x, S_y, S_z`` its superoperator is
    ``[[1,0,0,0],[0,0,0,-1],[0,0,-1,0],[0,-1,0,0]]``.  It differs from the
    textbook Hadamard only by Pauli-Z conjugation.
    """
    return (PAULI["Z"] - PAULI["X"]) / np.sqrt(2.0)


def pauli_x_embedded():
    """Pauli-X on the second qubit inside the first-qubit-|1> block, zero elsewhere."""
    return np.kron(P1, PAULI["X"])


def entangling_unitary():
    """CNOT+phase gate: identity on the |0> block, ``[[0, i], [-i, 0]]`` on the |1> block."""
    U = np.zeros((4, 4), dtype=complex)
    U[0, 0] = U[1, 1] = 1.0
    U[2, 3] = 1j
    U[3, 2] = -1j
    return U


def _check_hermitian_ops(*ops):
    for op in ops:
        if not np.allclose(op, op.conj().T, atol=1e-14):
            raise ValueError("Hamiltonian terms must be Hermitian")


def hadamard_spec(u=1.0, a_x=1.0, phi=0.0, cycles=2, guess_amplitude=0.5):
    """Single qubit with drift ``u S_z + a_x S_x`` and an in-plane control.

    The control is ``cos(phi) S_x + sin(phi) S_y``; the horizon is ``cycles``
    Rabi periods ``4 pi / Omega`` with ``Omega = sqrt(u**2 + a_x**2)``.
    """
    omega = float(np.hypot(u, a_x))
    if omega == 0.0:
        raise ValueError("drift must be non-zero (u, a_x) != (0, 0)")
    basis = default_basis(2)
    drift = u * SZ + a_x * SX
    control = np.cos(phi) * SX + np.sin(phi) * SY
    return GateSpec(
        name="hadamard",
        drift=drift,
        controls={"c": control},
        target=unitary_to_superop(hadamard_unitary(), basis),
        horizon=cycles * 4.0 * np.pi / omega,
        basis=basis,
        guess={"c": guess_amplitude},
        params=dict(u=u, a_x=a_x, phi=phi, cycles=cycles, guess_amplitude=guess_amplitude),
    )


def _block_control(a_x, a_y):
    # (I - sigma_z) (x) S_i = 2 |1><1| (x) S_i
    return np.kron(I2 - PAULI["Z"], a_x * SX + a_y * SY)


def pauli_x_embedded_spec(a_x=1.0, a_y=0.0, horizon=2.0 * np.pi, guess_amplitude=0.5):
    """Pauli-X embedded in two qubits with a trivial (identity) drift.

    A single field drives ``(I - sigma_z) (x) (a_x S_x + a_y S_y)``, which
    annihilates the ancilla block.  With zero drift the reachable gates are
    rotations about one fixed axis, so the best fidelity is
    ``a_x**2 / (a_x**2 + a_y**2)``; the default ``a_y = 0`` makes the target
    reachable.
    """
    basis = default_basis(4)
    drift = np.eye(4, dtype=complex)
    control = _block_control(a_x, a_y)
    _check_hermitian_ops(drift, control)
    return GateSpec(
        name="pauli_x",
        drift=drift,
        controls={"z": control},
        target=operator_to_superop(pauli_x_embedded(), basis),
        horizon=float(horizon),
        basis=basis,
        guess={"z": guess_amplitude},
        params=dict(a_x=a_x, a_y=a_y, horizon=horizon, guess_amplitude=guess_amplitude),
    )


def _two_qubit_terms(a, omega1, omega2, a_x, a_y):
    if omega1 == 0:
        raise ValueError("omega1 must be non-zero")
    # without the omega2 term the algebra has rank 7 and the target is out of reach
    drift = (a * np.eye(4, dtype=complex) + omega1 * np.kron(SZ, I2)
             + omega2 * np.kron(I2, SZ))
    channel_z = _block_control(a_x, a_y)
    channel_e = np.kron(SX, SZ)
    _check_hermitian_ops(drift, channel_z, channel_e)
    return drift, {"z": channel_z, "e": channel_e}


def two_qubit_spec(a=0.0, omega1=1.0, omega2=0.5, a_x=1.0, a_y=1.0, periods=6,
                   guess_z=0.3, guess_e=0.3):
    """Entangling-gate system: drift ``a I + omega1 S_z (x) I + omega2 I (x) S_z``,
    channels Z and E.

    Channel Z drives ``(I - sigma_z) (x) (a_x S_x + a_y S_y)``; channel E
    is the qubit-qubit coupling ``S_x (x) S_z``.  The horizon is ``periods``
    drift periods ``2 pi / omega1``.  ``omega2`` detunes the second qubit;
    setting it to zero leaves a 7-dimensional dynamical algebra in which the
    target is unreachable (best fidelity about 0.73).
    """
    basis = default_basis(4)
    drift, controls = _two_qubit_terms(a, omega1, omega2, a_x, a_y)
    return GateSpec(
        name="entangling",
        drift=drift,
        controls=controls,
        target=unitary_to_superop(entangling_unitary(), basis),
        horizon=periods * 2.0 * np.pi / abs(omega1),
        basis=basis,
        guess={"z": guess_z, "e": guess_e},
        params=dict(a=a, omega1=omega1, omega2=omega2, a_x=a_x, a_y=a_y, periods=periods,
                    guess_z=guess_z, guess_e=guess_e),
    )


def staged_ancilla_spec(a=0.0, omega1=1.0, omega2=0.5, a_x=1.0, a_y=1.0, periods=6,
                        guess_z=0.3, guess_e=0.3):
    """First stage of the ancilla strategy: the embedded Pauli-X target with
    the full two-qubit drift and both channels, so population can leak into
    the ancilla block."""
    basis = default_basis(4)
    drift, controls = _two_qubit_terms(a, omega1, omega2, a_x, a_y)
    return GateSpec(
        name="pauli_x_ancilla",
        drift=drift,
        controls=controls,
        target=operator_to_superop(pauli_x_embedded(), basis),
        horizon=periods * 2.0 * np.pi / abs(omega1),
        basis=basis,
        guess={"z": guess_z, "e": guess_e},
        params=dict(a=a, omega1=omega1, omega2=omega2, a_x=a_x, a_y=a_y, periods=periods,
                    guess_z=guess_z, guess_e=guess_e),
    )


def ancilla_projector():
    """Projector onto the ancilla block (first qubit in ``|0>``)."""
    return np.kron(P0, I2)


def qubit_block_projector():
    """Projector onto the qubit block (first qubit in ``|1>``)."""
    return np.kron(P1, I2)


def lie_closure_rank(ops, tol=1e-10, max_depth=20):
    """Dimension of the real Lie algebra generated by ``i * ops`` modulo identity.

    Iterated commutators are accumulated until the span stops growing.
    """
    n = ops[0].shape[0]

    def traceless(h):
        return h - np.trace(h) / n * np.eye(n)

    def as_real(h):
        return np.concatenate([h.real.ravel(), h.imag.ravel()])

    basis_vecs = []

    def add(h):
        h = traceless(h)
        v = as_real(h)
        if basis_vecs:
            B = np.array(basis_vecs)
            v = v - B.T @ (B @ v)
            v = v - B.T @ (B @ v)
        nv = np.linalg.norm(v)
        if nv > tol:
            basis_vecs.append(v / nv)
            return True
        return False

    current = [1j * np.asarray(op, dtype=complex) for op in ops]
    elements = []
    for op in current:
        if add(op):
            elements.append(op)
    frontier = list(elements)
    for _ in range(max_depth):
        new = []
        for a in frontier:
            for b in elements:
                c = a @ b - b @ a
                if add(c):
                    new.append(c)
        if not new:
            break
        elements += new
        frontier = new
    return len(basis_vecs)


GATE_BUILDERS = {
    "hadamard": hadamard_spec,
    "pauli_x": pauli_x_embedded_spec,
    "pauli_x_ancilla": staged_ancilla_spec,
    "entangling": two_qubit_spec,
}
