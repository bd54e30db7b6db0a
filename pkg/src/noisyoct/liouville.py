"""Operator algebra on vectorized Liouville space.

Operators on an N-dimensional Hilbert space are plain ``(N, N)`` complex
arrays.  Expanding them in an orthonormal operator basis
``tr(A_i^dag A_j) = delta_ij`` turns them into length-``N**2`` coefficient
vectors, and every linear map on operators becomes an ``(N**2, N**2)``
matrix.  With a Hermitian basis (the default Pauli-type bases) every
Hermiticity-preserving map is a *real* matrix.

Conventions (hbar = 1):

* ``commutator_superop(H)`` is the matrix of ``X -> -i [H, X]``.
* ``double_commutator_superop(A)`` is the matrix of ``X -> [A, [A, X]]``; it
  is positive semidefinite and annihilates the identity.
* Dissipators carry an explicit minus sign so they never increase purity.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

__all__ = [
    "PAULI",
    "spin_operators",
    "OperatorBasis",
    "pauli_basis",
    "gell_mann_basis",
    "matrix_unit_basis",
    "default_basis",
    "vectorize",
    "devectorize",
    "superop_from_map",
    "commutator_superop",
    "double_commutator_superop",
    "anticommutator",
    "dissipator_amplitude",
    "dissipator_phase",
    "NoiseModel",
    "build_generator",
    "ControlledLiouvillian",
]

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

HERMITIAN_ATOL = 1e-12


def spin_operators():
    """Spin-1/2 operators ``(S_x, S_y, S_z) = sigma / 2``."""
    return tuple(0.5 * PAULI[k] for k in "XYZ")


def _check_hermitian(op, name="operator"):
    op = np.asarray(op)
    scale = max(1.0, float(np.max(np.abs(op))))
    if not np.allclose(op, op.conj().T, rtol=0.0, atol=HERMITIAN_ATOL * scale):
        raise ValueError(f"{name} must be Hermitian")
    return op


@dataclass(frozen=True, eq=False)
class OperatorBasis:
    """Ordered orthonormal basis of the N x N operator space.

    ``elements`` has shape ``(N**2, N, N)``.  ``labels`` are informational.
    """

    elements: np.ndarray
    labels: tuple = field(default=())

    def __post_init__(self):
        el = np.asarray(self.elements, dtype=complex)
        if el.ndim != 3 or el.shape[1] != el.shape[2] or el.shape[0] != el.shape[1] ** 2:
            raise ValueError(f"basis elements must have shape (N**2, N, N), got {el.shape}")
        if el.shape[1] < 2:
            raise ValueError("Hilbert dimension must be at least 2")
        el.setflags(write=False)
        object.__setattr__(self, "elements", el)

    @property
    def dim(self):
        """Hilbert-space dimension N."""
        return self.elements.shape[1]

    @property
    def size(self):
        """Liouville-space dimension N**2."""
        return self.elements.shape[0]

    @cached_property
    def hermitian(self):
        el = self.elements
        return bool(np.allclose(el, np.conj(np.swapaxes(el, 1, 2)), atol=1e-14))

    @cached_property
    def gram(self):
        """Matrix of inner products ``tr(A_i^dag A_j)``."""
        el = self.elements
        return np.einsum("iab,jab->ij", el.conj(), el)

    @cached_property
    def _columns(self):
        # columns are row-major flattened basis elements; unitary for an
        # orthonormal basis
        return self.elements.reshape(self.size, -1).T.copy()

    def is_orthonormal(self, atol=1e-14):
        return bool(np.allclose(self.gram, np.eye(self.size), rtol=0.0, atol=atol))


def pauli_basis(n_qubits=1):
    """Normalized Pauli-string basis for ``n_qubits`` qubits.

    Elements are ``P_1 (x) ... (x) P_n / sqrt(2**n)`` ordered lexicographically
    in ``I, X, Y, Z`` so the first element is proportional to the identity.
    """
    if n_qubits < 1:
        raise ValueError("n_qubits must be >= 1")
    labels, elements = [], []
    norm = np.sqrt(2.0**n_qubits)
    for word in itertools.product("IXYZ", repeat=n_qubits):
        op = PAULI[word[0]]
        for letter in word[1:]:
            op = np.kron(op, PAULI[letter])
        labels.append("".join(word))
        elements.append(op / norm)
    return OperatorBasis(np.array(elements), tuple(labels))


def gell_mann_basis(n):
    """Normalized generalized Gell-Mann basis, identity first."""
    if n < 2:
        raise ValueError("dimension must be >= 2")
    elements = [np.eye(n, dtype=complex) / np.sqrt(n)]
    labels = ["I"]
    for j in range(n):
        for k in range(j + 1, n):
            sym = np.zeros((n, n), dtype=complex)
            sym[j, k] = sym[k, j] = 1 / np.sqrt(2)
            asym = np.zeros((n, n), dtype=complex)
            asym[j, k], asym[k, j] = -1j / np.sqrt(2), 1j / np.sqrt(2)
            elements += [sym, asym]
            labels += [f"S{j}{k}", f"A{j}{k}"]
    for l in range(1, n):
        diag = np.zeros(n, dtype=complex)
        diag[:l] = 1.0
        diag[l] = -l
        elements.append(np.diag(diag) / np.sqrt(l * (l + 1)))
        labels.append(f"D{l}")
    return OperatorBasis(np.array(elements), tuple(labels))


def matrix_unit_basis(n):
    """Computational basis ``|i><j|`` in row-major order (not Hermitian)."""
    elements = np.zeros((n * n, n, n), dtype=complex)
    labels = []
    for idx, (i, j) in enumerate(itertools.product(range(n), repeat=2)):
        elements[idx, i, j] = 1.0
        labels.append(f"{i}{j}")
    return OperatorBasis(elements, tuple(labels))


def default_basis(n):
    """Pauli basis when N is a power of two, Gell-Mann otherwise."""
    n_qubits = int(round(np.log2(n)))
    if 2**n_qubits == n:
        return pauli_basis(n_qubits)
    return gell_mann_basis(n)


def _check_op(op, basis):
    op = np.asarray(op)
    if op.shape != (basis.dim, basis.dim):
        raise ValueError(f"operator shape {op.shape} does not match basis dimension {basis.dim}")
    return op


def vectorize(op, basis):
    """Coefficients ``chi_i = tr(A_i^dag op)`` of ``op`` in ``basis``."""
    op = _check_op(op, basis)
    return basis._columns.conj().T @ op.reshape(-1)


def devectorize(vec, basis):
    """Inverse of :func:`vectorize`: ``sum_i chi_i A_i``."""
    vec = np.asarray(vec)
    if vec.shape != (basis.size,):
        raise ValueError(f"vector length {vec.shape} does not match basis size {basis.size}")
    return (basis._columns @ vec).reshape(basis.dim, basis.dim)


def _to_basis(row_major_matrix, basis):
    # row-major flattening: vec(A X B) = kron(A, B.T) vec(X)
    cols = basis._columns
    return cols.conj().T @ row_major_matrix @ cols


def superop_from_map(fn, basis):
    """Matrix ``S_ij = tr(A_i^dag fn(A_j))`` of an arbitrary linear map."""
    out = np.empty((basis.size, basis.size), dtype=complex)
    for j, a in enumerate(basis.elements):
        out[:, j] = vectorize(fn(a), basis)
    return out


def _commutator_rowmajor(a):
    eye = np.eye(a.shape[0])
    return np.kron(a, eye) - np.kron(eye, a.T)


def commutator_superop(H, basis):
    """Matrix of ``X -> -i [H, X]``; anti-Hermitian for Hermitian ``H``."""
    H = _check_hermitian(_check_op(H, basis), "H")
    return -1j * _to_basis(_commutator_rowmajor(H), basis)


def double_commutator_superop(A, basis):
    """Matrix of ``X -> [A, [A, X]]``; positive semidefinite."""
    A = _check_hermitian(_check_op(A, basis), "A")
    k = _to_basis(_commutator_rowmajor(A), basis)
    return k @ k


def anticommutator(a, b):
    return a @ b + b @ a


def _check_rate(rate, name):
    if rate < 0:
        raise ValueError(f"{name} must be non-negative, got {rate}")


def dissipator_amplitude(Hc, gamma, eps, basis):
    """Amplitude-noise dissipator ``-gamma eps**2 [Hc, [Hc, .]]``."""
    _check_rate(gamma, "gamma_A")
    return -gamma * eps**2 * double_commutator_superop(Hc, basis)


def dissipator_phase(H0, Hc, gamma, eps, basis):
    """Phase-noise dissipator ``-gamma [H, [H, .]]`` with ``H = H0 + eps Hc``."""
    _check_rate(gamma, "gamma_P")
    H = np.asarray(H0) + eps * np.asarray(Hc)
    return -gamma * double_commutator_superop(H, basis)


@dataclass(frozen=True)
class NoiseModel:
    """Controller noise: ``kind`` is ``"none"``, ``"amplitude"`` or ``"phase"``."""

    kind: str = "none"
    rate: float = 0.0

    KINDS = ("none", "amplitude", "phase")

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind not in self.KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {self.KINDS}")
        _check_rate(self.rate, "noise rate")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "rate", float(self.rate))

    @property
    def gamma(self):
        """Effective rate; zero for ``kind == "none"``."""
        return 0.0 if self.kind == "none" else self.rate


def _as_channels(Hc, eps):
    if isinstance(Hc, np.ndarray) and Hc.ndim == 2:
        return [Hc], [float(eps)]
    Hc = list(Hc)
    eps = np.atleast_1d(np.asarray(eps, dtype=float)).tolist()
    if len(Hc) != len(eps):
        raise ValueError("number of field values must match number of controls")
    return Hc, eps


def build_generator(H0, Hc, eps, noise, basis):
    """Liouvillian for ``H = H0 + sum_k eps_k Hc_k`` plus controller noise.

    ``Hc`` is one operator or a sequence of control operators, ``eps`` the
    matching field value(s).  Amplitude noise acts on every channel
    separately; phase noise is built from the full instantaneous Hamiltonian.
    """
    H0 = _check_op(H0, basis)
    controls, values = _as_channels(Hc, eps)
    H = H0 + sum(e * _check_op(h, basis) for h, e in zip(controls, values))
    gen = commutator_superop(H, basis)
    if noise.kind == "amplitude":
        for h, e in zip(controls, values):
            gen = gen + dissipator_amplitude(h, noise.rate, e, basis)
    elif noise.kind == "phase":
        gen = gen - noise.rate * double_commutator_superop(H, basis)
    return gen


class ControlledLiouvillian:
    """Precomputed pieces of ``L(eps)`` for fast repeated assembly.

    ``L(eps) = H'(H0) + sum_k eps_k H'(Hk) + D(eps)`` where ``D`` follows the
    noise model.  With plain commutator superoperators ``Kx = [X, .]`` the
    pieces are

    * amplitude: ``D = -gamma sum_k eps_k**2 Kk Kk``
    * phase:     ``D = -gamma (K0 + sum_k eps_k Kk)**2``

    Since ``K = i H'``, the phase term is assembled as ``+gamma H'(H)**2``,
    which keeps everything real when the basis is Hermitian.
    """

    def __init__(self, H0, controls: Sequence[np.ndarray], noise: NoiseModel, basis: OperatorBasis):
        self.basis = basis
        self.noise = noise
        self.H0 = _check_hermitian(_check_op(H0, basis), "H0")
        self.controls = [_check_hermitian(_check_op(h, basis), "control") for h in controls]
        self._real = basis.hermitian
        cast = self._cast
        self.drift = cast(commutator_superop(self.H0, basis))
        self.ctrl = [cast(commutator_superop(h, basis)) for h in self.controls]
        self.dcomm = [cast(double_commutator_superop(h, basis)) for h in self.controls]
        self.gamma = noise.gamma

    def _cast(self, m):
        if self._real:
            return np.ascontiguousarray(m.real)
        return m

    @property
    def n_channels(self):
        return len(self.controls)

    @property
    def dtype(self):
        return self.drift.dtype

    def __call__(self, eps):
        eps = np.atleast_1d(eps)
        gen = self.drift.copy()
        for e, c in zip(eps, self.ctrl):
            gen += e * c
        if self.gamma and self.noise.kind == "amplitude":
            for e, d in zip(eps, self.dcomm):
                gen -= self.gamma * e * e * d
        elif self.gamma and self.noise.kind == "phase":
            h = self._total(eps)
            gen += self.gamma * (h @ h)
        return gen

    def _total(self, eps):
        h = self.drift.copy()
        for e, c in zip(eps, self.ctrl):
            h += e * c
        return h

    def derivative(self, eps, channel):
        """``dL/d eps_channel`` evaluated at field values ``eps``."""
        eps = np.atleast_1d(eps)
        d = self.ctrl[channel].copy()
        if self.gamma and self.noise.kind == "amplitude":
            d -= 2.0 * self.gamma * eps[channel] * self.dcomm[channel]
        elif self.gamma and self.noise.kind == "phase":
            d += self.gamma * anticommutator(self.ctrl[channel], self._total(eps))
        return d

    def curvature_op(self, channel):
        """The double commutator ``[Hk, [Hk, .]]``; ``d2L/d eps_k**2 = -2 gamma`` times it."""
        return self.dcomm[channel]
