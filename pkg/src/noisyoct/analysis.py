"""Fidelity metrics, purity diagnostics and trajectory read-outs."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit

from .krotov import objective
from .liouville import PAULI, OperatorBasis, devectorize, vectorize

__all__ = [
    "IF_FLOOR",
    "infidelity",
    "degradation_ratio",
    "noise_cancellation",
    "purity",
    "purity_loss_rate",
    "control_variance",
    "bloch_trajectory",
    "ancilla_population",
    "average_gate_fidelity",
    "timekeeping_fidelity",
    "fit_timekeeping",
    "SweepResult",
]

IF_FLOOR = 1e-16


def infidelity(G, O, floor=IF_FLOOR):
    """``1 - F`` clipped below at ``floor`` so logs stay finite."""
    return max(1.0 - objective(G, O), floor)


def _ratio(num, den, what):
    if den <= 0:
        raise ValueError(f"{what} must be positive")
    return num / den


def degradation_ratio(if_n, if_u):
    """``R = IF_n / IF_U``."""
    return _ratio(if_n, if_u, "IF_U")


def noise_cancellation(if_n, if_f):
    """``NC = IF_n / IF_F``."""
    return _ratio(if_n, if_f, "IF_F")


def purity(rho):
    rho = np.asarray(rho)
    return float(np.trace(rho @ rho).real)


def purity_loss_rate(rho, D, basis: OperatorBasis):
    """``d/dt tr rho**2 = 2 <rho|D|rho>`` for the dissipative part ``D``."""
    v = vectorize(np.asarray(rho, dtype=complex), basis)
    return float(2.0 * np.vdot(v, np.asarray(D) @ v).real)


def control_variance(rho, Hc):
    """``tr{rho Hc**2} - tr{rho Hc}**2``."""
    rho = np.asarray(rho)
    Hc = np.asarray(Hc)
    mean = np.trace(rho @ Hc).real
    return float(np.trace(rho @ Hc @ Hc).real - mean**2)


def _evolve(maps, initial, basis):
    v0 = vectorize(np.asarray(initial, dtype=complex), basis)
    vs = np.einsum("tij,j->ti", np.asarray(maps), v0)
    return [devectorize(v, basis) for v in vs]


def bloch_trajectory(maps, initial, basis: OperatorBasis):
    """Bloch coordinates of an evolved qubit operator at each time.

    A state is read as ``r_i = tr(sigma_i rho) / tr(rho)``; a traceless
    operator is scaled so its initial vector has unit length.  Returns
    ``(coords, radius)`` with shapes ``(T, 3)`` and ``(T,)``.
    """
    if basis.dim != 2:
        raise ValueError("Bloch trajectories need a two-level system")
    ops = _evolve(maps, initial, basis)
    coords = np.array([[np.trace(PAULI[k] @ x).real for k in "XYZ"] for x in ops])
    tr0 = np.trace(np.asarray(initial)).real
    if abs(tr0) > 1e-12:
        coords /= np.array([np.trace(x).real for x in ops])[:, None]
    else:
        n0 = np.linalg.norm(coords[0])
        if n0 == 0:
            raise ValueError("initial operator has no Bloch component")
        coords /= n0
    return coords, np.linalg.norm(coords, axis=1)


def ancilla_population(maps, projector, initial_states, basis: OperatorBasis):
    """``tr{P rho(t)}`` for each initial state.

    Returns ``(series, peak)`` with ``series`` of shape ``(n_states, T)``.
    """
    P = np.asarray(projector)
    if not (np.allclose(P @ P, P, atol=1e-12) and np.allclose(P, P.conj().T, atol=1e-12)):
        raise ValueError("projector must be a Hermitian idempotent")
    series = np.array([[np.trace(P @ rho).real for rho in _evolve(maps, s, basis)]
                       for s in initial_states])
    return series, float(series.max())


def average_gate_fidelity(process_fidelity, n):
    """Average over pure inputs, ``(n F + 1) / (n + 1)``, from the process
    overlap ``F = Tr{O^dag G} / n**2`` of an ``n``-level gate."""
    return (n * np.asarray(process_fidelity) + 1.0) / (n + 1.0)


def timekeeping_fidelity(theta, n_ticks):
    """``(2 + exp(-theta**2 / (2 N))) / 3``; ``N = inf`` gives 1."""
    n_ticks = np.asarray(n_ticks, dtype=float)
    if np.any(n_ticks <= 0):
        raise ValueError("n_ticks must be positive")
    return (2.0 + np.exp(-np.asarray(theta) ** 2 / (2.0 * n_ticks))) / 3.0


def fit_timekeeping(gammas, fidelities, theta0=np.pi):
    """Fit ``F(gamma) = timekeeping_fidelity(theta, 1/gamma)`` for ``theta``.

    Returns ``(theta, residual_norm, curve_range)``.
    """
    g = np.asarray(gammas, dtype=float)
    f = np.asarray(fidelities, dtype=float)

    def model(gam, theta):
        return timekeeping_fidelity(theta, 1.0 / gam)

    (theta,), _ = curve_fit(model, g, f, p0=[theta0])
    resid = float(np.linalg.norm(model(g, theta) - f))
    return abs(float(theta)), resid, float(f.max() - f.min())


@dataclass
class SweepResult:
    """Noise sweep of one gate under one noise kind."""

    kind: str
    gammas: np.ndarray
    if_u: float
    if_n: np.ndarray
    if_f: np.ndarray
    energy_u: dict = field(default_factory=dict)
    energy_f: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    reasons: list = field(default_factory=list)
    guesses: list = field(default_factory=list)
    fields: list = field(default_factory=list)
    traces: list = field(default_factory=list)

    @property
    def log_r(self):
        return np.log10(np.maximum(self.if_n, IF_FLOOR) / max(self.if_u, IF_FLOOR))

    @property
    def log_nc(self):
        return np.log10(np.maximum(self.if_n, IF_FLOOR) / np.maximum(self.if_f, IF_FLOOR))

