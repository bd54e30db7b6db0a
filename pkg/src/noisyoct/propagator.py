"""Semi-global propagation of ``dv/dt = L(t) v`` in Liouville space.

Each time step ``[t, t + dt]`` is treated as an inhomogeneous problem

    dv/ds = Lbar v + g(s),    g(s) = (L(t + s) - Lbar) v(t + s),

with ``Lbar`` the generator at the middle of the step.  The source ``g`` is
interpolated on Chebyshev-Lobatto points, converted to Taylor-like
coefficients ``g(s) = sum_n s**n / n! g_n``, and the Duhamel integral is
evaluated exactly:

    v(s) = sum_{j<M} s**j / j! v_j + s**M phi_M(s Lbar) v_M,
    v_0 = v(t),  v_{j+1} = Lbar v_j + g_j.

Only ``phi_M(s Lbar) v_M`` needs a function of a matrix; it is computed in a
K-dimensional Arnoldi subspace.  Because ``g`` depends on the unknown
solution, the step is iterated until successive sweeps agree.

All routines accept a single vector ``(n,)`` or a block of columns ``(n, c)``
(a whole propagator matrix is just a block of ``n`` columns).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

__all__ = [
    "PropagatorConfig",
    "PropagationError",
    "chebyshev_nodes",
    "phi_functions",
    "arnoldi",
    "expm_action_arnoldi",
    "StepResult",
    "step",
    "time_grid",
    "propagate",
    "propagate_map",
    "propagate_adjoint",
]

logger = logging.getLogger(__name__)

MAX_CHEB_POINTS = 12
_EPS = np.finfo(float).eps
_TAYLOR_RADIUS = 2.0


class PropagationError(RuntimeError):
    """A step failed to converge; ``residual`` is the last relative change."""

    def __init__(self, message, residual=None, time=None):
        super().__init__(message)
        self.residual = residual
        self.time = time


@dataclass(frozen=True)
class PropagatorConfig:
    """Accuracy knobs of the semi-global propagator.

    ``dt`` is the nominal step; grids are built with the smallest number of
    equal steps not longer than ``dt``.
    """

    dt: float = 0.1
    m_points: int = 7
    krylov_dim: int = 3
    refine_tol: float = 1e-12
    max_refine: int = 20

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 2 <= self.m_points <= MAX_CHEB_POINTS:
            raise ValueError(f"m_points must be in [2, {MAX_CHEB_POINTS}]")
        if self.krylov_dim < 1:
            raise ValueError("krylov_dim must be >= 1")
        if not self.refine_tol > 0:
            raise ValueError("refine_tol must be positive")
        if self.max_refine < 1:
            raise ValueError("max_refine must be >= 1")

    def check_dimension(self, n):
        if self.krylov_dim > n - 1:
            raise ValueError(
                f"krylov_dim={self.krylov_dim} exceeds the Liouville dimension minus one ({n - 1})"
            )


def chebyshev_nodes(t, dt, m):
    """Chebyshev-Lobatto points on ``[t, t + dt]`` in increasing order."""
    if m < 2:
        raise ValueError("need at least two Chebyshev points")
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = -np.cos(np.pi * np.arange(m) / (m - 1))
    x[0], x[-1] = -1.0, 1.0
    if m % 2:
        x[m // 2] = 0.0
    return t + 0.5 * dt * (x + 1.0)


def phi_functions(z, m_max):
    """``phi_0 .. phi_{m_max}`` at ``z`` (scalar or array).

    ``phi_m(z) = (e**z - sum_{j<m} z**j / j!) / z**m``.  Orders whose
    recursion ``phi_m = (phi_{m-1} - 1/(m-1)!) / z`` would cancel badly are
    summed from their Taylor series instead.  Returns an array of shape
    ``(m_max + 1,) + shape(z)``.
    """
    if m_max < 0:
        raise ValueError("m_max must be non-negative")
    z0 = np.asarray(z, dtype=complex)
    z = z0.reshape(-1)
    out = np.empty((m_max + 1,) + z.shape, dtype=complex)
    out[0] = np.exp(z)
    az = np.abs(z)
    for m in range(1, m_max + 1):
        fact = math.factorial(m - 1)
        direct = az**m > 0.25 * math.factorial(m)
        if np.any(direct):
            out[m][direct] = (out[m - 1][direct] - 1.0 / fact) / z[direct]
        small = ~direct
        if np.any(small):
            out[m][small] = _phi_taylor(z[small], m)
    return out.reshape((m_max + 1,) + z0.shape)


def _phi_taylor(z, m):
    # Horner form of sum_k z**k / (k + m)!; the term count covers max |z|
    r = float(np.max(np.abs(z))) if z.size else 0.0
    n_terms, term = 1, 1.0
    while term > _EPS and n_terms < 200:
        term *= r / (n_terms + m)
        n_terms += 1
    total = np.full(z.shape, 1.0 / math.factorial(m + n_terms - 1), dtype=complex)
    for k in range(n_terms - 2, -1, -1):
        total = total * z + 1.0 / math.factorial(m + k)
    return total


def _phi_order(z, m):
    """``phi_m`` alone; skips the lower orders when every ``|z|`` is small."""
    if np.max(np.abs(z), initial=0.0) <= 1.0:
        return _phi_taylor(np.asarray(z, dtype=complex), m)
    return phi_functions(z, m)[m]


def arnoldi(L, V0, K):
    """Arnoldi with two-pass Gram-Schmidt for a block of starting columns.

    ``V0`` has shape ``(n, c)``; every column gets its own Krylov space.
    Returns ``Q`` of shape ``(K, n, c)``, Hessenberg matrices ``H`` of shape
    ``(c, K, K)``, the column norms ``beta`` and a boolean flag per column
    telling whether the space became invariant (lucky breakdown).  Columns
    with zero norm get an all-zero basis.
    """
    V0 = np.asarray(V0)
    n, c = V0.shape
    K = min(K, n)
    dtype = np.result_type(L, V0, float)
    # work in (c, k, n) layout so batched matmul does the projections
    Q = np.zeros((c, K + 1, n), dtype=dtype)
    H = np.zeros((c, K + 1, K), dtype=dtype)
    beta = np.linalg.norm(V0, axis=0)
    alive = beta > 0
    Q[alive, 0] = (V0[:, alive] / beta[alive]).T
    breakdown = ~alive
    scale = max(np.linalg.norm(L, 1), 1e-300)
    for j in range(K):
        w = (L @ Q[:, j].T).T
        basis = Q[:, : j + 1]
        basis_h = basis.conj()
        for _ in range(2):
            h = np.matmul(basis_h, w[..., None])[..., 0]
            w = w - np.matmul(h[:, None, :], basis)[:, 0]
            H[:, : j + 1, j] += h
        hn = np.linalg.norm(w, axis=1)
        ok = (hn > 1e-13 * scale) & ~breakdown
        H[:, j + 1, j] = np.where(ok, hn, 0.0)
        Q[ok, j + 1] = w[ok] / hn[ok, None]
        breakdown = breakdown | ~ok
    return Q[:, :K].transpose(1, 2, 0), H[:, :K, :K], beta, breakdown


def _phi_krylov(H, s, m):
    """``phi_m(s_k H) e_1`` for a stack of small matrices.

    ``H``: ``(c, K, K)``; ``s``: ``(p,)`` times.  Returns ``(p, c, K)``.
    Diagonalizes each ``H`` and applies the scalar functions; falls back to
    an augmented-matrix exponential when the eigenvectors are ill conditioned.
    """
    c, K, _ = H.shape
    s = np.atleast_1d(s)
    r = float(np.max(np.abs(s))) * float(np.max(np.abs(H).sum(axis=1), initial=0.0))
    if r <= _TAYLOR_RADIUS:
        return _phi_krylov_taylor(H, s, m, r)
    out = np.empty((s.size, c, K), dtype=complex)
    lam, W = np.linalg.eig(H)
    cond = np.linalg.cond(W)
    good = np.isfinite(cond) & (cond < 1e6)
    if np.any(good):
        e1 = np.zeros((int(good.sum()), K), dtype=complex)
        e1[:, 0] = 1.0
        coef = np.linalg.solve(W[good], e1[..., None])[..., 0]
        z = s[:, None, None] * lam[good][None]
        ph = _phi_order(z, m)
        out[:, good] = np.einsum("gij,pgj->pgi", W[good], ph * coef[None])
    for ci in np.flatnonzero(~good):
        for pi, sk in enumerate(s):
            out[pi, ci] = _phi_dense(sk * H[ci], m)
    return out


def _phi_krylov_taylor(H, s, m, r):
    # Horner on sum_k (s H)**k e1 / (k + m)!, batched; r bounds ||s H||_1
    n_terms, term = 1, 1.0
    while term > _EPS and n_terms < 200:
        term *= r / (n_terms + m)
        n_terms += 1
    c, K, _ = H.shape
    A = s[:, None, None, None] * H[None]
    v = np.zeros((s.size, c, K), dtype=complex)
    v[..., 0] = 1.0 / math.factorial(m + n_terms - 1)
    for k in range(n_terms - 2, -1, -1):
        v = np.matmul(A, v[..., None])[..., 0]
        v[..., 0] += 1.0 / math.factorial(m + k)
    return v


def _phi_dense(A, m):
    # top-right block of expm([[A, e1 0..0], [0, J]]) holds phi_1..phi_m(A) e1
    K = A.shape[0]
    if m == 0:
        return scipy.linalg.expm(A)[:, 0]
    aug = np.zeros((K + m, K + m), dtype=complex)
    aug[:K, :K] = A
    aug[0, K] = 1.0
    aug[K:, K:] += np.eye(m, k=1)
    return scipy.linalg.expm(aug)[:K, K + m - 1]


def expm_action_arnoldi(L, v, t, K):
    """Approximate ``expm(L t) v`` in a ``K``-dimensional Krylov subspace.

    Exact (to rounding) once ``K`` reaches the degree of the minimal
    polynomial of ``L`` with respect to ``v``; the resulting lucky breakdown
    is logged.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    v = np.asarray(v)
    single = v.ndim == 1
    V = v[:, None] if single else v
    if not np.all(np.linalg.norm(V, axis=0) > 0):
        raise ValueError("starting vector must be non-zero")
    Q, H, beta, broke = arnoldi(np.asarray(L), V, K)
    if np.any(broke):
        logger.debug("Arnoldi lucky breakdown: Krylov space is invariant")
    y = _phi_krylov(H, np.array([t]), 0)[0]
    out = np.einsum("knc,ck->nc", Q, y) * beta
    out = _match_dtype(out, L, v)
    return out[:, 0] if single else out


def _match_dtype(x, *refs):
    if all(np.isrealobj(r) for r in refs):
        return x.real
    return x


@lru_cache(maxsize=None)
def _taylor_conversion(m):
    """Matrix mapping Lobatto-node values to monomial coefficients in ``u``.

    ``u = s / dt`` in ``[0, 1]``.  Node values -> Chebyshev coefficients in
    ``x = 2u - 1`` -> monomials in ``x`` (three-term recurrence) -> monomials
    in ``u``.
    """
    x = 2.0 * (chebyshev_nodes(0.0, 1.0, m)) - 1.0
    tvals = np.polynomial.chebyshev.chebvander(x, m - 1)
    cheb_from_nodes = np.linalg.inv(tvals)
    mono_x = np.zeros((m, m))
    mono_x[0, 0] = 1.0
    if m > 1:
        mono_x[1, 1] = 1.0
    for n in range(2, m):
        mono_x[n, 1:] = 2.0 * mono_x[n - 1, :-1]
        mono_x[n] -= mono_x[n - 2]
    # x**k = (2u - 1)**k
    shift = np.zeros((m, m))
    for k in range(m):
        for p in range(k + 1):
            shift[k, p] = math.comb(k, p) * 2.0**p * (-1.0) ** (k - p)
    # coefficient of u**p = sum_n b_n sum_k mono_x[n, k] shift[k, p]
    return (mono_x @ shift).T @ cheb_from_nodes


@dataclass
class StepResult:
    """Solution of one step together with what is needed to extrapolate."""

    value: np.ndarray
    sweeps: int
    residuals: list
    _taylor: np.ndarray = None
    _krylov: tuple = None
    _dt: float = None

    def evaluate(self, s):
        """Solution at offsets ``s`` from the step start (may exceed ``dt``)."""
        return _evaluate(self._taylor, self._krylov, np.atleast_1d(s))


def _evaluate(vj, krylov, s):
    m = vj.shape[0] - 1
    powers = np.array([[sk**j / math.factorial(j) for j in range(m)] for sk in s])
    out = np.einsum("pj,jnc->pnc", powers, vj[:m]).astype(complex)
    Q, H, beta = krylov
    if H.shape[1]:
        ph = _phi_krylov(H, s, m)
        out += (s**m)[:, None, None] * np.einsum("knc,pck->pnc", Q, ph) * beta
    return out


def _solve_step(Lbar, v, g, s, K):
    """Closed-form Duhamel solution for a polynomial source ``g`` (Taylor coefficients)."""
    m = g.shape[0]
    vj = np.empty((m + 1,) + v.shape, dtype=np.result_type(Lbar, v, g))
    vj[0] = v
    for j in range(m):
        vj[j + 1] = Lbar @ vj[j] + g[j]
    Q, H, beta, _ = arnoldi(Lbar, vj[m], K)
    krylov = (Q, H, beta)
    return vj, krylov, _evaluate(vj, krylov, s)


def step(generator, v, t, cfg, guess=None):
    """Advance ``v`` from ``t`` to ``t + cfg.dt``.

    ``generator`` is either a fixed matrix (piecewise-constant dynamics; the
    source term vanishes and a single sweep is exact) or a callable
    ``t -> L(t)``.  ``guess`` optionally supplies the solution at the
    Chebyshev points, shape ``(M, n, c)``; by default the initial value is
    frozen across the step.  Returns a :class:`StepResult`.
    """
    v = np.asarray(v)
    single = v.ndim == 1
    V = v[:, None] if single else v
    n = V.shape[0]
    m, dt = cfg.m_points, cfg.dt
    cfg.check_dimension(n)
    nodes = chebyshev_nodes(t, dt, m)
    s = nodes - t

    def _finish(vj, krylov, sweeps, residuals):
        end = _match_dtype(_evaluate(vj, krylov, np.array([dt]))[0], V, Lbar)
        end = end[:, 0] if single else end
        return StepResult(end, sweeps, residuals, vj, krylov, dt)

    if not callable(generator):
        Lbar = np.asarray(generator)
        g = np.zeros((m,) + V.shape, dtype=np.result_type(Lbar, V))
        vj, krylov, ends = _solve_step(Lbar, V, g, np.array([dt]), cfg.krylov_dim)
        end = _match_dtype(ends[0], V, Lbar)
        return StepResult(end[:, 0] if single else end, 1, [0.0], vj, krylov, dt)

    Lbar = np.asarray(generator(t + 0.5 * dt))
    dL = np.array([np.asarray(generator(tk)) - Lbar for tk in nodes])
    conv = _taylor_conversion(m)
    scale = np.array([math.factorial(p) / dt**p for p in range(m)])
    if guess is None:
        current = np.broadcast_to(V, (m,) + V.shape)
    else:
        current = np.asarray(guess).reshape((m,) + V.shape)
    residuals = []
    previous_end = None
    for sweep in range(1, cfg.max_refine + 1):
        src = np.einsum("kab,kbc->kac", dL, current)
        g = scale[:, None, None] * np.einsum("pk,knc->pnc", conv, src)
        vj, krylov, current = _solve_step(Lbar, V, g, s, cfg.krylov_dim)
        current[0] = V
        end = current[-1]
        if previous_end is not None:
            denom = max(np.linalg.norm(end), 1e-300)
            residuals.append(float(np.linalg.norm(end - previous_end) / denom))
            if residuals[-1] < cfg.refine_tol:
                return _finish(vj, krylov, sweep, residuals)
        previous_end = end
    last = residuals[-1] if residuals else None
    shown = f"{last:.3e}" if last is not None else "not measured"
    raise PropagationError(
        f"step at t={t:.6g} did not converge in {cfg.max_refine} sweeps (residual {shown})",
        residual=last,
        time=t,
    )


def time_grid(t0, T, dt):
    """Uniform grid from ``t0`` to ``T`` with steps no longer than ``dt``."""
    if not T > t0:
        raise ValueError("T must exceed t0")
    n_steps = max(1, int(math.ceil((T - t0) / dt - 1e-9)))
    return np.linspace(t0, T, n_steps + 1)


def propagate(generator, v0, t0, T, cfg, store=True):
    """Propagate ``v0`` over the grid ``time_grid(t0, T, cfg.dt)``.

    ``generator`` is a callable ``t -> L(t)``, a fixed matrix, or a
    sequence of per-step matrices (piecewise-constant dynamics).  Returns
    ``(times, states)`` with ``states[j]`` the solution at ``times[j]``
    (only the final state when ``store`` is false).
    """
    times = time_grid(t0, T, cfg.dt)
    dt = times[1] - times[0]
    step_cfg = _with_dt(cfg, dt)
    per_step = not callable(generator) and np.ndim(generator) == 3
    v = np.asarray(v0)
    states = [v] if store else None
    guess = None
    for j, t in enumerate(times[:-1]):
        gen = generator[j] if per_step else generator
        res = step(gen, v, t, step_cfg, guess=guess)
        v = res.value
        if callable(generator):
            guess = res.evaluate(dt + chebyshev_nodes(0.0, dt, cfg.m_points))
            if np.isrealobj(v):
                guess = guess.real
        if store:
            states.append(v)
    if store:
        return times, np.array(states)
    return times, v


def _with_dt(cfg, dt):
    if dt == cfg.dt:
        return cfg
    return PropagatorConfig(dt, cfg.m_points, cfg.krylov_dim, cfg.refine_tol, cfg.max_refine)


def propagate_map(generator, t0, T, cfg):
    """Dynamical map ``G(t_j)`` at every grid time, starting from the identity.

    Returns ``(times, maps)`` with ``maps`` of shape ``(n_steps + 1, n, n)``.
    """
    n = _generator_dim(generator, t0)
    return propagate(generator, np.eye(n), t0, T, cfg)


def propagate_adjoint(generator, T, t0, cfg, terminal):
    """Solve ``dY/dt = -L(t)^dag Y`` backward from ``Y(T) = terminal``.

    This keeps ``Tr(Y(t)^dag G(t))`` constant along any forward solution.
    Returns ``(times, ys)`` on the forward grid, ``ys[j]`` at ``times[j]``.
    """
    if callable(generator):
        def reverse(sigma):
            return np.asarray(generator(T - sigma)).conj().T
    elif np.ndim(generator) == 3:
        reverse = np.asarray(generator)[::-1].conj().transpose(0, 2, 1)
    else:
        reverse = np.asarray(generator).conj().T
    _, ys = propagate(reverse, np.asarray(terminal), 0.0, T - t0, cfg)
    times = time_grid(t0, T, cfg.dt)
    return times, ys[::-1]


def _generator_dim(generator, t0):
    if callable(generator):
        return np.asarray(generator(t0)).shape[0]
    return np.asarray(generator).shape[-1]
