"""Per-cell quadratically constrained group-LASSO solver.

One cell's beamformer subproblem is

    min  sum_i v_i^H J v_i - 2 Re(d_i^H v_i) + lam * sum_i sum_q ||v_i^q||
    s.t. sum_i ||v_i^q||^2 <= P_q   for every BS q

and is solved by cyclic exact minimization over the per-BS blocks
``{v_i^q}_i``. Each block is solved through its optimality conditions:
users whose residual satisfies ``||c_i|| <= lam/2`` are shrunk to zero, the
others take ``v = (J_qq + (lam*delta/2 + mu) I)^{-1} c`` where ``delta = 1/||v||``
is found by bisection for every trial multiplier ``mu``, and ``mu`` itself is
bisected against the power budget.

Both bisections run in the eigenbasis of ``J_qq``, where the block reduces to
the real quantities ``s`` (eigenvalues) and ``a_i = |E^H c_i|^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .network import ChannelSet

DEFAULT_BISECTION_TOL = 1e-8
_MAX_BISECTION_STEPS = 400
# relative size below which an eigenvalue of J_qq is treated as exactly zero
_NULL_EIG_RTOL = 1e-12


@dataclass
class QcGroupLassoInstance:
    """Data ``(J, d, lam, P)`` of one cell's subproblem.

    ``J`` is the ``(Q*M, Q*M)`` Hermitian PSD quadratic term, ``d`` the
    per-user linear terms with shape ``(I, Q, M)`` and ``P`` the per-BS
    budgets with shape ``(Q,)``.
    """

    J: np.ndarray
    d: np.ndarray
    lam: float
    P: np.ndarray
    dims: tuple = field(default=(), init=False)

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=complex)
        I, Q, M = self.d.shape
        self.J = np.asarray(self.J, dtype=complex)
        if self.J.shape != (Q * M, Q * M):
            raise ValueError(f"J has shape {self.J.shape}, expected {(Q * M, Q * M)}")
        self.P = np.broadcast_to(np.asarray(self.P, dtype=float), (Q,)).copy()
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if np.any(self.P <= 0):
            raise ValueError("power budgets must be positive")
        self.dims = (Q, I, M)

    @property
    def Q(self) -> int:
        return self.dims[0]

    @property
    def I(self) -> int:
        return self.dims[1]

    @property
    def M(self) -> int:
        return self.dims[2]

    @property
    def blocks(self) -> np.ndarray:
        """``J`` viewed as ``(Q, Q, M, M)`` with ``blocks[q, p] = J[q, p]``."""
        Q, _, M = self.dims
        return self.J.reshape(Q, M, Q, M).transpose(0, 2, 1, 3)

    def block(self, q: int, p: int) -> np.ndarray:
        M = self.M
        return self.J[q * M:(q + 1) * M, p * M:(p + 1) * M]

    def lambda_bar(self) -> float:
        """Smallest penalty that forces every block to zero from a zero start."""
        return 2.0 * float(np.max(np.linalg.norm(self.d, axis=-1), initial=0.0))


@dataclass
class BlockSolveState:
    mu: float
    delta: np.ndarray
    active: np.ndarray
    bounds: tuple
    tol: float


def build_instance(channels: ChannelSet, u: np.ndarray, w: np.ndarray, cell: int,
                   lam: float, P) -> QcGroupLassoInstance:
    """Assemble ``J_k = sum_j w_j H_j^H u_j u_j^H H_j`` over all users and ``d_i = w_i H_i^H u_i``."""
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    K, Q, I, M, N = channels.dims
    # rows u_j^H H^k_j for every user j in the network, shape (K, I, Q*M)
    a = np.einsum("ljn,ljqnm->ljqm", u.conj(), channels.h[:, :, cell]).reshape(K, I, Q * M)
    J = np.einsum("lj,ljx,ljy->xy", w, a.conj(), a)
    J = 0.5 * (J + J.conj().T)
    d = (w[cell][:, None] * a[cell].conj()).reshape(I, Q, M)
    return QcGroupLassoInstance(J=J, d=d, lam=float(lam), P=P)


def residual_c(instance: QcGroupLassoInstance, v: np.ndarray, bs: int, user: int) -> np.ndarray:
    """``c = d_i[q] - sum_{p != q} J[q, p] v_i^p``."""
    return residuals(instance, v, bs)[user]


def residuals(instance: QcGroupLassoInstance, v: np.ndarray, bs: int) -> np.ndarray:
    """Residuals of every user at BS ``bs``, shape ``(I, M)``."""
    others = np.arange(instance.Q) != bs
    coupled = np.einsum("pmn,ipn->im", instance.blocks[bs][others], v[:, others])
    return instance.d[:, bs] - coupled


def shrink_test(c: np.ndarray, lam: float) -> bool:
    """True when the block is forced to zero, i.e. ``||c|| <= lam/2``."""
    return bool(np.linalg.norm(c) <= lam / 2.0)


def h_value(J_qq: np.ndarray, c: np.ndarray, lam: float, delta: float, mu: float) -> float:
    """``delta * ||(J_qq + (lam*delta/2 + mu) I)^{-1} c||``."""
    M = J_qq.shape[0]
    x = np.linalg.solve(J_qq + (lam * delta / 2.0 + mu) * np.eye(M), c)
    return float(delta * np.linalg.norm(x))


def mu_upper_bound(c_norms: np.ndarray, P: float) -> float:
    """Multiplier bracket guaranteeing the budget is met (twice the strict lower limit)."""
    c_norms = np.asarray(c_norms, dtype=float)
    return 2.0 * math.sqrt(c_norms.size / P) * float(c_norms.max())


def delta_upper_bound(rho: float, mu_bar: float, c_norm: float, lam: float) -> float:
    """Bracket for ``delta`` valid for every multiplier in ``[0, mu_bar]``."""
    return 2.0 * (rho + mu_bar) / (c_norm - lam / 2.0)


# -- compiled bisection kernels (eigenbasis) --------------------------------

@njit(cache=True)
def _norm_sq(s, a, t):
    total = 0.0
    for m in range(s.shape[0]):
        if a[m] == 0.0:
            continue
        den = s[m] + t
        if den <= 0.0:
            return np.inf
        total += a[m] / (den * den)
    return total


@njit(cache=True)
def _bisect_delta(s, a, lam, mu, hi, tol, max_steps):
    lo = 0.0
    for _ in range(max_steps):
        if hi - lo <= tol * hi:
            break
        mid = 0.5 * (lo + hi)
        h = mid * math.sqrt(_norm_sq(s, a, 0.5 * lam * mid + mu))
        if h < 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@njit(cache=True)
def _power(s, a, cn, lam, mu, mu_bound, tol, max_steps, deltas):
    """Total block power ``sum_i ||v_i(mu)||^2``; fills ``deltas`` when ``lam > 0``."""
    rho = s.max()
    total = 0.0
    for i in range(a.shape[0]):
        if lam > 0.0:
            num = rho + mu_bound
            if num <= 0.0:
                # J_qq = 0 and mu = 0: h is constant above one, norm unbounded
                deltas[i] = 0.0
                return np.inf
            hi = 2.0 * num / (cn[i] - 0.5 * lam)
            d = _bisect_delta(s, a[i], lam, mu, hi, tol, max_steps)
            deltas[i] = d
            total += 1.0 / (d * d)
        else:
            total += _norm_sq(s, a[i], mu)
    return total


@njit(cache=True)
def _solve_block(s, a, cn, lam, P, tol, max_steps):
    A = a.shape[0]
    deltas = np.empty(A)
    if _power(s, a, cn, lam, 0.0, 0.0, tol, max_steps, deltas) <= P:
        return 0.0, deltas, 0.0, 0.0
    mu_bar = 2.0 * math.sqrt(A / P) * cn.max()
    lo = 0.0
    hi = mu_bar
    tol_mu = tol * (1.0 + mu_bar)
    for _ in range(max_steps):
        if hi - lo <= tol_mu:
            break
        mid = 0.5 * (lo + hi)
        if _power(s, a, cn, lam, mid, mu_bar, tol, max_steps, deltas) < P:
            hi = mid
        else:
            lo = mid
    # the upper end of the bracket is always feasible
    _power(s, a, cn, lam, hi, mu_bar, tol, max_steps, deltas)
    return hi, deltas, lo, mu_bar


@njit(cache=True)
def _cyclic_pass(Jb, d, v, s_all, E_all, lam, P, allowed, tol, max_steps, mus, bounds, active_out):
    """One sweep of exact block updates over BSs ``0..Q-1``, in place on ``v``.

    Same arithmetic as ``block_update`` with explicit loops; returns the
    largest change of a single ``(user, BS)`` block.
    """
    I, Q, M = d.shape
    change = 0.0
    c = np.empty((I, M), dtype=np.complex128)
    cn = np.empty(I)
    for q in range(Q):
        for i in range(I):
            for m in range(M):
                acc = d[i, q, m]
                for p in range(Q):
                    if p == q:
                        continue
                    for n in range(M):
                        acc -= Jb[q, p, m, n] * v[i, p, n]
                c[i, m] = acc
            total = 0.0
            for m in range(M):
                total += c[i, m].real ** 2 + c[i, m].imag ** 2
            cn[i] = math.sqrt(total)
            active_out[i, q] = cn[i] > 0.5 * lam and allowed[i, q]
        idx = np.flatnonzero(active_out[:, q])
        A = idx.size
        new = np.zeros((I, M), dtype=np.complex128)
        mu = 0.0
        mu_lo = 0.0
        mu_hi = 0.0
        delta_hi = 0.0
        if A > 0:
            s = s_all[q]
            E = E_all[q]
            chat = np.zeros((A, M), dtype=np.complex128)
            a = np.zeros((A, M))
            cn_act = np.empty(A)
            for r in range(A):
                i = idx[r]
                cn_act[r] = cn[i]
                row_sum = 0.0
                for m in range(M):
                    acc = 0j
                    for n in range(M):
                        acc += c[i, n] * np.conj(E[n, m])
                    chat[r, m] = acc
                    a[r, m] = acc.real ** 2 + acc.imag ** 2
                    row_sum += a[r, m]
                # components in the null space of J_qq that are pure roundoff
                for m in range(M):
                    if s[m] == 0.0 and a[r, m] <= _NULL_EIG_RTOL * row_sum:
                        a[r, m] = 0.0
            mu, deltas, mu_lo, mu_hi = _solve_block(s, a, cn_act, lam, P[q], tol, max_steps)
            power = 0.0
            for r in range(A):
                t = 0.5 * lam * deltas[r] + mu if lam > 0.0 else mu
                i = idx[r]
                for n in range(M):
                    acc = 0j
                    for m in range(M):
                        den = s[m] + t
                        if den > 0.0:
                            acc += chat[r, m] / den * E[n, m]
                    new[i, n] = acc
                    power += acc.real ** 2 + acc.imag ** 2
            if power > P[q] or (mu > 0.0 and power > 0.0):
                # a positive multiplier means the budget binds; land on it exactly
                scale = math.sqrt(P[q] / power)
                for r in range(A):
                    for n in range(M):
                        new[idx[r], n] *= scale
            if lam > 0.0:
                for r in range(A):
                    delta_hi = max(delta_hi, 2.0 * (s.max() + mu_hi) / (cn_act[r] - 0.5 * lam))
        for i in range(I):
            diff = 0.0
            for m in range(M):
                z = new[i, m] - v[i, q, m]
                diff += z.real ** 2 + z.imag ** 2
                v[i, q, m] = new[i, m]
            change = max(change, math.sqrt(diff))
        mus[q] = mu
        bounds[q, 0] = mu_lo
        bounds[q, 1] = mu_hi
        bounds[q, 3] = delta_hi
    return change


def _eig(J_qq: np.ndarray):
    s, E = np.linalg.eigh(J_qq)
    scale = max(1.0, float(s[-1])) if s.size else 1.0
    s = np.where(s <= _NULL_EIG_RTOL * scale, 0.0, s)
    return s, E


def _rotate(E: np.ndarray, s: np.ndarray, c: np.ndarray):
    chat = c @ E.conj()
    a = np.abs(chat) ** 2
    # components in the null space of J_qq that are pure roundoff
    tiny = _NULL_EIG_RTOL * np.sum(a, axis=1, keepdims=True)
    a = np.where((s == 0.0) & (a <= tiny), 0.0, a)
    return chat, a


def solve_delta(J_qq: np.ndarray, c: np.ndarray, lam: float, mu: float,
                tol: float = DEFAULT_BISECTION_TOL) -> float:
    """Root of ``h(delta, mu) = 1`` for an active block (``||c|| > lam/2``, ``lam > 0``)."""
    c = np.asarray(c, dtype=complex)
    cn = float(np.linalg.norm(c))
    if lam <= 0:
        raise ValueError("solve_delta needs lam > 0")
    if cn <= lam / 2.0:
        raise ValueError("block is shrunk to zero (||c|| <= lam/2); no delta to solve")
    s, E = _eig(np.asarray(J_qq, dtype=complex))
    _, a = _rotate(E, s, c[None, :])
    deltas = np.empty(1)
    _power(s, a, np.array([cn]), float(lam), float(mu), float(mu), tol, _MAX_BISECTION_STEPS, deltas)
    return float(deltas[0])


def block_update(instance: QcGroupLassoInstance, v: np.ndarray, bs: int,
                 tol: float = DEFAULT_BISECTION_TOL, allowed: np.ndarray | None = None,
                 eig=None) -> tuple[np.ndarray, BlockSolveState]:
    """Exactly minimize over the blocks ``{v_i^bs}_i`` with all other BSs fixed.

    ``allowed`` optionally masks users this BS may serve; masked blocks stay
    zero. Returns the new ``(I, M)`` blocks and the multiplier state.
    """
    lam = instance.lam
    P = float(instance.P[bs])
    c = residuals(instance, v, bs)
    cn = np.linalg.norm(c, axis=1)
    active = cn > lam / 2.0
    if allowed is not None:
        active &= allowed
    new = np.zeros((instance.I, instance.M), dtype=complex)
    if not active.any():
        return new, BlockSolveState(0.0, np.empty(0), active, (0.0, 0.0, 0.0, 0.0), tol)

    s, E = eig if eig is not None else _eig(instance.block(bs, bs))
    chat, a = _rotate(E, s, c[active])
    mu, deltas, mu_lo, mu_hi = _solve_block(s, a, cn[active], float(lam), P, tol, _MAX_BISECTION_STEPS)
    t = 0.5 * lam * deltas + mu if lam > 0 else np.full(a.shape[0], mu)
    den = s[None, :] + t[:, None]
    coef = np.divide(chat, den, out=np.zeros_like(chat), where=den > 0)
    blocks = coef @ E.T
    power = float(np.sum(np.abs(blocks) ** 2))
    if power > P or (mu > 0 and power > 0):
        # a positive multiplier means the budget binds; land on it exactly
        blocks *= math.sqrt(P / power)
    new[active] = blocks
    norms = np.linalg.norm(blocks, axis=1)
    delta = np.divide(1.0, norms, out=np.full_like(norms, np.inf), where=norms > 0)
    delta_hi = 0.0
    if lam > 0:
        delta_hi = float(np.max(2.0 * (s.max() + mu_hi) / (cn[active] - lam / 2.0)))
    return new, BlockSolveState(mu, delta, active, (mu_lo, mu_hi, 0.0, delta_hi), tol)


def scalar_block_update(J_qq: float, c: complex, lam: float, P: float) -> complex:
    """Closed-form block update for a single-antenna BS serving a single user."""
    mag = abs(c)
    if mag <= lam / 2.0:
        return 0j
    direction = c / mag
    if J_qq > 0:
        unconstrained = (mag - lam / 2.0) / J_qq
        if unconstrained <= math.sqrt(P):
            return unconstrained * direction
    return math.sqrt(P) * direction


def p3_objective(instance: QcGroupLassoInstance, v: np.ndarray) -> float:
    I, Q, M = v.shape
    flat = v.reshape(I, Q * M)
    quad = np.real(np.einsum("ix,xy,iy->", flat.conj(), instance.J, flat))
    lin = 2.0 * np.real(np.sum(flat.conj() * instance.d.reshape(I, Q * M)))
    return float(quad - lin + instance.lam * np.sum(np.linalg.norm(v, axis=-1)))


@dataclass
class P3Result:
    v: np.ndarray
    passes: int
    converged: bool
    states: list = field(default_factory=list)


def solve_p3(instance: QcGroupLassoInstance, v_init: np.ndarray, inner_tol: float | None = None,
             max_passes: int = 50, bisection_tol: float = DEFAULT_BISECTION_TOL,
             allowed: np.ndarray | None = None) -> P3Result:
    """Cyclic block minimization over BSs ``0..Q-1`` until the largest block change is below ``inner_tol``.

    ``allowed`` is an optional ``(I, Q)`` mask of permitted (user, BS) blocks.
    """
    Q, I, M = instance.dims
    if inner_tol is None:
        inner_tol = 1e-6 * math.sqrt(float(instance.P.min()))
    v = np.array(v_init, dtype=complex, copy=True)
    if allowed is None:
        allowed = np.ones((I, Q), dtype=bool)
    v[~allowed] = 0.0
    Jb = np.ascontiguousarray(instance.blocks)
    s_all, E_all = np.linalg.eigh(Jb[np.arange(Q), np.arange(Q)])
    s_all = np.where(s_all <= _NULL_EIG_RTOL * np.maximum(1.0, s_all[:, -1:]), 0.0, s_all)
    E_all = np.ascontiguousarray(E_all)
    d = np.ascontiguousarray(instance.d)
    allowed = np.ascontiguousarray(allowed, dtype=bool)
    mus = np.zeros(Q)
    bounds = np.zeros((Q, 4))
    active = np.zeros((I, Q), dtype=bool)
    converged = False
    passes = 0
    for passes in range(1, max_passes + 1):
        change = _cyclic_pass(Jb, d, v, s_all, E_all, float(instance.lam), instance.P, allowed,
                              bisection_tol, _MAX_BISECTION_STEPS, mus, bounds, active)
        if change < inner_tol:
            converged = True
            break
    states = []
    for q in range(Q):
        norms = np.linalg.norm(v[active[:, q], q], axis=1)
        delta = np.divide(1.0, norms, out=np.full_like(norms, np.inf), where=norms > 0)
        states.append(BlockSolveState(float(mus[q]), delta, active[:, q].copy(), tuple(bounds[q]),
                                      bisection_tol))
    return P3Result(v=v, passes=passes, converged=converged, states=states)
