"""Per-user signal quantities: covariance, MMSE receiver, MSE, rate, objectives.

Array conventions used throughout the package:

* beamformers ``v``: complex ``(K, I, Q, M)``; ``v[k, i, q]`` is the block BS
  ``q`` of cell ``k`` uses for its own user ``i``.
* receivers ``u``: complex ``(K, I, N)``.
* weights ``w``: real ``(K, I)``.
* ``sigma2`` may be a scalar or a ``(K, I)`` array.

Rates are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import ChannelSet

MMSE_FLOOR = 1e-300


@dataclass(frozen=True)
class UtilityModel:
    """Per-user utility ``u(R)`` with its derivative ``du/dR``."""

    kind: str = "sum_rate"
    weights: np.ndarray | None = None
    rate_floor: float = 1e-12

    @classmethod
    def sum_rate(cls) -> "UtilityModel":
        return cls("sum_rate")

    @classmethod
    def weighted_sum_rate(cls, weights) -> "UtilityModel":
        weights = np.asarray(weights, dtype=float)
        if np.any(weights <= 0):
            raise ValueError("weighted sum rate needs positive user weights")
        return cls("weighted_sum_rate", weights)

    @classmethod
    def proportional_fair(cls, rate_floor: float = 1e-12) -> "UtilityModel":
        return cls("proportional_fair", rate_floor=rate_floor)

    def value(self, rates: np.ndarray) -> np.ndarray:
        rates = np.asarray(rates, dtype=float)
        if self.kind == "sum_rate":
            return rates.copy()
        if self.kind == "weighted_sum_rate":
            return self.weights * rates
        if self.kind == "proportional_fair":
            return np.log(np.maximum(rates, self.rate_floor))
        raise ValueError(f"unknown utility kind {self.kind!r}")

    def derivative(self, rates: np.ndarray) -> np.ndarray:
        rates = np.asarray(rates, dtype=float)
        if self.kind == "sum_rate":
            return np.ones_like(rates)
        if self.kind == "weighted_sum_rate":
            return np.broadcast_to(self.weights, rates.shape).astype(float)
        if self.kind == "proportional_fair":
            return 1.0 / np.maximum(rates, self.rate_floor)
        raise ValueError(f"unknown utility kind {self.kind!r}")

    def floored(self, rates: np.ndarray) -> np.ndarray:
        """Mask of users whose utility was evaluated at the rate floor."""
        if self.kind != "proportional_fair":
            return np.zeros(np.shape(rates), dtype=bool)
        return np.asarray(rates) < self.rate_floor


@dataclass(frozen=True)
class LinkStats:
    covariance: np.ndarray
    mse: float
    rate: float


def _noise(sigma2, K: int, I: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(sigma2, dtype=float), (K, I))


def received_signals(channels: ChannelSet, v: np.ndarray) -> np.ndarray:
    """Effective signal vectors ``g[k, i, l, j] = H^l_{i_k} v_{j_l}`` of shape (K, I, K, I, N)."""
    if v.shape != (channels.K, channels.I, channels.Q, channels.M):
        raise ValueError(f"beamformer shape {v.shape} does not match channels {channels.dims}")
    return np.einsum("kilqnm,ljqm->kiljn", channels.h, v)


def covariances(channels: ChannelSet, v: np.ndarray, sigma2, g: np.ndarray | None = None) -> np.ndarray:
    """Received covariance of every user, shape (K, I, N, N)."""
    if g is None:
        g = received_signals(channels, v)
    K, I, N = channels.K, channels.I, channels.N
    c = np.einsum("kiljn,kiljm->kinm", g, g.conj())
    c += _noise(sigma2, K, I)[:, :, None, None] * np.eye(N)
    return c


def own_signals(g: np.ndarray) -> np.ndarray:
    K, I = g.shape[:2]
    kk, ii = np.meshgrid(np.arange(K), np.arange(I), indexing="ij")
    return g[kk, ii, kk, ii]


def received_covariance(channels: ChannelSet, v: np.ndarray, sigma2, user) -> np.ndarray:
    k, i = user
    g = np.einsum("lqnm,ljqm->ljn", channels.h[k, i], v)
    cov = np.einsum("ljn,ljm->nm", g, g.conj())
    return cov + _noise(sigma2, channels.K, channels.I)[k, i] * np.eye(channels.N)


def mmse_receiver(covariance: np.ndarray, channel: np.ndarray, v_user: np.ndarray) -> np.ndarray:
    """``u = C^{-1} H v`` for one user."""
    return np.linalg.solve(covariance, channel @ v_user)


def mmse_receivers(channels: ChannelSet, v: np.ndarray, sigma2) -> np.ndarray:
    g = received_signals(channels, v)
    cov = covariances(channels, v, sigma2, g)
    return np.linalg.solve(cov, own_signals(g)[..., None])[..., 0]


def mse_all(channels: ChannelSet, v: np.ndarray, u: np.ndarray, sigma2) -> np.ndarray:
    """MSE of every user for arbitrary receivers ``u``, shape (K, I)."""
    g = received_signals(channels, v)
    s = np.einsum("kin,kiljn->kilj", u.conj(), g)
    own = own_signals(s[..., None])[..., 0]
    total = np.sum(np.abs(s) ** 2, axis=(2, 3)) - np.abs(own) ** 2
    noise = _noise(sigma2, channels.K, channels.I) * np.sum(np.abs(u) ** 2, axis=-1)
    return np.abs(1.0 - own) ** 2 + total + noise


def mse(channels: ChannelSet, v: np.ndarray, u: np.ndarray, sigma2, user) -> float:
    k, i = user
    return float(mse_all(channels, v, u, sigma2)[k, i])


def mmse_values(channels: ChannelSet, v: np.ndarray, sigma2) -> np.ndarray:
    """Minimum MSE ``1 - v^H H^H C^{-1} H v`` of every user, shape (K, I)."""
    g = received_signals(channels, v)
    cov = covariances(channels, v, sigma2, g)
    own = own_signals(g)
    x = np.linalg.solve(cov, own[..., None])[..., 0]
    return 1.0 - np.real(np.einsum("kin,kin->ki", own.conj(), x))


def mmse_value(channels: ChannelSet, v: np.ndarray, sigma2, user) -> float:
    k, i = user
    return float(mmse_values(channels, v, sigma2)[k, i])


def user_rates(channels: ChannelSet, v: np.ndarray, sigma2) -> np.ndarray:
    """Achievable rate of every user in nats, shape (K, I).

    Evaluated as ``log|C| - log|C - g g^H|``, which is the determinant form of
    the single-stream rate with interference treated as noise.
    """
    g = received_signals(channels, v)
    cov = covariances(channels, v, sigma2, g)
    own = own_signals(g)
    interference = cov - np.einsum("kin,kim->kinm", own, own.conj())
    _, logdet_total = np.linalg.slogdet(cov)
    _, logdet_int = np.linalg.slogdet(interference)
    return np.maximum(logdet_total - logdet_int, 0.0)


def user_rate(channels: ChannelSet, v: np.ndarray, sigma2, user) -> float:
    k, i = user
    return float(user_rates(channels, v, sigma2)[k, i])


def link_stats(channels: ChannelSet, v: np.ndarray, u: np.ndarray, sigma2, user) -> LinkStats:
    k, i = user
    return LinkStats(
        covariance=received_covariance(channels, v, sigma2, user),
        mse=mse(channels, v, u, sigma2, user),
        rate=user_rate(channels, v, sigma2, user),
    )


def block_norms(v: np.ndarray) -> np.ndarray:
    """``||v[k, i, q]||`` for every block, shape (K, I, Q)."""
    return np.linalg.norm(v, axis=-1)


def per_bs_power(v: np.ndarray) -> np.ndarray:
    """Transmit power of every BS, shape (K, Q)."""
    return np.sum(np.abs(v) ** 2, axis=(1, 3))


def penalty(v: np.ndarray, lam) -> float:
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (v.shape[0],))
    return float(np.sum(lam * block_norms(v).sum(axis=(1, 2))))


def objective_p1(channels: ChannelSet, v: np.ndarray, utility: UtilityModel, lam, sigma2) -> float:
    """Penalized utility ``sum u(R) - sum_k lam_k sum ||v^q_i||``."""
    rates = user_rates(channels, v, sigma2)
    return float(np.sum(utility.value(rates))) - penalty(v, lam)


def objective_p2_sumrate(channels: ChannelSet, v: np.ndarray, u: np.ndarray, w: np.ndarray,
                         lam, sigma2) -> float:
    """Regularized weighted sum-MSE ``sum (w e - log w) + penalty`` for the sum-rate utility."""
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    e = mse_all(channels, v, u, sigma2)
    return float(np.sum(w * e - np.log(w))) + penalty(v, lam)
