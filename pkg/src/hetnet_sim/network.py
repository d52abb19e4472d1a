"""Network topology and channel generation for the multicell HetNet model.

Channels are stored as a single complex array ``h`` of shape
``(K, I, K, Q, N, M)``: ``h[k, i, l, q]`` is the ``N x M`` matrix from BS
``q`` of cell ``l`` to user ``i`` of cell ``k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Substream tags; one generator per (seed, tag, indices) so that growing the
# network never perturbs the samples of existing entities.
_TAG_BS = 1
_TAG_USER = 2
_TAG_LINK = 3

REFERENCE_DISTANCE_M = 200.0
PATHLOSS_EXPONENT = 3.0


@dataclass(frozen=True)
class NetworkConfig:
    K: int = 1
    Q: int = 1
    I: int = 1
    M: int = 1
    N: int = 1
    P: float = 1.0
    noise_power: float = 1.0
    cell_spacing_m: float = 2000.0
    min_link_distance_m: float = 35.0
    shadowing_sigma_db: float = 8.0
    seed: int = 0

    def __post_init__(self):
        for name in ("K", "Q", "I", "M", "N"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.P > 0:
            raise ValueError("P must be positive")
        if not self.noise_power > 0:
            raise ValueError("noise_power must be positive")
        if not self.cell_spacing_m > 0:
            raise ValueError("cell_spacing_m must be positive")
        if not self.min_link_distance_m > 0:
            raise ValueError("min_link_distance_m must be positive")
        if self.shadowing_sigma_db < 0:
            raise ValueError("shadowing_sigma_db must be nonnegative")

    @property
    def n_users(self) -> int:
        return self.K * self.I


@dataclass(frozen=True)
class Topology:
    cell_centers: np.ndarray  # (K, 2)
    bs_positions: np.ndarray  # (K, Q, 2)
    user_positions: np.ndarray  # (K, I, 2)

    def distances(self) -> np.ndarray:
        """Raw user-to-BS distances, shape ``(K, I, K, Q)``."""
        diff = (self.user_positions[:, :, None, None, :]
                - self.bs_positions[None, None, :, :, :])
        return np.linalg.norm(diff, axis=-1)


@dataclass(frozen=True)
class ChannelSet:
    h: np.ndarray
    dims: tuple = field(default=())

    def __post_init__(self):
        if self.h.ndim != 6:
            raise ValueError("channel array must have shape (K, I, K, Q, N, M)")
        K, I, K2, Q, N, M = self.h.shape
        if K != K2:
            raise ValueError("inconsistent cell count in channel array")
        if not np.all(np.isfinite(self.h)):
            raise ValueError("channel entries must be finite")
        object.__setattr__(self, "dims", (K, Q, I, M, N))

    @property
    def K(self) -> int:
        return self.dims[0]

    @property
    def Q(self) -> int:
        return self.dims[1]

    @property
    def I(self) -> int:
        return self.dims[2]

    @property
    def M(self) -> int:
        return self.dims[3]

    @property
    def N(self) -> int:
        return self.dims[4]

    def cell_channel(self, user: tuple[int, int], cell: int) -> np.ndarray:
        """Concatenated ``N x MQ`` channel from all BSs of ``cell`` to ``user``."""
        k, i = user
        blocks = self.h[k, i, cell]
        return np.concatenate(list(blocks), axis=1)


def _substream(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *path]))


def hex_centers(K: int, spacing: float) -> np.ndarray:
    """First ``K`` points of a hexagonal lattice, nearest to the origin first."""
    rings = 1
    while 3 * rings * (rings + 1) + 1 < K:
        rings += 1
    pts = []
    for a in range(-rings, rings + 1):
        for b in range(-rings, rings + 1):
            x = spacing * (a + 0.5 * b)
            y = spacing * (math.sqrt(3.0) / 2.0) * b
            r = math.hypot(x, y)
            ang = math.atan2(y, x) % (2 * math.pi)
            pts.append((round(r / spacing, 9), round(ang, 9), x, y))
    pts.sort()
    return np.array([[p[2], p[3]] for p in pts[:K]], dtype=float)


def _uniform_disk(rng: np.random.Generator, center: np.ndarray, radius: float) -> np.ndarray:
    r = radius * math.sqrt(rng.random())
    theta = 2 * math.pi * rng.random()
    return center + r * np.array([math.cos(theta), math.sin(theta)])


def generate_topology(config: NetworkConfig) -> Topology:
    centers = hex_centers(config.K, config.cell_spacing_m)
    radius = config.cell_spacing_m / 2.0
    bs = np.empty((config.K, config.Q, 2))
    users = np.empty((config.K, config.I, 2))
    for k in range(config.K):
        for q in range(config.Q):
            bs[k, q] = _uniform_disk(_substream(config.seed, _TAG_BS, k, q), centers[k], radius)
        for i in range(config.I):
            users[k, i] = _uniform_disk(_substream(config.seed, _TAG_USER, k, i), centers[k], radius)
    return Topology(cell_centers=centers, bs_positions=bs, user_positions=users)


def link_variance(distance: float | np.ndarray, shadowing: float | np.ndarray = 1.0,
                  min_distance: float = 0.0):
    """Per real/imaginary dimension variance ``(200/d)^3 * L``."""
    d = np.maximum(distance, min_distance)
    return (REFERENCE_DISTANCE_M / d) ** PATHLOSS_EXPONENT * shadowing


def generate_channels(topology: Topology, config: NetworkConfig) -> ChannelSet:
    K, Q, I, M, N = config.K, config.Q, config.I, config.M, config.N
    dist = topology.distances()
    h = np.empty((K, I, K, Q, N, M), dtype=complex)
    for k in range(K):
        for i in range(I):
            for l in range(K):
                for q in range(Q):
                    rng = _substream(config.seed, _TAG_LINK, k, i, l, q)
                    shadow_db = config.shadowing_sigma_db * rng.standard_normal()
                    var = link_variance(dist[k, i, l, q], 10.0 ** (shadow_db / 10.0),
                                        config.min_link_distance_m)
                    g = rng.standard_normal((N, M, 2))
                    h[k, i, l, q] = math.sqrt(var) * (g[..., 0] + 1j * g[..., 1])
    return ChannelSet(h)


def snr_of(config: NetworkConfig) -> float:
    """Linear SNR, defined as the per-cell total budget ``P * Q``."""
    return config.P * config.Q


def power_for_snr_db(snr_db: float, Q: int) -> float:
    return 10.0 ** (snr_db / 10.0) / Q
