"""Comparison schemes: full per-cell WMMSE, nearest-BS WMMSE and greedy-cluster ZF."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .network import ChannelSet, NetworkConfig, Topology
from .signals import UtilityModel
from .swmmse import SwmmseParams, SwmmseResult, swmmse


@dataclass(frozen=True)
class ZfConfig:
    cluster_size: int = 1
    drop_policy: str = "weakest_direct_channel"

    def check(self, Q: int):
        if not 1 <= self.cluster_size <= Q:
            raise ValueError(f"cluster_size must lie in [1, {Q}]")


@dataclass(frozen=True)
class FixedAssignment:
    serving: np.ndarray  # (K, I) BS index within the user's own cell

    def mask(self, Q: int) -> np.ndarray:
        K, I = self.serving.shape
        out = np.zeros((K, I, Q), dtype=bool)
        kk, ii = np.meshgrid(np.arange(K), np.arange(I), indexing="ij")
        out[kk, ii, self.serving] = True
        return out


@dataclass(frozen=True)
class ZfClustering:
    clusters: tuple  # per cell, a tuple of BS-index tuples
    user_cluster: np.ndarray  # (K, I) cluster index within the cell


def wmmse_full(channels: ChannelSet, config: NetworkConfig, utility: UtilityModel | None = None,
               params: SwmmseParams | None = None) -> SwmmseResult:
    """Unregularized WMMSE with every BS of a cell pooled into one virtual BS."""
    params = dataclasses.replace(params or SwmmseParams(), lambda_policy="fixed", lambda_values=0.0)
    return swmmse(channels, config, utility, params)


def nn_assignment(topology: Topology) -> FixedAssignment:
    """Nearest BS of the user's own cell; ties go to the lowest BS index."""
    K, I = topology.user_positions.shape[:2]
    serving = np.empty((K, I), dtype=int)
    for k in range(K):
        dist = np.linalg.norm(topology.user_positions[k][:, None, :]
                              - topology.bs_positions[k][None, :, :], axis=-1)
        serving[k] = np.argmin(dist, axis=1)
    return FixedAssignment(serving)


def wmmse_nn(channels: ChannelSet, config: NetworkConfig, utility: UtilityModel | None = None,
             params: SwmmseParams | None = None, assignment: FixedAssignment | None = None) -> SwmmseResult:
    """WMMSE restricted to one serving BS per user."""
    if assignment is None:
        raise ValueError("wmmse_nn needs a FixedAssignment")
    params = dataclasses.replace(params or SwmmseParams(), lambda_policy="fixed", lambda_values=0.0)
    return swmmse(channels, config, utility, params, allowed=assignment.mask(config.Q))


def zf_greedy_clusters(topology: Topology, channels: ChannelSet, zf_config: ZfConfig) -> ZfClustering:
    """Greedy fixed-size BS clusters per cell; users join the cluster with the strongest channel."""
    K, Q, I = channels.K, channels.Q, channels.I
    zf_config.check(Q)
    clusters = []
    user_cluster = np.empty((K, I), dtype=int)
    for k in range(K):
        pos = topology.bs_positions[k]
        free = list(range(Q))
        cell = []
        while free:
            seed = free[0]
            rest = sorted(free[1:], key=lambda q: (float(np.linalg.norm(pos[q] - pos[seed])), q))
            members = tuple(sorted([seed] + rest[:zf_config.cluster_size - 1]))
            cell.append(members)
            free = [q for q in free if q not in members]
        clusters.append(tuple(cell))
        for i in range(I):
            strength = [direct_channel_norm(channels, (k, i), members) for members in cell]
            user_cluster[k, i] = int(np.argmax(strength))
    return ZfClustering(tuple(clusters), user_cluster)


def direct_channel_norm(channels: ChannelSet, user, members) -> float:
    """Spectral norm of the concatenated ``N x (|members| M)`` channel from the cluster to ``user``."""
    k, i = user
    return float(np.linalg.norm(np.concatenate(list(channels.h[k, i, k, list(members)]), axis=1), ord=2))


def served_users(clustering: ZfClustering, channels: ChannelSet, cell: int, cluster: int) -> list:
    """Users kept by a cluster after dropping the weakest until ZF is feasible."""
    members = clustering.clusters[cell][cluster]
    users = [i for i in range(channels.I) if clustering.user_cluster[cell, i] == cluster]
    n_tx = len(members) * channels.M
    users.sort(key=lambda i: (-direct_channel_norm(channels, (cell, i), members), i))
    while users and len(users) * channels.N > n_tx:
        users.pop()
    return sorted(users)


def _null_space(a: np.ndarray, n_cols: int) -> np.ndarray:
    if a.shape[0] == 0:
        return np.eye(n_cols, dtype=complex)
    _, sv, vh = np.linalg.svd(a)
    tol = max(a.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    rank = int(np.sum(sv > tol))
    return vh[rank:].conj().T


def zf_beamformers(clustering: ZfClustering, channels: ChannelSet, config: NetworkConfig) -> np.ndarray:
    """Per-cluster block-diagonalization ZF with equal stream power and per-BS budgets."""
    K, Q, I, M, N = channels.dims
    v = np.zeros((K, I, Q, M), dtype=complex)
    for k in range(K):
        for c, members in enumerate(clustering.clusters[k]):
            users = served_users(clustering, channels, k, c)
            if not users:
                continue
            idx = list(members)
            hc = {i: np.concatenate(list(channels.h[k, i, k, idx]), axis=1) for i in users}
            beams = {}
            for i in users:
                others = [hc[j] for j in users if j != i]
                stacked = np.vstack(others) if others else np.zeros((0, len(idx) * M))
                basis = _null_space(stacked, len(idx) * M)
                _, _, vh = np.linalg.svd(hc[i] @ basis)
                beams[i] = basis @ vh[0].conj()
            load = np.zeros(len(idx))
            for b in beams.values():
                load += np.sum(np.abs(b.reshape(len(idx), M)) ** 2, axis=1)
            scale = math.sqrt(min(config.P / ld for ld in load if ld > 0))
            for i, b in beams.items():
                v[k, i, idx] = scale * b.reshape(len(idx), M)
    return v
