import dataclasses

import numpy as np
import pytest

from hetnet_sim import signals
from hetnet_sim.baselines import (
    FixedAssignment, ZfConfig, ZfClustering, nn_assignment, served_users, wmmse_full, wmmse_nn,
    zf_beamformers, zf_greedy_clusters,
)
from hetnet_sim.network import ChannelSet, NetworkConfig, Topology, generate_channels, generate_topology
from hetnet_sim.swmmse import SwmmseParams, extract_clusters


def make(seed=0, **kw):
    base = dict(K=2, Q=4, I=3, M=2, N=1, P=2.5, seed=seed)
    base.update(kw)
    cfg = NetworkConfig(**base)
    top = generate_topology(cfg)
    return cfg, top, generate_channels(top, cfg)


def line_topology(Q=4, I=1):
    bs = np.array([[[float(q), 0.0] for q in range(Q)]])
    users = np.zeros((1, I, 2))
    return Topology(cell_centers=np.zeros((1, 2)), bs_positions=bs, user_positions=users)


# -- nearest BS ------------------------------------------------------------------------

def test_nn_colocated_and_ties():
    top = line_topology()
    top = dataclasses.replace(top, user_positions=np.array([[[3.0, 0.0]]]))
    assert nn_assignment(top).serving.tolist() == [[3]]
    top = dataclasses.replace(top, user_positions=np.array([[[0.5, 0.0]]]))
    assert nn_assignment(top).serving.tolist() == [[0]]


def test_nn_matches_exhaustive_scan():
    cfg, top, _ = make(3, K=3, Q=5, I=6)
    got = nn_assignment(top).serving
    for k in range(3):
        for i in range(6):
            best = min(range(5), key=lambda q: (np.linalg.norm(top.user_positions[k, i] - top.bs_positions[k, q]), q))
            assert got[k, i] == best


def test_fixed_assignment_mask():
    mask = FixedAssignment(np.array([[2, 0]])).mask(3)
    assert mask.tolist() == [[[False, False, True], [True, False, False]]]


def test_wmmse_nn_single_serving_bs():
    cfg, top, ch = make(1, N=2)
    res = wmmse_nn(ch, cfg, params=SwmmseParams(seed=2), assignment=nn_assignment(top))
    assert np.all(extract_clusters(res.v, cfg.P).sizes() <= 1)
    assert np.all(signals.per_bs_power(res.v) <= cfg.P * (1 + 1e-9))
    with pytest.raises(ValueError):
        wmmse_nn(ch, cfg)


def test_wmmse_nn_single_bs_equals_full():
    cfg, top, ch = make(2, Q=1, N=2)
    params = SwmmseParams(seed=5)
    a = wmmse_nn(ch, cfg, params=params, assignment=nn_assignment(top))
    b = wmmse_full(ch, cfg, params=params)
    assert np.array_equal(a.v, b.v)


def test_wmmse_nn_not_better_than_full_mostly():
    wins = 0
    for seed in range(10):
        cfg, top, ch = make(seed, N=2)
        params = SwmmseParams(outer_tol=1e-3, seed=seed)
        nn = wmmse_nn(ch, cfg, params=params, assignment=nn_assignment(top)).trace.objectives()[-1]
        full = wmmse_full(ch, cfg, params=params).trace.objectives()[-1]
        wins += full >= nn - 1e-6
    assert wins >= 9


# -- ZF clustering -----------------------------------------------------------------------

def test_cluster_size_extremes():
    cfg, top, ch = make(4)
    whole = zf_greedy_clusters(top, ch, ZfConfig(4))
    assert whole.clusters == ((tuple(range(4)),),) * 2
    single = zf_greedy_clusters(top, ch, ZfConfig(1))
    assert single.clusters == (((0,), (1,), (2,), (3,)),) * 2
    with pytest.raises(ValueError):
        zf_greedy_clusters(top, ch, ZfConfig(5))


def test_collinear_pairs():
    top = line_topology(4, 1)
    ch = ChannelSet(np.ones((1, 1, 1, 4, 1, 1), complex))
    assert zf_greedy_clusters(top, ch, ZfConfig(2)).clusters == (((0, 1), (2, 3)),)


def test_users_join_strongest_cluster():
    cfg, top, ch = make(6)
    cl = zf_greedy_clusters(top, ch, ZfConfig(2))
    for k in range(cfg.K):
        for i in range(cfg.I):
            norms = [np.linalg.norm(np.concatenate(list(ch.h[k, i, k, list(m)]), axis=1), 2)
                     for m in cl.clusters[k]]
            assert cl.user_cluster[k, i] == int(np.argmax(norms))


@pytest.mark.parametrize("seed", range(5))
def test_zf_nulls_intra_cluster_crosstalk(seed):
    cfg, top, ch = make(seed, Q=2, I=2, M=2, N=1)
    cl = zf_greedy_clusters(top, ch, ZfConfig(2))
    v = zf_beamformers(cl, ch, cfg)
    for k in range(cfg.K):
        for i in range(cfg.I):
            for j in range(cfg.I):
                if i != j and v[k, i].any():
                    Hj = ch.cell_channel((k, j), k)
                    leak = np.linalg.norm(Hj @ v[k, i].reshape(-1))
                    assert leak <= 1e-9 * np.linalg.norm(Hj) * np.linalg.norm(v[k, i])
    power = signals.per_bs_power(v)
    assert np.all(power <= cfg.P * (1 + 1e-12))
    assert np.isclose(power.max(axis=1), cfg.P).all()


def test_zf_single_user_matched_filter():
    cfg, top, ch = make(8, K=1, Q=2, I=1, M=2, N=1)
    v = zf_beamformers(zf_greedy_clusters(top, ch, ZfConfig(2)), ch, cfg)
    H = ch.cell_channel((0, 0), 0)[0]
    x = v[0, 0].reshape(-1)
    cos = abs(np.vdot(H.conj(), x)) / (np.linalg.norm(H) * np.linalg.norm(x))
    assert cos == pytest.approx(1.0, abs=1e-12)
    assert signals.per_bs_power(v).max() == pytest.approx(cfg.P)


def test_zf_drops_weakest_users():
    cfg, top, ch = make(9, K=1, Q=2, I=6, M=1, N=1)
    cl = ZfClustering(clusters=(((0, 1),),), user_cluster=np.zeros((1, 6), dtype=int))
    kept = served_users(cl, ch, 0, 0)
    strength = [np.linalg.norm(ch.h[0, i, 0, [0, 1]]) for i in range(6)]
    expect = sorted(np.argsort(strength)[::-1][:2].tolist())
    assert kept == expect
    v = zf_beamformers(cl, ch, cfg)
    served = np.flatnonzero(np.linalg.norm(v[0], axis=(1, 2)) > 0).tolist()
    assert served == expect


def test_zf_serving_sets_within_cluster():
    cfg, top, ch = make(10, Q=4, I=4, M=2, N=1)
    cl = zf_greedy_clusters(top, ch, ZfConfig(2))
    v = zf_beamformers(cl, ch, cfg)
    sizes = extract_clusters(v, cfg.P)
    for (k, i), serving in sizes.serving.items():
        assert serving <= set(cl.clusters[k][cl.user_cluster[k, i]])
