import csv
import dataclasses
import math

import numpy as np
import pytest

from hetnet_sim.csvio import TRACE_HEADER, fmt, read_csv_dicts
from hetnet_sim.harness import (
    ConfigError, MetricsRow, Scenario, compute_metrics, draw_seed, parse_config, run_experiment, trace_name,
)
from hetnet_sim.network import ChannelSet, NetworkConfig
from hetnet_sim.swmmse import SwmmseParams

SMALL = """
[network]
K = 2
Q = 3
I = 2
M = 2
N = 1

[solver]
lambda_policy = formula
outer_tol = 0.01

[experiment]
algorithms = swmmse_fixed, wmmse_full, wmmse_nn, zf(2)
snr_db = 0, 10
num_draws = 2
base_seed = 5
"""


def small_scenario(**kw):
    return dataclasses.replace(parse_config(SMALL), **kw)


# -- config -------------------------------------------------------------------------

def test_parse_config_fields():
    sc = parse_config(SMALL)
    assert sc.network.K == 2 and sc.network.N == 1
    assert sc.algorithms == ("swmmse_fixed", "wmmse_full", "wmmse_nn", "zf(2)")
    assert sc.snr_grid_db == (0.0, 10.0)
    assert sc.solver.outer_tol == 0.01
    assert sc.record_timing is False


@pytest.mark.parametrize("text", [
    "[network]\nK = 2\nbogus = 1\n",
    "[extra]\nx = 1\n",
    "[experiment]\nalgorithms = dirty_paper\n",
    "[experiment]\nalgorithms = zf(9)\n",
    "[experiment]\nnum_draws = 0\n",
    "[network]\nK = 0\n",
    "[solver]\nutility = max_min\n",
    "[experiment]\nrecord_timing = maybe\n",
    "no section header\n",
])
def test_parse_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_parse_utilities():
    pf = parse_config("[solver]\nutility = proportional_fair\nrate_floor = 1e-9\n")
    assert pf.utility.kind == "proportional_fair" and pf.utility.rate_floor == 1e-9
    wsr = parse_config("[network]\nK = 1\nI = 2\n[solver]\nutility = weighted_sum_rate\n"
                       "utility_weights = 1, 2\n")
    assert wsr.utility.weights.tolist() == [[1.0, 2.0]]
    fixed = parse_config("[solver]\nlambda_policy = fixed\nlambda = 0.3\n")
    assert fixed.solver.lambda_values == 0.3


# -- metrics --------------------------------------------------------------------------

def diag_net(K, Q):
    h = np.zeros((K, 1, K, Q, 1, 1), complex)
    for k in range(K):
        h[k, 0, k] = 1.0
    return ChannelSet(h)


def test_metrics_rate_arithmetic():
    cfg = NetworkConfig(K=3, Q=1, I=1, P=100.0)
    v = np.zeros((3, 1, 1, 1), complex)
    for k, r in enumerate([1.0, 2.0, 3.0]):
        v[k, 0, 0, 0] = math.sqrt(math.expm1(r))
    m = compute_metrics(diag_net(3, 1), v, cfg)
    assert m["sum_rate_nats"] == pytest.approx(6.0)
    assert m["sum_rate_bits"] == pytest.approx(8.656, abs=1e-3)
    assert m["sum_rate_bits"] == pytest.approx(m["sum_rate_nats"] / math.log(2), rel=1e-12)


def test_metrics_serving_sizes():
    cfg = NetworkConfig(K=3, Q=3, I=1, P=1.0)
    v = np.zeros((3, 1, 3, 1), complex)
    for k in range(3):
        v[k, 0, :k + 1] = 0.5
    assert compute_metrics(diag_net(3, 3), v, cfg)["avg_serving_bs"] == pytest.approx(2.0)


def test_metrics_zero_beamformers():
    cfg = NetworkConfig(K=2, Q=2, I=1, P=1.0)
    m = compute_metrics(diag_net(2, 2), np.zeros((2, 1, 2, 1), complex), cfg)
    assert m["sum_rate_nats"] == 0 and m["avg_serving_bs"] == 0 and m["per_bs_power_rel"] == 0


def test_metrics_relative_power():
    cfg = NetworkConfig(K=1, Q=2, I=1, P=1.0)
    ref = np.full((1, 1, 2, 1), 1.0 + 0j)
    v = np.full((1, 1, 2, 1), 0.5 + 0j)
    assert compute_metrics(diag_net(1, 2), v, cfg, ref)["per_bs_power_rel"] == pytest.approx(0.25)


def test_metrics_row_header_and_cells():
    assert MetricsRow.header() == [
        "seed", "snr_db", "algorithm", "lambda_used", "sum_rate_nats", "sum_rate_bits", "per_user_rates",
        "avg_serving_bs", "per_bs_power_rel", "outer_iterations", "converged", "wall_ms", "channel_hash"]
    row = MetricsRow(1, 10.0, "wmmse_full", 0.0, 1.0, 1 / math.log(2), (0.25, 0.75), 2.0, 1.0, 3, True,
                     None, "ab")
    assert row.cells()[6] == "0.25;0.75" and row.cells()[10] == "true" and row.cells()[11] == ""


def test_float_format_round_trips():
    for x in (0.1, 1 / 3, 1e-300, 123456789.123, -2.5e17):
        assert float(fmt(x)) == x


# -- experiment orchestration ------------------------------------------------------------

def test_experiment_rows_and_shared_channels(tmp_path):
    sc = small_scenario()
    rows = run_experiment(sc, tmp_path)
    assert len(rows) == 2 * 2 * 4
    assert [r.algorithm for r in rows[:4]] == list(sc.algorithms)
    for start in range(0, len(rows), 4):
        group = rows[start:start + 4]
        assert len({r.channel_hash for r in group}) == 1
        assert len({r.seed for r in group}) == 1
    full = [r for r in rows if r.algorithm == "wmmse_full"]
    assert all(r.per_bs_power_rel == pytest.approx(1.0) for r in full)
    assert all(r.avg_serving_bs <= 1 for r in rows if r.algorithm == "wmmse_nn")
    on_disk = read_csv_dicts(tmp_path / "metrics.csv")
    assert len(on_disk) == len(rows)
    assert [float(d["sum_rate_nats"]) for d in on_disk] == [r.sum_rate_nats for r in rows]
    assert rows[0].seed == draw_seed(5, 0, 0)


def test_hundred_draws_give_hundred_rows():
    sc = small_scenario(algorithms=("zf(1)",), snr_grid_db=(10.0,), num_draws=100)
    rows = run_experiment(sc)
    assert len(rows) == 100 and len({r.seed for r in rows}) == 100


def test_traces_written(tmp_path):
    sc = small_scenario(algorithms=("swmmse_fixed", "zf(2)"), snr_grid_db=(10.0,), num_draws=1)
    rows = run_experiment(sc, tmp_path)
    path = tmp_path / trace_name("swmmse_fixed", rows[0].seed)
    with open(path, newline="") as fh:
        data = list(csv.reader(fh))
    assert data[0] == TRACE_HEADER
    assert len(data) - 1 == rows[0].outer_iterations + 1
    assert all(r[-1] == "" for r in data[1:])
    assert not (tmp_path / trace_name("zf(2)", rows[0].seed)).exists()


def test_non_converged_runs_are_recorded():
    sc = small_scenario(algorithms=("swmmse_fixed",), snr_grid_db=(10.0,), num_draws=2,
                        solver=SwmmseParams(outer_tol=1e-14, max_outer_iters=2))
    rows = run_experiment(sc)
    assert [r.converged for r in rows] == [False, False]


def test_resume_skips_completed(tmp_path):
    sc = small_scenario()
    run_experiment(sc, tmp_path)
    full = (tmp_path / "metrics.csv").read_bytes()
    lines = full.decode().splitlines(keepends=True)
    # simulate an interrupt after five rows plus a torn sixth line
    (tmp_path / "metrics.csv").write_text("".join(lines[:6]) + lines[6][:10])
    fresh = run_experiment(sc, tmp_path, resume=True)
    assert len(fresh) == len(lines) - 1 - 5
    assert (tmp_path / "metrics.csv").read_bytes() == full
    assert run_experiment(sc, tmp_path, resume=True) == []


def test_parallel_matches_serial(tmp_path):
    sc = small_scenario(algorithms=("swmmse_fixed", "wmmse_nn"))
    run_experiment(sc, tmp_path / "a")
    run_experiment(sc, tmp_path / "b", threads=2)
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_scenario_validation():
    with pytest.raises(ConfigError):
        Scenario(network=NetworkConfig(), snr_grid_db=())
    with pytest.raises(ConfigError):
        Scenario(network=NetworkConfig(), num_draws=0)
