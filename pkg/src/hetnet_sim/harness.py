"""Scenario configuration, Monte-Carlo orchestration and metrics."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import logging
import math
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, signals
from .csvio import fmt, write_trace_csv
from .network import NetworkConfig, generate_channels, generate_topology, power_for_snr_db, snr_of
from .signals import UtilityModel
from .swmmse import SwmmseParams, extract_clusters, swmmse

log = logging.getLogger(__name__)

ALGORITHMS = ("swmmse_fixed", "swmmse_adaptive", "wmmse_full", "wmmse_nn")
_ZF = re.compile(r"^zf\((\d+)\)$")


class ConfigError(ValueError):
    """Malformed or inconsistent scenario file."""


@dataclass(frozen=True)
class MetricsRow:
    seed: int
    snr_db: float
    algorithm: str
    lambda_used: float
    sum_rate_nats: float
    sum_rate_bits: float
    per_user_rates: tuple
    avg_serving_bs: float
    per_bs_power_rel: float
    outer_iterations: int
    converged: bool
    wall_ms: float | None
    channel_hash: str

    @classmethod
    def header(cls) -> list:
        return [f.name for f in dataclasses.fields(cls)]

    def cells(self) -> list:
        out = []
        for f in dataclasses.fields(self):
            x = getattr(self, f.name)
            if f.name == "per_user_rates":
                out.append(";".join(fmt(r) for r in x))
            elif x is None:
                out.append("")
            elif isinstance(x, str):
                out.append(x)
            else:
                out.append(fmt(x))
        return out


@dataclass(frozen=True)
class Scenario:
    network: NetworkConfig
    utility: UtilityModel = field(default_factory=UtilityModel.sum_rate)
    algorithms: tuple = ("swmmse_fixed",)
    snr_grid_db: tuple = (10.0,)
    num_draws: int = 20
    base_seed: int = 0
    solver: SwmmseParams = field(default_factory=SwmmseParams)
    cluster_threshold: float = 1e-5
    record_timing: bool = False
    write_traces: bool = True

    def __post_init__(self):
        if self.num_draws < 1:
            raise ConfigError("num_draws must be >= 1")
        if not self.snr_grid_db:
            raise ConfigError("snr_db grid must be nonempty")
        for name in self.algorithms:
            check_algorithm(name, self.network.Q)


def check_algorithm(name: str, Q: int) -> None:
    m = _ZF.match(name)
    if m:
        size = int(m.group(1))
        if not 1 <= size <= Q:
            raise ConfigError(f"{name}: cluster size must lie in [1, {Q}]")
    elif name not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {name!r}")


# -- config files ------------------------------------------------------------

_NETWORK_KEYS = {f.name: f.type for f in dataclasses.fields(NetworkConfig)}
_SOLVER_KEYS = {"utility", "utility_weights", "rate_floor", "lambda_policy", "lambda", "outer_tol",
                "max_outer_iters", "inner_tol", "inner_max_passes", "bisection_tol", "init_kind",
                "cluster_threshold"}
_EXPERIMENT_KEYS = {"algorithms", "snr_db", "num_draws", "base_seed", "record_timing", "write_traces"}
_INT_NETWORK = {"K", "Q", "I", "M", "N", "seed"}


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_config(text: str) -> Scenario:
    """Parse a sectioned ``key = value`` scenario; unknown sections or keys are errors."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    allowed = {"network": set(_NETWORK_KEYS), "solver": _SOLVER_KEYS, "experiment": _EXPERIMENT_KEYS}
    for section in parser.sections():
        if section not in allowed:
            raise ConfigError(f"unknown section [{section}]")
        extra = set(parser[section]) - allowed[section]
        if extra:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(extra))}")
    try:
        return _build_scenario(parser)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _build_scenario(parser: configparser.ConfigParser) -> Scenario:
    net = parser["network"] if parser.has_section("network") else {}
    net_kwargs = {}
    for key, value in net.items():
        net_kwargs[key] = int(value) if key in _INT_NETWORK else float(value)
    network = NetworkConfig(**net_kwargs)

    sol = parser["solver"] if parser.has_section("solver") else {}
    kind = sol.get("utility", "sum_rate").strip()
    rate_floor = float(sol.get("rate_floor", 1e-12))
    if kind == "sum_rate":
        utility = UtilityModel.sum_rate()
    elif kind == "proportional_fair":
        utility = UtilityModel.proportional_fair(rate_floor)
    elif kind == "weighted_sum_rate":
        weights = np.array(_floats(sol.get("utility_weights", ""))).reshape(network.K, network.I)
        utility = UtilityModel.weighted_sum_rate(weights)
    else:
        raise ConfigError(f"unknown utility {kind!r}")
    solver_kwargs = {}
    if "lambda_policy" in sol:
        solver_kwargs["lambda_policy"] = sol["lambda_policy"].strip()
    if "lambda" in sol:
        values = _floats(sol["lambda"])
        solver_kwargs["lambda_values"] = values[0] if len(values) == 1 else values
    for key in ("outer_tol", "inner_tol", "bisection_tol"):
        if key in sol:
            solver_kwargs[key] = float(sol[key])
    for key in ("max_outer_iters", "inner_max_passes"):
        if key in sol:
            solver_kwargs[key] = int(sol[key])
    if "init_kind" in sol:
        solver_kwargs["init_kind"] = sol["init_kind"].strip()
    solver = SwmmseParams(**solver_kwargs)

    exp = parser["experiment"] if parser.has_section("experiment") else {}
    algorithms = tuple(a.strip() for a in exp.get("algorithms", "swmmse_fixed").split(",") if a.strip())
    return Scenario(
        network=network,
        utility=utility,
        algorithms=algorithms,
        snr_grid_db=_floats(exp.get("snr_db", "10")),
        num_draws=int(exp.get("num_draws", 20)),
        base_seed=int(exp.get("base_seed", 0)),
        solver=solver,
        cluster_threshold=float(sol.get("cluster_threshold", 1e-5)),
        record_timing=_bool(exp.get("record_timing", "false")),
        write_traces=_bool(exp.get("write_traces", "true")),
    )


def load_config(path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())


# -- metrics -----------------------------------------------------------------

def compute_metrics(channels, v: np.ndarray, config: NetworkConfig, reference_v: np.ndarray | None = None,
                    threshold_rel: float = 1e-5) -> dict:
    rates = signals.user_rates(channels, v, config.noise_power)
    sizes = extract_clusters(v, config.P, threshold_rel).sizes()
    power = float(signals.per_bs_power(v).mean())
    if reference_v is not None:
        ref = float(signals.per_bs_power(reference_v).mean())
        power = power / ref if ref > 0 else math.nan
    total = float(rates.sum())
    return {
        "sum_rate_nats": total,
        "sum_rate_bits": total / math.log(2.0),
        "per_user_rates": tuple(float(r) for r in rates.ravel()),
        "avg_serving_bs": float(sizes.mean()),
        "per_bs_power_rel": power,
    }


def channel_hash(channels) -> str:
    return hashlib.sha256(np.ascontiguousarray(channels.h).tobytes()).hexdigest()[:16]


def draw_seed(base_seed: int, snr_index: int, draw: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(snr_index), int(draw)]).generate_state(1)[0])


def trace_name(algorithm: str, seed: int) -> str:
    return f"trace_{re.sub(r'[^A-Za-z0-9_]+', '', algorithm.replace('(', '_'))}_{seed}.csv"


@dataclass
class RunOutput:
    algorithm: str
    v: np.ndarray
    lam: float
    iterations: int
    converged: bool
    wall_ms: float
    trace: object = None


def run_algorithm(name: str, channels, topology, config: NetworkConfig, scenario: Scenario,
                  seed: int) -> RunOutput:
    params = dataclasses.replace(scenario.solver, seed=seed)
    start = time.perf_counter()
    m = _ZF.match(name)
    if m:
        zf = baselines.ZfConfig(int(m.group(1)))
        v = baselines.zf_beamformers(baselines.zf_greedy_clusters(topology, channels, zf), channels, config)
        return RunOutput(name, v, 0.0, 0, True, 1e3 * (time.perf_counter() - start))
    if name == "swmmse_fixed":
        if params.lambda_policy == "adaptive":
            params = dataclasses.replace(params, lambda_policy="formula")
        result = swmmse(channels, config, scenario.utility, params)
    elif name == "swmmse_adaptive":
        result = swmmse(channels, config, scenario.utility,
                        dataclasses.replace(params, lambda_policy="adaptive"))
    elif name == "wmmse_full":
        result = baselines.wmmse_full(channels, config, scenario.utility, params)
    elif name == "wmmse_nn":
        result = baselines.wmmse_nn(channels, config, scenario.utility, params,
                                    baselines.nn_assignment(topology))
    else:
        raise ConfigError(f"unknown algorithm {name!r}")
    return RunOutput(name, result.v, float(np.mean(result.lam)), result.iterations, result.converged,
                     1e3 * (time.perf_counter() - start), result.trace)


def run_draw(scenario: Scenario, snr_index: int, draw: int, algorithms=None, trace_dir=None) -> list:
    """All requested algorithms on one channel realization; rows in scenario algorithm order."""
    algorithms = tuple(scenario.algorithms if algorithms is None else algorithms)
    snr_db = scenario.snr_grid_db[snr_index]
    seed = draw_seed(scenario.base_seed, snr_index, draw)
    config = dataclasses.replace(scenario.network, P=power_for_snr_db(snr_db, scenario.network.Q), seed=seed)
    return solve_instance(scenario, config, snr_db, algorithms, trace_dir)


def solve_instance(scenario: Scenario, config: NetworkConfig, snr_db: float, algorithms, trace_dir=None,
                   trace_alias: str | None = None) -> list:
    topology = generate_topology(config)
    channels = generate_channels(topology, config)
    digest = channel_hash(channels)
    outputs = {}
    # the full-coordination run doubles as the power reference
    order = sorted(algorithms, key=lambda a: a != "wmmse_full")
    if "wmmse_full" in scenario.algorithms and "wmmse_full" not in order:
        order.insert(0, "wmmse_full")
    for name in order:
        outputs[name] = run_algorithm(name, channels, topology, config, scenario, config.seed)
    reference = outputs["wmmse_full"].v if "wmmse_full" in outputs else None
    rows = []
    for name in algorithms:
        out = outputs[name]
        metrics = compute_metrics(channels, out.v, config, reference, scenario.cluster_threshold)
        rows.append(MetricsRow(
            seed=config.seed, snr_db=float(snr_db), algorithm=name, lambda_used=out.lam,
            outer_iterations=out.iterations, converged=out.converged,
            wall_ms=out.wall_ms if scenario.record_timing else None,
            channel_hash=digest, **metrics))
        if trace_dir is not None and out.trace is not None and scenario.write_traces:
            write_trace_csv(out.trace, Path(trace_dir) / trace_name(name, config.seed), scenario.record_timing)
            if trace_alias is not None and name == algorithms[0]:
                write_trace_csv(out.trace, Path(trace_dir) / trace_alias, scenario.record_timing)
    return rows


def _job(args):
    scenario, snr_index, draw, algorithms, trace_dir = args
    return snr_index, draw, run_draw(scenario, snr_index, draw, algorithms, trace_dir)


def _row_key(cells: list) -> tuple:
    # (algorithm, snr_db, seed) as written
    return cells[2], cells[1], cells[0]


def _read_existing(path: Path) -> dict:
    """Completed rows keyed by (algorithm, snr_db, seed); truncated lines are ignored."""
    header = MetricsRow.header()
    done = {}
    if not path.exists():
        return done
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != header:
            return done
        for cells in reader:
            if len(cells) == len(header) and cells[-1]:
                done[_row_key(cells)] = cells
    return done


def run_experiment(scenario: Scenario, out_dir=None, resume: bool = False, threads: int = 1) -> list:
    """Sweep SNR x draws x algorithms; returns rows in canonical order.

    With ``out_dir`` the rows go to ``metrics.csv`` (appended as draws finish,
    then rewritten in canonical order). ``resume`` skips every (algorithm,
    snr, draw) triple already present in that file.
    """
    out = Path(out_dir) if out_dir is not None else None
    metrics_path = out / "metrics.csv" if out is not None else None
    done = _read_existing(metrics_path) if (resume and out is not None) else {}
    jobs = []
    for s, snr_db in enumerate(scenario.snr_grid_db):
        for draw in range(scenario.num_draws):
            seed = draw_seed(scenario.base_seed, s, draw)
            pending = tuple(a for a in scenario.algorithms
                            if (a, fmt(float(snr_db)), str(seed)) not in done)
            if pending:
                jobs.append((scenario, s, draw, pending, out))
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if not resume or not metrics_path.exists() or not done:
            with open(metrics_path, "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(MetricsRow.header())

    results = {}

    def collect(snr_index, draw, rows):
        results[(snr_index, draw)] = rows
        if metrics_path is not None:
            with open(metrics_path, "a", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                for row in rows:
                    writer.writerow(row.cells())
        log.info("finished snr index %d draw %d", snr_index, draw)

    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for snr_index, draw, rows in pool.map(_job, jobs):
                collect(snr_index, draw, rows)
    else:
        for job in jobs:
            collect(*_job(job))

    ordered_cells = []
    ordered_rows = []
    for s, snr_db in enumerate(scenario.snr_grid_db):
        for draw in range(scenario.num_draws):
            seed = draw_seed(scenario.base_seed, s, draw)
            fresh = {r.algorithm: r for r in results.get((s, draw), [])}
            for a in scenario.algorithms:
                if a in fresh:
                    ordered_rows.append(fresh[a])
                    ordered_cells.append(fresh[a].cells())
                else:
                    ordered_cells.append(done[(a, fmt(float(snr_db)), str(seed))])
    if metrics_path is not None:
        with open(metrics_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(MetricsRow.header())
            writer.writerows(ordered_cells)
    return ordered_rows


def solve_single(scenario: Scenario, out_dir, seed: int | None = None) -> list:
    """One draw at the network's own power budget; writes metrics.csv and trace.csv."""
    config = scenario.network if seed is None else dataclasses.replace(scenario.network, seed=seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    snr_db = 10.0 * math.log10(snr_of(config))
    rows = solve_instance(scenario, config, snr_db, scenario.algorithms, out, trace_alias="trace.csv")
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MetricsRow.header())
        writer.writerows(r.cells() for r in rows)
    return rows
