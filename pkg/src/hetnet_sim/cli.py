"""Command line front end: ``hetnet-sim solve|sweep|check``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

import numpy as np

from . import signals
from .harness import ConfigError, load_config, run_experiment, solve_single

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hetnet-sim", description="Joint BS clustering and beamforming simulator.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", "--scenario", dest="config", required=True, help="scenario file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("solve", help="run the configured algorithms on one channel draw")
    common(p)
    p = sub.add_parser("sweep", help="Monte-Carlo sweep over the SNR grid")
    common(p)
    p.add_argument("--resume", action="store_true", help="skip triples already in metrics.csv")
    p.add_argument("--threads", type=int, default=1)
    p = sub.add_parser("check", help="validate a scenario and run quick invariant checks")
    common(p)
    return parser


def _check(scenario) -> list:
    """Cheap sanity checks on the first draw; returns a list of failure messages."""
    from .network import generate_channels, generate_topology
    from .swmmse import initial_beamformers

    config = scenario.network
    channels = generate_channels(generate_topology(config), config)
    again = generate_channels(generate_topology(config), config)
    failures = []
    if not np.array_equal(channels.h, again.h):
        failures.append("channel generation is not deterministic")
    v = initial_beamformers(config, "random", 0)
    if np.any(signals.per_bs_power(v) > config.P * (1 + 1e-9)):
        failures.append("initial beamformers violate the power budget")
    sigma2 = config.noise_power
    u = signals.mmse_receivers(channels, v, sigma2)
    e = signals.mse_all(channels, v, u, sigma2)
    rates = signals.user_rates(channels, v, sigma2)
    if not np.allclose(rates, -np.log(e), rtol=1e-9, atol=1e-9):
        failures.append("rate and MMSE disagree")
    w = 1.0 / e
    lam = np.zeros(config.K)
    total = signals.objective_p2_sumrate(channels, v, u, w, lam, sigma2) \
        + signals.objective_p1(channels, v, signals.UtilityModel.sum_rate(), lam, sigma2)
    if abs(total - config.n_users) > 1e-8 * config.n_users:
        failures.append("objective identity off by %.3g" % (total - config.n_users))
    return failures


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        scenario = load_config(args.config)
        if args.seed is not None:
            if args.command == "sweep":
                scenario = dataclasses.replace(scenario, base_seed=args.seed)
            else:
                scenario = dataclasses.replace(
                    scenario, network=dataclasses.replace(scenario.network, seed=args.seed))
    except (ConfigError, ValueError) as exc:
        print(f"hetnet-sim: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = args.out or "."
    try:
        if args.command == "solve":
            rows = solve_single(scenario, out)
            for r in rows:
                print(f"{r.algorithm}: {r.sum_rate_bits:.3f} bits, {r.avg_serving_bs:.3f} BS/user, "
                      f"{r.outer_iterations} iterations")
        elif args.command == "sweep":
            if args.threads < 1:
                print("hetnet-sim: --threads must be >= 1", file=sys.stderr)
                return EXIT_USAGE
            rows = run_experiment(scenario, out, resume=args.resume, threads=args.threads)
            print(f"{len(rows)} new rows written to {out}/metrics.csv")
        else:
            failures = _check(scenario)
            for msg in failures:
                print(f"FAIL {msg}", file=sys.stderr)
            if failures:
                return EXIT_NUMERIC
            print("ok")
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"hetnet-sim: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
