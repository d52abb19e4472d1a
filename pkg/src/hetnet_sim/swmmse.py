"""Sparse weighted-MMSE: joint BS clustering and beamforming by three-block BCD.

Each outer iteration updates the MMSE receivers, then the MSE weights, then
every cell's beamformers through :func:`hetnet_sim.grouplasso.solve_p3`.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import signals
from .grouplasso import DEFAULT_BISECTION_TOL, build_instance, solve_p3
from .network import ChannelSet, NetworkConfig, snr_of
from .signals import MMSE_FLOOR, UtilityModel

LAMBDA_POLICIES = ("fixed", "formula", "adaptive")


@dataclass(frozen=True)
class SwmmseParams:
    lambda_policy: str = "formula"
    lambda_values: tuple | float | None = None
    outer_tol: float = 1e-1
    max_outer_iters: int = 500
    inner_tol: float | None = None
    inner_max_passes: int = 50
    bisection_tol: float = DEFAULT_BISECTION_TOL
    init_kind: str = "random"
    seed: int = 0

    def __post_init__(self):
        if self.lambda_policy not in LAMBDA_POLICIES:
            raise ValueError(f"lambda_policy must be one of {LAMBDA_POLICIES}")
        if self.lambda_policy == "fixed" and self.lambda_values is None:
            raise ValueError("fixed lambda policy needs lambda_values")
        if not self.outer_tol > 0:
            raise ValueError("outer_tol must be positive")
        if self.max_outer_iters < 1 or self.inner_max_passes < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.init_kind not in ("random", "zero"):
            raise ValueError("init_kind must be 'random' or 'zero'")


@dataclass
class SwmmseTrace:
    """Per-iteration records; ``initial`` holds the same quantities at the starting point."""

    initial: tuple | None = None
    objective: list = field(default_factory=list)
    sum_rate: list = field(default_factory=list)
    penalty: list = field(default_factory=list)
    active_blocks: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)

    def append(self, objective, sum_rate, penalty, active_blocks, wall_ms, lam):
        self.objective.append(float(objective))
        self.sum_rate.append(float(sum_rate))
        self.penalty.append(float(penalty))
        self.active_blocks.append(np.asarray(active_blocks, dtype=int))
        self.wall_ms.append(float(wall_ms))
        self.lambdas.append(np.asarray(lam, dtype=float))

    def __len__(self):
        return len(self.objective)

    def objectives(self) -> list:
        """Objective at the starting point followed by one value per iteration."""
        head = [] if self.initial is None else [self.initial[0]]
        return head + self.objective

    def rows(self):
        """``(iter, objective, sum_rate, penalty, active_total, wall_ms)`` tuples, iteration 0 first."""
        if self.initial is not None:
            obj, rate, pen, active = self.initial
            yield (0, obj, rate, pen, int(np.sum(active)), 0.0)
        for t in range(len(self)):
            yield (t + 1, self.objective[t], self.sum_rate[t], self.penalty[t],
                   int(self.active_blocks[t].sum()), self.wall_ms[t])


@dataclass
class SwmmseResult:
    v: np.ndarray
    trace: SwmmseTrace
    converged: bool
    iterations: int
    lam: np.ndarray
    u: np.ndarray | None = None
    w: np.ndarray | None = None
    rate_floor_hits: int = 0


@dataclass(frozen=True)
class ClusterAssignment:
    mask: np.ndarray  # (K, I, Q) bool

    @property
    def serving(self) -> dict:
        K, I, _ = self.mask.shape
        return {(k, i): set(np.flatnonzero(self.mask[k, i]).tolist())
                for k in range(K) for i in range(I)}

    def sizes(self) -> np.ndarray:
        return self.mask.sum(axis=-1)


def update_receivers(channels: ChannelSet, v: np.ndarray, sigma2) -> np.ndarray:
    return signals.mmse_receivers(channels, v, sigma2)


def update_weights(channels: ChannelSet, v: np.ndarray, u: np.ndarray, utility: UtilityModel,
                   sigma2) -> tuple[np.ndarray, np.ndarray]:
    """Weights ``w = u'(R(v)) / e`` and the mask of users evaluated at the rate floor."""
    rates = signals.user_rates(channels, v, sigma2)
    e = signals.mse_all(channels, v, u, sigma2)
    w = utility.derivative(rates) / np.maximum(e, MMSE_FLOOR)
    return w, utility.floored(rates)


def initial_beamformers(config: NetworkConfig, kind: str = "random", seed: int = 0,
                        allowed: np.ndarray | None = None) -> np.ndarray:
    """Feasible start: i.i.d. complex Gaussian blocks scaled so every BS uses exactly ``P``."""
    shape = (config.K, config.I, config.Q, config.M)
    if kind == "zero":
        return np.zeros(shape, dtype=complex)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    if allowed is not None:
        v[~allowed] = 0.0
    power = signals.per_bs_power(v)
    scale = np.divide(math.sqrt(config.P), np.sqrt(power), out=np.zeros_like(power), where=power > 0)
    return v * scale[:, None, :, None]


def lambda_fixed(config: NetworkConfig) -> np.ndarray:
    """``QK / (I sqrt(SNR))`` for every cell."""
    lam = config.Q * config.K / (config.I * math.sqrt(snr_of(config)))
    return np.full(config.K, lam)


def lambda_adaptive(d_vectors, snr: float) -> np.ndarray:
    """``min(0.01 * lam_bar / SNR, 1)`` per cell, ``lam_bar = 2 max ||d_i[q]||``.

    ``d_vectors`` is a sequence of per-cell ``(I, Q, M)`` arrays.
    """
    out = []
    for d in d_vectors:
        lam_bar = 2.0 * float(np.max(np.linalg.norm(d, axis=-1), initial=0.0))
        out.append(min(0.01 * lam_bar / snr, 1.0))
    return np.array(out)


def extract_clusters(v: np.ndarray, P: float, threshold_rel: float = 1e-5) -> ClusterAssignment:
    """Serving sets: blocks with norm above ``threshold_rel * sqrt(P / I)``."""
    if threshold_rel < 0:
        raise ValueError("threshold_rel must be nonnegative")
    I = v.shape[1]
    return ClusterAssignment(signals.block_norms(v) > threshold_rel * math.sqrt(P / I))


def _policy_lambda(config: NetworkConfig, params: SwmmseParams) -> np.ndarray:
    if params.lambda_policy == "fixed":
        return np.broadcast_to(np.asarray(params.lambda_values, dtype=float), (config.K,)).copy()
    if params.lambda_policy == "formula":
        return lambda_fixed(config)
    return np.zeros(config.K)


def swmmse(channels: ChannelSet, config: NetworkConfig, utility: UtilityModel | None = None,
           params: SwmmseParams | None = None, allowed: np.ndarray | None = None,
           v_init: np.ndarray | None = None, callback=None) -> SwmmseResult:
    """Run S-WMMSE until the change of the penalized utility drops below ``outer_tol``.

    ``allowed`` is an optional ``(K, I, Q)`` mask; disallowed blocks are held
    at zero throughout. Hitting ``max_outer_iters`` returns a result with
    ``converged=False``. ``callback(t, v, u, w, lam)`` is called after every
    iteration with the new beamformers and the receivers and weights used to
    compute them.
    """
    utility = utility or UtilityModel.sum_rate()
    params = params or SwmmseParams()
    sigma2 = config.noise_power
    snr = snr_of(config)
    if v_init is None:
        v = initial_beamformers(config, params.init_kind, params.seed, allowed)
    else:
        v = np.array(v_init, dtype=complex, copy=True)
        if allowed is not None:
            v[~allowed] = 0.0
    lam = _policy_lambda(config, params)
    adaptive = params.lambda_policy == "adaptive"

    trace = SwmmseTrace()
    rates = signals.user_rates(channels, v, sigma2)
    pen = signals.penalty(v, lam)
    objective_prev = float(np.sum(utility.value(rates))) - pen
    trace.initial = (objective_prev, float(rates.sum()), pen, (signals.block_norms(v) > 0).sum(axis=(1, 2)))
    converged = False
    floor_hits = 0
    u = w = None
    iterations = 0
    for iterations in range(1, params.max_outer_iters + 1):
        start = time.perf_counter()
        u = update_receivers(channels, v, sigma2)
        w, floored = update_weights(channels, v, u, utility, sigma2)
        floor_hits += int(floored.sum())
        instances = [build_instance(channels, u, w, k, lam[k], config.P) for k in range(config.K)]
        if adaptive:
            lam = lambda_adaptive([inst.d for inst in instances], snr)
            for inst, lam_k in zip(instances, lam):
                inst.lam = float(lam_k)
            objective_prev = float(np.sum(utility.value(signals.user_rates(channels, v, sigma2)))) \
                - signals.penalty(v, lam)
        v_next = np.empty_like(v)
        for k, inst in enumerate(instances):
            v_next[k] = solve_p3(inst, v[k], params.inner_tol, params.inner_max_passes,
                                 params.bisection_tol,
                                 allowed=None if allowed is None else allowed[k]).v
        v = v_next
        if callback is not None:
            callback(iterations, v, u, w, lam)
        rates = signals.user_rates(channels, v, sigma2)
        pen = signals.penalty(v, lam)
        objective = float(np.sum(utility.value(rates))) - pen
        trace.append(objective, rates.sum(), pen, (signals.block_norms(v) > 0).sum(axis=(1, 2)),
                     1e3 * (time.perf_counter() - start), lam)
        if not np.isfinite(objective):
            raise FloatingPointError("non-finite objective in S-WMMSE iteration")
        if abs(objective - objective_prev) < params.outer_tol:
            converged = True
            break
        objective_prev = objective
    return SwmmseResult(v=v, trace=trace, converged=converged, iterations=iterations,
                        lam=np.asarray(lam, dtype=float), u=u, w=w, rate_floor_hits=floor_hits)
