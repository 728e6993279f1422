"""Monte Carlo studies that are not optimization runs.

``cc_contraction`` measures how close centered clipping lands to the good
mean when the Byzantine inputs sit far away in one direction.
``momentum_variance`` measures how far apart two honest workers' momentum
buffers drift when both see the same iterates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..aggregators import AggregatorSpec, adaptive_clip_radius, byzantine_count, centered_clip
from ..attacks import AttackSpec
from ..core import ALL_WORKERS, ConfigError, RngStream
from ..optimizer import OptimizerSpec, Simulation
from ..problems import ProblemSpec, build_problem

CC_DEFAULTS = {
    "trials": 500,
    "dim": 10,
    "rho2": 2.0,
    "adversary_distance": 10.0,
    "start_distance": 1.0,
    "iterations": [1, 5],
}

MV_DEFAULTS = {
    "pairs": 2000,
    "times": [1, 5, 20, 50],
    "alpha": 0.1,
    "dim": 10,
    "sigma": 1.0,
    "lr": 0.1,
}

CC_COLUMNS = ("iterations", "mean_sq_error", "tau", "bound_robust", "bound_tight")
MV_COLUMNS = ("round", "pairwise_sq_dist", "bound")


def resolve_params(study: str, params: dict) -> dict:
    defaults = CC_DEFAULTS if study == "cc-contraction" else MV_DEFAULTS
    unknown = sorted(set(params) - set(defaults))
    if unknown:
        raise ConfigError("unknown key", f"study_params.{unknown[0]}")
    out = dict(defaults)
    out.update(params)
    return out


@dataclass
class ContractionRow:
    iterations: int
    mean_sq_error: float
    tau: float
    bound_robust: float
    bound_tight: float


def cc_contraction(n: int = 100, delta: float = 0.1, seed: int = 0, trials: int = 500, dim: int = 10,
                   rho2: float = 2.0, adversary_distance: float = 10.0, start_distance: float = 1.0,
                   iterations=(1, 5)) -> list[ContractionRow]:
    """Mean ``||v_l - xbar||^2`` of centered clipping with the adaptive radius.

    Good points are Gaussian with ``E||x_i - x_j||^2 = rho2``; the
    ``floor(delta n)`` bad points all sit at ``xbar + adversary_distance *
    rho * e_1``; the start ``v_0`` is ``xbar`` plus a random offset of norm
    ``start_distance * rho``. Distances are in units of ``rho``.
    """
    f = byzantine_count(delta, n)
    good = n - f
    if good < 2:
        raise ConfigError("need at least two good points", "workers")
    rho = math.sqrt(rho2)
    start2 = (start_distance * rho) ** 2
    tau = adaptive_clip_radius(rho2, start2, delta)
    scale = math.sqrt(rho2 / (2.0 * dim))
    direction = np.zeros(dim)
    direction[0] = 1.0
    iterations = [int(i) for i in iterations]
    totals = np.zeros(len(iterations))
    for trial in range(trials):
        rng = RngStream(seed, ALL_WORKERS, trial, "trial").generator()
        G = rng.standard_normal((good, dim)) * scale
        xbar = G.mean(axis=0)
        u = rng.standard_normal(dim)
        v0 = xbar + start_distance * rho * u / np.linalg.norm(u)
        bad = np.tile(xbar + adversary_distance * rho * direction, (f, 1))
        X = np.vstack([G, bad])
        for k, l in enumerate(iterations):
            v = centered_clip(X, tau, l, v0)
            totals[k] += float(np.sum((v - xbar) ** 2))
    return [ContractionRow(l, float(totals[k] / trials), tau, 4000.0 * delta * rho2, 5.0 * delta * rho2)
            for k, l in enumerate(iterations)]


def momentum_bound(alpha: float, sigma2: float, t: int) -> float:
    """``2 sigma^2 (alpha + (1 - alpha)^(t - 1))``."""
    return 2.0 * sigma2 * (alpha + (1.0 - alpha) ** (t - 1))


def momentum_variance(pairs: int = 2000, times=(1, 5, 20, 50), alpha: float = 0.1, dim: int = 10,
                      sigma: float = 1.0, lr: float = 0.1, seed: int = 0) -> list[tuple[int, float, float]]:
    """Mean ``||m_i - m_j||^2`` over disjoint worker pairs at the requested rounds.

    Runs the simulator on a quadratic with ``2 * pairs`` honest workers,
    worker momentum with ``alpha_1 = 1`` then ``alpha``, and the mean
    aggregator. Returns ``(t, distance, bound)`` rows.
    """
    times = sorted(int(t) for t in times)
    if not times or times[0] < 1:
        raise ConfigError("need rounds >= 1", "study_params.times")
    n = 2 * pairs
    sim = Simulation(
        build_problem(ProblemSpec(kind="quadratic", dim=dim, sigma=sigma)),
        AggregatorSpec(rule="mean"),
        AttackSpec(),
        OptimizerSpec(method="sgdm", lr=lr, beta=1.0 - alpha, alpha_first=1.0),
        n=n, delta=0.0, seed=seed, rounds=times[-1],
    )
    state = sim.init_state()
    wanted = set(times)
    rows = []
    for t in range(1, times[-1] + 1):
        sim.step(state, record=False)
        if t in wanted:
            diff = state.buffers[0::2] - state.buffers[1::2]
            dist = float(np.mean(np.sum(diff * diff, axis=1)))
            rows.append((t, dist, momentum_bound(alpha, sigma**2, t)))
    return rows


def run_study(config) -> tuple[tuple[str, ...], list[tuple], dict]:
    """Dispatch a config's study; returns ``(columns, rows, resolved params)``."""
    params = resolve_params(config.study, config.study_params)
    if config.study == "cc-contraction":
        rows = cc_contraction(n=config.workers, delta=config.delta, seed=config.seed, **params)
        return CC_COLUMNS, [(r.iterations, r.mean_sq_error, r.tau, r.bound_robust, r.bound_tight)
                            for r in rows], params
    rows = momentum_variance(seed=config.seed, **params)
    return MV_COLUMNS, rows, params
