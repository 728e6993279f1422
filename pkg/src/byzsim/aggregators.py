"""Robust aggregation rules.

Every rule maps ``n`` update vectors (rows of an ``(n, d)`` matrix) to one
vector. :func:`aggregate` dispatches on an :class:`AggregatorSpec` and keeps
the per-run :class:`AggregatorState` that centered clipping warm-starts from.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .core import ConfigError, stack

RULES = ("mean", "coordinate-median", "trimmed-mean", "rfa", "krum", "centered-clip")

# breakdown point used by the centered-clipping guarantee
CC_DELTA_MAX = 0.1

DEGENERATE_RADIUS = np.finfo(np.float64).tiny


@dataclass
class AggregatorSpec:
    """Which rule to run and its hyperparameters.

    ``trim`` (trimmed mean) and ``f`` (Krum) may be left as ``None``; they are
    then derived from the run's Byzantine fraction as ``floor(delta * n)``.
    ``radius="adaptive"`` makes centered clipping compute ``tau`` from
    ``rho2``, ``start_error2`` and the Byzantine fraction instead of using
    ``tau`` directly.
    """

    rule: str = "centered-clip"
    trim: Optional[int] = None
    f: Optional[int] = None
    iterations: int = 3
    smoothing: float = 1e-6
    tau: float = 100.0
    clip_iterations: int = 1
    warm_start: bool = True
    radius: str = "fixed"
    rho2: float = 0.0
    start_error2: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.rule not in RULES:
            raise ConfigError(f"unknown rule {self.rule!r}; expected one of {RULES}", "aggregator.rule")
        if self.trim is not None and self.trim < 0:
            raise ConfigError("must be >= 0", "aggregator.trim")
        if self.f is not None and self.f < 0:
            raise ConfigError("must be >= 0", "aggregator.f")
        if self.rule == "rfa":
            if self.iterations < 1:
                raise ConfigError("must be >= 1", "aggregator.iterations")
            if not self.smoothing > 0:
                raise ConfigError("must be > 0", "aggregator.smoothing")
        if self.rule == "centered-clip":
            if not self.tau > 0:
                raise ConfigError("must be > 0", "aggregator.tau")
            if self.clip_iterations < 1:
                raise ConfigError("must be >= 1", "aggregator.clip_iterations")
            if self.radius not in ("fixed", "adaptive"):
                raise ConfigError("must be 'fixed' or 'adaptive'", "aggregator.radius")


@dataclass
class AggregatorState:
    previous: Optional[np.ndarray] = field(default=None)


def coordinate_median(inputs) -> np.ndarray:
    """Per-coordinate median; the lower-middle order statistic for even ``n``."""
    return _kernels.coordinate_median(stack(inputs))


def trimmed_mean(inputs, b: int) -> np.ndarray:
    """Drop the ``b`` smallest and ``b`` largest values per coordinate, average the rest."""
    X = stack(inputs)
    n = X.shape[0]
    if b < 0 or 2 * b >= n:
        raise ConfigError(f"trimmed mean needs 0 <= 2b < n (b={b}, n={n})", "aggregator.trim")
    return _kernels.trimmed_mean(X, b)


def rfa(inputs, iterations: int = 3, smoothing: float = 1e-6) -> np.ndarray:
    """Geometric median by smoothed Weiszfeld iterations from the mean."""
    if iterations < 1 or not smoothing > 0:
        raise ConfigError("rfa needs iterations >= 1 and smoothing > 0", "aggregator")
    return _kernels.weiszfeld(stack(inputs), iterations, smoothing)


def krum(inputs, f: int) -> np.ndarray:
    """Input with the smallest sum of squared distances to its ``n - f - 2`` nearest neighbours.

    Ties go to the lexicographically smallest candidate so the output does not
    depend on input order.
    """
    X = stack(inputs)
    n = X.shape[0]
    m = n - f - 2
    if f < 0 or m < 1:
        raise ConfigError(f"krum needs n - f - 2 >= 1 (n={n}, f={f})", "aggregator.f")
    scores = _kernels.krum_scores(X, m)
    best = np.flatnonzero(scores == scores.min())
    if len(best) > 1:
        best = sorted(best, key=lambda i: tuple(X[i]))
    return X[best[0]].copy()


def centered_clip(inputs, tau: float, iterations: int = 1, v0=None) -> np.ndarray:
    """Run ``iterations`` centered-clipping steps from ``v0`` (zeros if omitted).

    Each step clips every input's offset from the current center to norm
    ``tau`` and moves the center by the average clipped offset.
    """
    X = stack(inputs)
    if not tau > 0 or iterations < 1:
        raise ConfigError("centered clipping needs tau > 0 and iterations >= 1", "aggregator")
    if v0 is None:
        v0 = np.zeros(X.shape[1])
    return _kernels.centered_clip(X, v0, tau, iterations)


def adaptive_clip_radius(rho2: float, start_error2: float, delta: float) -> float:
    """Clipping radius ``sqrt(4 (1-delta) (4 rho^2 + 4/3 B^2) / (sqrt(3) delta))``.

    ``delta == 0`` gives ``inf`` (plain averaging). Zero spread and zero start
    error give a zero radius, which is replaced by the smallest positive
    normal float with a ``RuntimeWarning``.
    """
    if rho2 < 0 or start_error2 < 0:
        raise ConfigError("rho2 and start_error2 must be >= 0", "aggregator")
    if delta < 0 or delta >= 1:
        raise ConfigError("delta must lie in [0, 1)", "delta")
    if delta == 0:
        return math.inf
    if delta > CC_DELTA_MAX:
        warnings.warn(f"delta={delta} exceeds the centered-clipping breakdown point {CC_DELTA_MAX}",
                      RuntimeWarning, stacklevel=2)
    tau2 = 4.0 * (1.0 - delta) * (4.0 * rho2 + (4.0 / 3.0) * start_error2) / (math.sqrt(3.0) * delta)
    if tau2 == 0.0:
        warnings.warn("degenerate clipping radius (rho2 = B2 = 0)", RuntimeWarning, stacklevel=2)
        return float(DEGENERATE_RADIUS)
    return math.sqrt(tau2)


def byzantine_count(delta: float, n: int) -> int:
    """``floor(delta * n)``, tolerant of float representation error."""
    return int(math.floor(delta * n + 1e-9))


def aggregate(spec: AggregatorSpec, state: AggregatorState, inputs, delta: float = 0.0) -> np.ndarray:
    """Combine ``inputs`` with the rule in ``spec``.

    ``delta`` is the Byzantine fraction, used only where ``spec`` leaves a
    count unset (trim, Krum's ``f``) and for the adaptive clipping radius.
    """
    X = stack(inputs)
    n = X.shape[0]
    rule = spec.rule
    if rule == "mean":
        out = _kernels.column_mean(X)
    elif rule == "coordinate-median":
        out = _kernels.coordinate_median(X)
    elif rule == "trimmed-mean":
        b = spec.trim if spec.trim is not None else byzantine_count(delta, n)
        out = trimmed_mean(X, b)
    elif rule == "rfa":
        out = _kernels.weiszfeld(X, spec.iterations, spec.smoothing)
    elif rule == "krum":
        f = spec.f if spec.f is not None else byzantine_count(delta, n)
        out = krum(X, f)
    elif rule == "centered-clip":
        if spec.radius == "adaptive":
            tau = adaptive_clip_radius(spec.rho2, spec.start_error2, delta)
        else:
            tau = spec.tau
        v0 = state.previous if (spec.warm_start and state.previous is not None) else np.zeros(X.shape[1])
        out = _kernels.centered_clip(X, v0, tau, spec.clip_iterations)
    else:  # pragma: no cover - validate() rejects unknown rules
        raise ConfigError(f"unknown rule {rule!r}", "aggregator.rule")
    state.previous = out.copy()
    return out
