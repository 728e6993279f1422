"""Vectors, seeded random streams and noise samplers.

All vectors are float64 numpy arrays. Random streams are derived from
``(seed, purpose, worker, round)`` through :class:`numpy.random.SeedSequence`
spawn keys, so a stream never depends on how many other workers or rounds
exist.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._kernels import column_mean


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending setting when known."""

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class UsageError(ValueError):
    """Bad arguments to a library call (empty lists, ragged shapes, ...)."""


# purpose codes for stream derivation; never renumber
PURPOSES = {
    "gradient": 0,
    "attack": 1,
    "dataset": 2,
    "init": 3,
    "trial": 4,
}

ALL_WORKERS = -1


@dataclass(frozen=True)
class RngStream:
    """Identifies one independent random stream.

    ``worker=ALL_WORKERS`` denotes the round-level stream from which the
    simulator draws every worker's sample as one block, worker ``i`` taking
    row ``i``.
    """

    seed: int
    worker: int = ALL_WORKERS
    round: int = 0
    purpose: str = "gradient"

    def generator(self) -> np.random.Generator:
        if self.seed < 0:
            raise ConfigError("seed must be non-negative", "seed")
        key = (PURPOSES[self.purpose], self.worker + 1, self.round)
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=key)))


NOISE_KINDS = ("gaussian", "rademacher", "power-law", "two-point")


@dataclass(frozen=True)
class NoiseDistribution:
    """A scalar noise law.

    kinds:
      * ``gaussian``: N(0, scale^2)
      * ``rademacher``: +-scale with probability 1/2 each
      * ``power-law``: density 3 x^-4 on x >= 1 (mean 1.5, variance 0.75)
      * ``two-point``: ``values[k]`` with probability ``probs[k]``
    """

    kind: str = "gaussian"
    scale: float = 1.0
    values: tuple[float, ...] = field(default=())
    probs: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"unknown distribution kind {self.kind!r}", "noise.kind")
        if self.kind == "two-point":
            if len(self.values) != 2 or len(self.probs) != 2:
                raise ConfigError("two-point needs exactly two values and two probabilities", "noise")
            if min(self.probs) < 0 or not math.isclose(sum(self.probs), 1.0):
                raise ConfigError("probabilities must be non-negative and sum to 1", "noise.probs")

    @property
    def mean(self) -> float:
        if self.kind == "power-law":
            return 1.5
        if self.kind == "two-point":
            return self.values[0] * self.probs[0] + self.values[1] * self.probs[1]
        return 0.0

    @property
    def variance(self) -> float:
        if self.kind == "power-law":
            return 0.75
        if self.kind == "two-point":
            m = self.mean
            return sum(p * (v - m) ** 2 for v, p in zip(self.values, self.probs))
        return self.scale**2

    def cdf(self, x):
        """Population CDF (only power-law and gaussian are needed by the tests)."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "power-law":
            return np.where(x < 1.0, 0.0, 1.0 - np.maximum(x, 1.0) ** -3.0)
        if self.kind == "gaussian":
            from scipy.special import ndtr

            return ndtr(x / self.scale)
        raise NotImplementedError(self.kind)

    def draw(self, rng: np.random.Generator, shape) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.standard_normal(shape) * self.scale
        if self.kind == "rademacher":
            return np.where(rng.random(shape) < 0.5, -self.scale, self.scale)
        if self.kind == "power-law":
            # inverse CDF of F(x) = 1 - x^-3
            return (1.0 - rng.random(shape)) ** (-1.0 / 3.0)
        u = rng.random(shape)
        return np.where(u < self.probs[0], self.values[0], self.values[1])


def sample(dist: NoiseDistribution, stream: RngStream, count: int) -> np.ndarray:
    """``count`` i.i.d. draws of ``dist`` from ``stream``."""
    if count < 1:
        raise UsageError("count must be >= 1")
    return dist.draw(stream.generator(), count)


def stack(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Stack update vectors into an ``(n, d)`` matrix, checking shapes."""
    if len(vectors) == 0:
        raise UsageError("need at least one vector")
    if isinstance(vectors, np.ndarray):
        if vectors.ndim != 2:
            raise UsageError("expected an (n, d) matrix")
        return np.ascontiguousarray(vectors, dtype=np.float64)
    rows = [np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in vectors]
    d = rows[0].shape
    if any(r.ndim != 1 or r.shape != d for r in rows):
        raise UsageError("update vectors must be 1-D with equal lengths")
    return np.ascontiguousarray(np.stack(rows))


def mean(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Coordinate-wise mean, summed in index order."""
    return column_mean(stack(vectors))


def sq_norm(v) -> float:
    v = np.asarray(v, dtype=np.float64)
    return float(np.dot(v, v))
