"""Synthetic stochastic optimization problems with known structure.

A problem hands out stochastic gradients in two steps so that methods which
need the same minibatch at two points (MVR) can do so::

    batch = problem.draw_batch(count, rng)   # one row per worker
    G = problem.batch_gradients(x, batch)    # x: (d,) shared or (count, d)

``G`` has shape ``(count, d)`` and row ``i`` is worker ``i``'s gradient.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from scipy.special import log_softmax, softmax

from .core import ConfigError, NoiseDistribution, RngStream, UsageError

KINDS = ("quadratic", "scalar-lower-bound", "heavy-tail-scalar", "imbalanced-softmax", "rademacher-scalar")


@dataclass
class ProblemSpec:
    """Problem kind plus its parameters; unused fields are ignored by a kind.

    Field use per kind:
      quadratic: dim, L, mu, sigma, noise, x0_scale
      scalar-lower-bound: mu, sigma, shift_prob (the tilde-delta), variant (1 or 2)
      heavy-tail-scalar: optimum
      imbalanced-softmax: classes, gamma, features, dataset_size, batch_size, separation
      rademacher-scalar: (none)
    """

    kind: str = "quadratic"
    dim: int = 10
    L: float = 1.0
    mu: float = 0.1
    sigma: float = 1.0
    noise: str = "gaussian"
    x0_scale: float = 1.0
    shift_prob: Optional[float] = None
    variant: int = 1
    optimum: float = 1.0
    x0: Optional[float] = None
    classes: int = 10
    gamma: float = 0.5
    features: int = 20
    dataset_size: int = 4096
    batch_size: int = 1
    separation: float = 2.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown kind {self.kind!r}; expected one of {KINDS}", "problem.kind")
        if self.kind == "quadratic":
            if self.dim < 1:
                raise ConfigError("must be >= 1", "problem.dim")
            if not 0 < self.mu <= self.L:
                raise ConfigError("need 0 < mu <= L", "problem.mu")
            if self.sigma < 0:
                raise ConfigError("must be >= 0", "problem.sigma")
            NoiseDistribution(self.noise)
        if self.kind == "scalar-lower-bound":
            if self.variant not in (1, 2):
                raise ConfigError("must be 1 or 2", "problem.variant")
            if self.shift_prob is not None and not 0 < self.shift_prob <= 1:
                raise ConfigError("must lie in (0, 1]", "problem.shift_prob")
            if not self.mu > 0:
                raise ConfigError("must be > 0", "problem.mu")
        if self.kind == "imbalanced-softmax":
            if self.classes < 2:
                raise ConfigError("must be >= 2", "problem.classes")
            if not 0 < self.gamma <= 1:
                raise ConfigError("must lie in (0, 1]", "problem.gamma")
            if self.batch_size < 1:
                raise ConfigError("must be >= 1", "problem.batch_size")


class Problem:
    """Base class; subclasses fill in the gradient law."""

    dim: int
    L: float
    sigma2: float
    f_star: float = 0.0
    x_star: Optional[np.ndarray] = None
    has_labels = False

    def initial_point(self) -> np.ndarray:
        return np.zeros(self.dim)

    def loss(self, x) -> float:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def draw_batch(self, count: int, rng: np.random.Generator) -> Any:
        raise NotImplementedError

    def batch_gradients(self, x, batch, flip_labels: bool = False) -> np.ndarray:
        raise NotImplementedError

    def accuracy(self, x) -> float:
        return math.nan

    def stochastic_gradient(self, x, stream: RngStream) -> np.ndarray:
        """One worker's stochastic gradient at ``x`` from its own stream."""
        rng = stream.generator()
        return self.batch_gradients(np.asarray(x, dtype=np.float64), self.draw_batch(1, rng))[0]


def _points(x, count, dim):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return np.broadcast_to(x, (count, dim))
    if x.shape != (count, dim):
        raise UsageError(f"points must have shape ({count}, {dim}), got {x.shape}")
    return x


class Quadratic(Problem):
    """f(x) = 1/2 x^T H x with diagonal H, eigenvalues evenly spaced in [mu, L].

    Noise is i.i.d. per coordinate from ``noise``, standardized and scaled by
    ``sigma / sqrt(d)`` so that E||g - grad f||^2 = sigma^2 exactly.
    """

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        self.dim = spec.dim
        self.h = np.linspace(spec.mu, spec.L, spec.dim) if spec.dim > 1 else np.array([spec.L])
        self.L = float(self.h.max())
        self.mu = float(self.h.min())
        self.sigma2 = spec.sigma**2
        self.noise = NoiseDistribution(spec.noise)
        self.x_star = np.zeros(self.dim)
        self.f_star = 0.0
        self._noise_scale = spec.sigma / math.sqrt(self.dim) / math.sqrt(self.noise.variance)

    def initial_point(self):
        return np.full(self.dim, self.spec.x0_scale)

    def loss(self, x):
        x = np.asarray(x, dtype=np.float64)
        return 0.5 * float(np.dot(self.h * x, x))

    def gradient(self, x):
        return self.h * np.asarray(x, dtype=np.float64)

    def draw_batch(self, count, rng):
        if self.sigma2 == 0:
            return np.zeros((count, self.dim))
        return (self.noise.draw(rng, (count, self.dim)) - self.noise.mean) * self._noise_scale

    def batch_gradients(self, x, batch, flip_labels=False):
        if flip_labels:
            raise ConfigError("quadratic problem has no labels", "attack.kind")
        X = _points(x, batch.shape[0], self.dim)
        return X * self.h + batch


class ScalarLowerBound(Problem):
    """The two indistinguishable scalar problems behind the permutation-invariance lower bound.

    variant 1: f(x) = mu/2 x^2 - G x with G = sigma * sqrt(p); the stochastic
    gradient is ``mu x - sigma / sqrt(p)`` with probability ``p`` and ``mu x``
    otherwise (unbiased, variance sigma^2 (1 - p)).
    variant 2: f(x) = mu/2 x^2 with the deterministic gradient ``mu x``.
    """

    def __init__(self, spec: ProblemSpec, delta: float = 0.0):
        p = spec.shift_prob if spec.shift_prob is not None else delta / 6.0
        if not 0 < p <= 1:
            raise ConfigError("shift probability must lie in (0, 1]; set problem.shift_prob or delta > 0",
                              "problem.shift_prob")
        self.spec = spec
        self.dim = 1
        self.mu = spec.mu
        self.L = spec.mu
        self.sigma = spec.sigma
        self.shift_prob = p
        self.shift = spec.sigma / math.sqrt(p)
        self.variant = spec.variant
        self.G = spec.sigma * math.sqrt(p) if spec.variant == 1 else 0.0
        self.x_star = np.array([self.G / self.mu])
        self.f_star = -self.G**2 / (2 * self.mu)
        self.sigma2 = spec.sigma**2 * (1 - p) if spec.variant == 1 else 0.0

    def initial_point(self):
        return np.array([self.spec.x0 if self.spec.x0 is not None else 0.0])

    def loss(self, x):
        x = float(np.asarray(x).ravel()[0])
        return 0.5 * self.mu * x * x - self.G * x

    def gradient(self, x):
        return np.asarray(x, dtype=np.float64).reshape(1) * self.mu - self.G

    def draw_batch(self, count, rng):
        if self.variant == 2:
            return np.zeros((count, 1), dtype=bool)
        return rng.random((count, 1)) < self.shift_prob

    def batch_gradients(self, x, batch, flip_labels=False):
        if flip_labels:
            raise ConfigError("scalar problem has no labels", "attack.kind")
        X = _points(x, batch.shape[0], 1)
        return self.mu * X - self.shift * batch


def lower_bound_gradient(problem: ScalarLowerBound, x: float, stream: RngStream) -> float:
    """One draw of the two-point lower-bound gradient at scalar ``x``."""
    return float(problem.stochastic_gradient(np.array([x]), stream)[0])


class HeavyTailScalar(Problem):
    """f(x) = 1/2 (x - x*)^2 with gradient noise ``s - 1.5``, s power-law (density 3 s^-4)."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        self.dim = 1
        self.L = 1.0
        self.noise = NoiseDistribution("power-law")
        self.sigma2 = self.noise.variance
        self.x_star = np.array([spec.optimum])
        self.f_star = 0.0

    def initial_point(self):
        return np.array([self.spec.x0 if self.spec.x0 is not None else 0.0])

    def loss(self, x):
        r = float(np.asarray(x).ravel()[0]) - self.spec.optimum
        return 0.5 * r * r

    def gradient(self, x):
        return np.asarray(x, dtype=np.float64).reshape(1) - self.spec.optimum

    def draw_batch(self, count, rng):
        return self.noise.draw(rng, (count, 1))

    def batch_gradients(self, x, batch, flip_labels=False):
        if flip_labels:
            raise ConfigError("scalar problem has no labels", "attack.kind")
        X = _points(x, batch.shape[0], 1)
        return (X - self.spec.optimum) + (batch - self.noise.mean)


def heavy_tail_gradient(problem: HeavyTailScalar, x: float, stream: RngStream) -> float:
    return float(problem.stochastic_gradient(np.array([x]), stream)[0])


class RademacherScalar(Problem):
    """f(x) = 1/2 x^2 with gradient ``x + r``, r uniform on {-1, +1}."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        self.dim = 1
        self.L = 1.0
        self.sigma2 = 1.0
        self.x_star = np.zeros(1)
        self.f_star = 0.0
        self.noise = NoiseDistribution("rademacher")

    def initial_point(self):
        return np.array([self.spec.x0 if self.spec.x0 is not None else 0.0])

    def loss(self, x):
        x = float(np.asarray(x).ravel()[0])
        return 0.5 * x * x

    def gradient(self, x):
        return np.asarray(x, dtype=np.float64).reshape(1).copy()

    def draw_batch(self, count, rng):
        return self.noise.draw(rng, (count, 1))

    def batch_gradients(self, x, batch, flip_labels=False):
        if flip_labels:
            raise ConfigError("scalar problem has no labels", "attack.kind")
        return _points(x, batch.shape[0], 1) + batch


def rademacher_stream(n: int, stream: RngStream) -> np.ndarray:
    """``n`` i.i.d. +-1 draws; ``n`` must be odd."""
    if n < 1 or n % 2 == 0:
        raise ConfigError(f"n must be a positive odd integer, got {n}", "n")
    return NoiseDistribution("rademacher").draw(stream.generator(), n)


def class_counts(classes: int, gamma: float, per_class: int) -> list[int]:
    """Class ``k`` (0-based) keeps ``ceil(gamma**k * per_class)`` examples."""
    return [int(math.ceil(gamma**k * per_class - 1e-9)) for k in range(classes)]


@dataclass
class SoftmaxData:
    features: np.ndarray  # (N, p)
    labels: np.ndarray  # (N,)
    centers: np.ndarray = field(repr=False)


class ImbalancedSoftmax(Problem):
    """Multinomial logistic regression on Gaussian class clusters with geometric class decay.

    Parameters are the flattened ``(K, p + 1)`` weight matrix (last column is
    the bias). The loss is the mean cross-entropy over the whole dataset;
    stochastic gradients average ``batch_size`` examples drawn uniformly with
    replacement.
    """

    has_labels = True

    def __init__(self, spec: ProblemSpec, seed: int = 0):
        self.spec = spec
        K, p = spec.classes, spec.features
        self.K = K
        self.p = p
        self.dim = K * (p + 1)
        per_class = spec.dataset_size // K
        counts = class_counts(K, spec.gamma, per_class)
        rng = RngStream(seed, purpose="dataset").generator()
        if p < K:
            raise ConfigError(f"need features >= classes for orthogonal class centers ({p} < {K})",
                              "problem.features")
        # Gaussian draw, orthonormalized so no two classes share gradient directions
        q, _ = np.linalg.qr(rng.standard_normal((p, K)))
        centers = q.T * spec.separation
        feats, labels = [], []
        for k, c in enumerate(counts):
            feats.append(centers[k] + rng.standard_normal((c, p)))
            labels.append(np.full(c, k, dtype=np.int64))
        X = np.concatenate(feats)
        y = np.concatenate(labels)
        order = rng.permutation(len(y))
        self.data = SoftmaxData(X[order], y[order], centers)
        if spec.batch_size > len(y):
            raise ConfigError(f"batch size {spec.batch_size} exceeds dataset size {len(y)}", "problem.batch_size")
        self.Xa = np.hstack([self.data.features, np.ones((len(y), 1))])
        # softmax cross-entropy Hessian is bounded by 1/2 ||x~||^2
        self.L = 0.5 * float(np.max(np.einsum("ij,ij->i", self.Xa, self.Xa)))
        self.f_star = 0.0
        self.sigma2 = math.nan
        self.counts = counts

    @property
    def num_examples(self) -> int:
        return len(self.data.labels)

    def _weights(self, x):
        return np.asarray(x, dtype=np.float64).reshape(self.K, self.p + 1)

    def loss(self, x):
        logits = self.Xa @ self._weights(x).T
        return float(-np.mean(log_softmax(logits, axis=1)[np.arange(self.num_examples), self.data.labels]))

    def gradient(self, x):
        return self._grad(self._weights(x), self.Xa, self.data.labels).ravel()

    def _grad(self, W, Xa, y):
        P = softmax(Xa @ W.T, axis=1)
        P[np.arange(len(y)), y] -= 1.0
        return P.T @ Xa / len(y)

    def accuracy(self, x):
        logits = self.Xa @ self._weights(x).T
        return float(np.mean(np.argmax(logits, axis=1) == self.data.labels))

    def draw_batch(self, count, rng):
        return rng.integers(0, self.num_examples, size=(count, self.spec.batch_size))

    def flip(self, labels):
        return self.K - 1 - labels

    def batch_gradients(self, x, batch, flip_labels=False):
        count, b = batch.shape
        X = np.asarray(x, dtype=np.float64)
        Xa = self.Xa[batch]  # (count, b, p+1)
        y = self.data.labels[batch]
        if flip_labels:
            y = self.flip(y)
        if X.ndim == 1:
            logits = Xa @ self._weights(X).T  # (count, b, K)
        else:
            W = X.reshape(count, self.K, self.p + 1)
            logits = np.einsum("cbj,ckj->cbk", Xa, W)
        P = softmax(logits, axis=2)
        rows = np.arange(count)[:, None]
        cols = np.arange(b)[None, :]
        P[rows, cols, y] -= 1.0
        G = np.einsum("cbk,cbj->ckj", P, Xa) / b
        return G.reshape(count, self.dim)

    def minibatch_loss(self, x, indices, flip_labels=False):
        """Mean cross-entropy on the given example indices (used by gradient checks)."""
        y = self.data.labels[indices]
        if flip_labels:
            y = self.flip(y)
        logits = self.Xa[indices] @ self._weights(x).T
        return float(-np.mean(log_softmax(logits, axis=1)[np.arange(len(y)), y]))

    def export_csv(self, path):
        """Write the generated dataset as ``f0..f{p-1},label`` rows."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"f{j}" for j in range(self.p)] + ["label"])
            for row, label in zip(self.data.features, self.data.labels):
                w.writerow([f"{v:.17g}" for v in row] + [int(label)])


def imbalanced_softmax_batch(problem: ImbalancedSoftmax, x, batch_size: int, stream: RngStream) -> np.ndarray:
    """Minibatch gradient of ``batch_size`` uniformly drawn examples."""
    if batch_size > problem.num_examples:
        raise ConfigError("batch size exceeds dataset size", "problem.batch_size")
    idx = stream.generator().integers(0, problem.num_examples, size=(1, batch_size))
    return problem.batch_gradients(x, idx)[0]


def build_problem(spec: ProblemSpec, seed: int = 0, delta: float = 0.0) -> Problem:
    if spec.kind == "quadratic":
        return Quadratic(spec)
    if spec.kind == "scalar-lower-bound":
        return ScalarLowerBound(spec, delta)
    if spec.kind == "heavy-tail-scalar":
        return HeavyTailScalar(spec)
    if spec.kind == "rademacher-scalar":
        return RademacherScalar(spec)
    return ImbalancedSoftmax(spec, seed)
