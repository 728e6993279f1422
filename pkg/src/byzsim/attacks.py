"""Byzantine worker behaviours.

Attacks are omniscient: they see every good worker's message for the round
(whatever the protocol sends: gradients, momenta or MVR estimates) and the
messages the Byzantine workers would have sent had they been honest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .core import ConfigError, column_mean, stack

KINDS = ("none", "bit-flip", "label-flip", "ipm", "alie", "gaussian", "indistinguishable-shift")


@dataclass
class AttackSpec:
    """Attack kind, its parameters, and optionally an explicit Byzantine index set.

    ``byzantine=None`` means the last ``floor(delta * n)`` worker indices.
    ``z=None`` (ALIE) computes z from ``n`` and the Byzantine count.
    ``shift_prob``/``shift_sigma`` default to ``delta / 6`` and the problem's sigma.
    """

    kind: str = "none"
    epsilon: float = 0.1
    z: Optional[float] = None
    alie_sign: int = -1
    sigma_attack: float = 1e8
    shift_prob: Optional[float] = None
    shift_sigma: Optional[float] = None
    start_round: int = 1
    byzantine: Optional[list[int]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown kind {self.kind!r}; expected one of {KINDS}", "attack.kind")
        if self.kind == "ipm" and not self.epsilon > 0:
            raise ConfigError("must be > 0", "attack.epsilon")
        if self.kind == "gaussian" and self.sigma_attack < 0:
            raise ConfigError("must be >= 0", "attack.sigma_attack")
        if self.alie_sign not in (-1, 1):
            raise ConfigError("must be -1 or +1", "attack.alie_sign")
        if self.shift_prob is not None and not 0 <= self.shift_prob <= 1:
            raise ConfigError("must lie in [0, 1]", "attack.shift_prob")
        if self.byzantine is not None:
            self.byzantine = sorted(int(i) for i in self.byzantine)
            if len(set(self.byzantine)) != len(self.byzantine):
                raise ConfigError("duplicate indices", "attack.byzantine")

    def byzantine_set(self, n: int, count: int) -> list[int]:
        if self.byzantine is not None:
            if any(i < 0 or i >= n for i in self.byzantine):
                raise ConfigError(f"indices must lie in [0, {n})", "attack.byzantine")
            if len(self.byzantine) != count:
                raise ConfigError(f"expected {count} = floor(delta * n) indices, got {len(self.byzantine)}",
                                  "attack.byzantine")
            return list(self.byzantine)
        return list(range(n - count, n))


@dataclass
class AttackContext:
    """Everything an omniscient attacker sees in one round.

    ``good`` holds the good workers' messages (rows in ``good_index`` order);
    ``own`` holds the messages the Byzantine workers computed by following
    the protocol themselves (rows in ``byzantine`` order).
    """

    good_index: Sequence[int]
    good: np.ndarray
    byzantine: Sequence[int]
    own: np.ndarray
    round: int
    x: np.ndarray
    rng: np.random.Generator
    problem: object = None
    n: int = 0
    delta: float = 0.0
    extra: dict = field(default_factory=dict)


def alie_z(n: int, f: int) -> float:
    """z for "a little is enough": Phi^{-1}((n - f - s) / (n - f)) with s = floor(n/2 + 1) - f."""
    if f < 0 or not f < n / 2:
        raise ConfigError(f"need 0 <= f < n/2 (n={n}, f={f})", "attack.z")
    s = math.floor(n / 2 + 1) - f
    arg = (n - f - s) / (n - f)
    if not 0 < arg < 1:
        raise ConfigError(f"inverse-normal argument {arg} outside (0, 1) for n={n}, f={f}", "attack.z")
    return float(ndtri(arg))


def ipm_messages(good, count: int, epsilon: float) -> np.ndarray:
    """Every Byzantine worker sends ``-epsilon * mean(good)``."""
    m = column_mean(stack(good))
    return np.tile(-epsilon * m, (count, 1))


def alie_messages(good, count: int, z: float, sign: int = -1) -> np.ndarray:
    """Per coordinate, ``mu_j + sign * z * s_j`` with the sample std ``s_j`` (ddof 1)."""
    G = stack(good)
    if G.shape[0] < 2:
        raise ConfigError("ALIE needs at least two good messages", "attack.kind")
    mu = column_mean(G)
    s = np.std(G, axis=0, ddof=1)
    return np.tile(mu + sign * z * s, (count, 1))


def gaussian_messages(rng: np.random.Generator, count: int, dim: int, sigma_attack: float) -> np.ndarray:
    return rng.standard_normal((count, dim)) * sigma_attack


def binomial_inverse(u: float, n: int, p: float) -> int:
    """Smallest k with Binomial(n, p) CDF(k) >= u, by walking the pmf."""
    if p <= 0.0:
        return 0
    if p >= 1.0:
        return n
    q = 1.0 - p
    pmf = q**n
    cdf = pmf
    k = 0
    ratio = p / q
    while cdf < u and k < n:
        pmf *= (n - k) / (k + 1) * ratio
        k += 1
        cdf += pmf
    return k


def indistinguishable_shift(ctx: AttackContext, shift_prob: float, sigma: float):
    """Shift ``min(#byzantine, C_t)`` Byzantine messages by ``-sigma / sqrt(shift_prob)``.

    ``C_t ~ Binomial(n, shift_prob)`` is drawn by inversion from one uniform
    of the attack stream. Returns ``(messages, k)``.
    """
    if ctx.problem is not None and getattr(ctx.problem, "dim", 1) != 1:
        raise ConfigError("indistinguishable-shift needs a scalar problem", "attack.kind")
    u = ctx.rng.random()
    c_t = binomial_inverse(u, ctx.n, shift_prob)
    k = min(len(ctx.byzantine), c_t)
    out = np.array(ctx.own, dtype=np.float64, copy=True)
    if k and shift_prob > 0:
        out[:k] -= sigma / math.sqrt(shift_prob)
    return out, k


def label_flip_messages(ctx: AttackContext) -> np.ndarray:
    """Byzantine messages computed on flipped labels (``l -> K - 1 - l``).

    The optimizer computes those messages itself (the flip happens before the
    worker's momentum step), so here they arrive as ``ctx.own``.
    """
    if ctx.problem is None or not getattr(ctx.problem, "has_labels", False):
        raise ConfigError("label-flip needs a classification problem", "attack.kind")
    return np.array(ctx.own, copy=True)


def flips_labels(spec: AttackSpec) -> bool:
    return spec.kind == "label-flip"


def run_attack(spec: AttackSpec, ctx: AttackContext) -> tuple[np.ndarray, int]:
    """Byzantine messages as an ``(f, d)`` matrix plus the number of active attackers."""
    f = len(ctx.byzantine)
    d = ctx.own.shape[1] if f else ctx.good.shape[1]
    if f == 0:
        return np.empty((0, d)), 0
    kind = spec.kind
    if kind == "none" or ctx.round < spec.start_round:
        return np.array(ctx.own, copy=True), 0
    if kind == "bit-flip":
        return -np.asarray(ctx.own, dtype=np.float64), f
    if kind == "label-flip":
        return label_flip_messages(ctx), f
    if kind == "ipm":
        return ipm_messages(ctx.good, f, spec.epsilon), f
    if kind == "alie":
        z = spec.z if spec.z is not None else alie_z(ctx.n, f)
        return alie_messages(ctx.good, f, z, spec.alie_sign), f
    if kind == "gaussian":
        return gaussian_messages(ctx.rng, f, d, spec.sigma_attack), f
    # indistinguishable-shift
    p = spec.shift_prob if spec.shift_prob is not None else ctx.delta / 6.0
    sigma = spec.shift_sigma if spec.shift_sigma is not None else getattr(ctx.problem, "sigma", 1.0)
    return indistinguishable_shift(ctx, p, sigma)


def apply_attack(spec: AttackSpec, ctx: AttackContext) -> list[tuple[int, np.ndarray]]:
    """One ``(byzantine index, message)`` pair per Byzantine worker."""
    messages, _ = run_attack(spec, ctx)
    return [(int(i), messages[k]) for k, i in enumerate(ctx.byzantine)]

