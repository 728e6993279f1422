"""Server/worker round protocol.

Each round every worker computes a stochastic gradient at the current model
and turns it into a message (the raw gradient, a momentum buffer, or an MVR
estimate). The attack then overwrites the Byzantine workers' messages, the
aggregator combines all ``n`` messages and the server takes a step.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .aggregators import AggregatorSpec, AggregatorState, aggregate, byzantine_count
from .attacks import AttackContext, AttackSpec, flips_labels, run_attack
from .core import ALL_WORKERS, ConfigError, RngStream, column_mean, sq_norm
from .problems import Problem

METHODS = ("sgd", "sgdm", "sgdm-traditional", "mvr")
SCHEDULES = ("constant", "thm6", "thm3", "mvr")

DEFAULT_C = 4000.0


@dataclass
class OptimizerSpec:
    """Optimization method and step-size/momentum settings.

    With ``schedule="constant"``: ``sgdm`` uses ``alpha_t = 1 - beta`` from the
    first round (buffers start at zero) and ``mvr`` uses ``alpha_1 = 1`` then
    ``alpha``. The theory schedules set ``alpha_1 = 1`` and derive ``lr`` and
    ``alpha`` from the problem constants. ``alpha_first`` overrides the
    first-round momentum weight of ``sgdm``. ``scale_tau`` multiplies the
    centered-clipping radius by ``alpha_t`` for ``sgdm``.
    """

    method: str = "sgdm"
    lr: float = 0.1
    beta: float = 0.9
    alpha: float = 0.1
    schedule: str = "constant"
    local_steps: int = 1
    c: float = DEFAULT_C
    scale_tau: bool = True
    sigma2: Optional[float] = None
    f_star: Optional[float] = None
    alpha_first: Optional[float] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}", "optimizer.method")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.schedule!r}; expected one of {SCHEDULES}",
                              "optimizer.schedule")
        if not self.lr > 0:
            raise ConfigError("must be > 0", "optimizer.lr")
        if not 0 <= self.beta < 1:
            raise ConfigError("must lie in [0, 1)", "optimizer.beta")
        if not 0 < self.alpha <= 1:
            raise ConfigError("must lie in (0, 1]", "optimizer.alpha")
        if self.alpha_first is not None and not 0 < self.alpha_first <= 1:
            raise ConfigError("must lie in (0, 1]", "optimizer.alpha_first")
        if self.local_steps < 1:
            raise ConfigError("must be >= 1", "optimizer.local_steps")
        if self.local_steps > 1 and self.method == "mvr":
            raise ConfigError("local steps are only supported for sgd and sgdm variants", "optimizer.local_steps")
        if self.schedule in ("thm6", "thm3") and self.method != "sgdm":
            raise ConfigError(f"schedule {self.schedule!r} requires method 'sgdm'", "optimizer.schedule")
        if self.schedule == "mvr" and self.method != "mvr":
            raise ConfigError("schedule 'mvr' requires method 'mvr'", "optimizer.schedule")


def worker_momentum_step(m_prev, g, beta):
    """``(1 - beta) g + beta m_prev``."""
    return (1.0 - beta) * g + beta * m_prev


def traditional_momentum_step(m_prev, g, beta):
    """``g + beta m_prev`` (equivalent to the EMA form with step size ``lr / (1 - beta)``)."""
    return g + beta * m_prev


def mvr_step(d_prev, g_at_x_prev, g_at_x_prevprev, alpha):
    """``alpha g(x_{t-1}) + (1 - alpha) d_{t-1} + (1 - alpha)(g(x_{t-1}) - g(x_{t-2}))``.

    Both gradients must come from the same minibatch. Evaluated as
    ``g(x_{t-1}) + (1 - alpha)(d_{t-1} - g(x_{t-2}))``, which is the same
    expression regrouped; with noiseless gradients ``d_{t-1} - g(x_{t-2})``
    is exactly zero, so the estimate equals the true gradient bit for bit.
    """
    return g_at_x_prev + (1.0 - alpha) * (d_prev - g_at_x_prevprev)


def thm6_schedule(f0_minus_fstar, L, sigma2, n, delta, c, T):
    """Step size and momentum for robust SGDm with a (delta_max, c)-robust aggregator.

    eta = min(sqrt(((f0 - f*) + 5 c delta sigma^2 / (16 L)) / (20 L T sigma^2 (2/n + c delta))), 1/(8L))
    and alpha_t = 8 L eta for t >= 2 (alpha_1 = 1). Writing (2/n + c delta)
    as (1/n)(2 + c delta n) gives the same value.
    """
    denom = 20.0 * L * T * sigma2 * (2.0 / n + c * delta)
    first = math.inf if denom == 0 else math.sqrt((f0_minus_fstar + 5.0 * c * delta * sigma2 / (16.0 * L)) / denom)
    eta = min(first, 1.0 / (8.0 * L))
    return eta, min(1.0, 8.0 * L * eta)


def thm3_schedule(f0_minus_fstar, L, sigma2, T):
    """Plain SGDm: eta = min(sqrt((f0 - f*) / (L T)) / (4 sigma), 1/(4L)), alpha_t = 4 L eta."""
    first = math.inf if sigma2 == 0 else math.sqrt(f0_minus_fstar / (L * T)) / (4.0 * math.sqrt(sigma2))
    eta = min(first, 1.0 / (4.0 * L))
    return eta, min(1.0, 4.0 * L * eta)


def mvr_schedule(f0_minus_fstar, L, sigma2, n, delta, c, T):
    """eta = min(cbrt((f0 - f*) / (T 1536 L^2 sigma^2 (c delta + 1)(c delta + 1/n))), 1/(4L)),
    alpha = 192 L^2 eta^2 (1 + c delta), clamped to (0, 1]."""
    denom = T * 1536.0 * L**2 * sigma2 * (c * delta + 1.0) * (c * delta + 1.0 / n)
    first = math.inf if denom == 0 else (f0_minus_fstar / denom) ** (1.0 / 3.0)
    eta = min(first, 1.0 / (4.0 * L))
    alpha = 192.0 * L**2 * eta**2 * (1.0 + c * delta)
    return eta, min(1.0, alpha)


@dataclass
class MetricRecord:
    round: int
    loss: float
    grad_norm_sq: float
    agg_error: float
    suboptimality: float
    attack_active: int
    wall_ms: float
    accuracy: float = math.nan
    aggregate_bias: float = math.nan


METRIC_FIELDS = ("round", "loss", "grad_norm_sq", "agg_error", "suboptimality", "attack_active",
                 "wall_ms", "accuracy", "aggregate_bias")


@dataclass
class RoundState:
    x: np.ndarray
    buffers: np.ndarray
    t: int = 0
    x_prev: Optional[np.ndarray] = None
    agg_state: AggregatorState = field(default_factory=AggregatorState)
    diverged_at: Optional[int] = None


class Simulation:
    """One experiment: problem, aggregator, attack and optimizer wired together.

    Random streams: round ``t`` draws every worker's minibatch from the
    round-level gradient stream ``(seed, t)`` (worker ``i`` takes row ``i``)
    and the attack from the round-level attack stream.
    """

    def __init__(self, problem: Problem, aggregator: AggregatorSpec, attack: AttackSpec,
                 optimizer: OptimizerSpec, n: int, delta: float = 0.0, seed: int = 0,
                 rounds: int = 100, divergence_threshold: float = 1e12, x0=None):
        if n < 1:
            raise ConfigError("must be >= 1", "workers")
        if not 0 <= delta < 1:
            raise ConfigError("must lie in [0, 1)", "delta")
        self.problem = problem
        self.aggregator = aggregator
        self.attack = attack
        self.optimizer = optimizer
        self.n = n
        self.delta = delta
        self.seed = seed
        self.rounds = rounds
        self.divergence_threshold = divergence_threshold
        self.byzantine = attack.byzantine_set(n, byzantine_count(delta, n))
        byz = set(self.byzantine)
        self.good = [i for i in range(n) if i not in byz]
        if not self.good:
            raise ConfigError("no good workers left", "delta")
        self._byz_idx = np.array(self.byzantine, dtype=np.int64)
        self._good_idx = np.array(self.good, dtype=np.int64)
        self.x0 = np.array(problem.initial_point() if x0 is None else x0, dtype=np.float64)
        if attack.kind == "label-flip" and not problem.has_labels:
            raise ConfigError("label-flip needs a classification problem", "attack.kind")
        self.f_star = optimizer.f_star if optimizer.f_star is not None else problem.f_star
        self.eta, self.alpha = self._schedule()

    def _schedule(self):
        o = self.optimizer
        if o.schedule == "constant":
            return o.lr, (1.0 - o.beta if o.method == "sgdm" else o.alpha)
        sigma2 = o.sigma2 if o.sigma2 is not None else self.problem.sigma2
        if sigma2 is None or math.isnan(sigma2):
            raise ConfigError("theory schedules need sigma2 (set optimizer.sigma2)", "optimizer.sigma2")
        gap = self.problem.loss(self.x0) - self.f_star
        L = self.problem.L
        if o.schedule == "thm6":
            return thm6_schedule(gap, L, sigma2, self.n, self.delta, o.c, self.rounds)
        if o.schedule == "thm3":
            return thm3_schedule(gap, L, sigma2, self.rounds)
        return mvr_schedule(gap, L, sigma2, self.n, self.delta, o.c, self.rounds)

    def alpha_at(self, t: int) -> float:
        o = self.optimizer
        if t == 1 and o.method == "sgdm" and o.alpha_first is not None:
            return o.alpha_first
        if o.method == "sgdm" and o.schedule == "constant":
            return self.alpha
        return 1.0 if t == 1 else self.alpha

    def init_state(self) -> RoundState:
        d = self.x0.shape[0]
        return RoundState(x=self.x0.copy(), buffers=np.zeros((self.n, d)))

    def _gradients(self, points, batch, flip):
        G = self.problem.batch_gradients(points, batch)
        if flip and len(self.byzantine):
            pts = points if np.ndim(points) == 1 else points[self._byz_idx]
            G[self._byz_idx] = self.problem.batch_gradients(pts, batch[self._byz_idx], flip_labels=True)
        return G

    def _messages(self, state: RoundState, t: int, rng, flip):
        o = self.optimizer
        method = o.method
        alpha_t = self.alpha_at(t)
        if o.local_steps > 1:
            k = o.local_steps
            X = np.tile(state.x, (self.n, 1))
            buf = state.buffers
            for _ in range(k):
                G = self._gradients(X, self.problem.draw_batch(self.n, rng), flip)
                if method == "sgd":
                    step = G
                elif method == "sgdm":
                    buf = worker_momentum_step(buf, G, 1.0 - alpha_t)
                    step = buf
                else:
                    buf = traditional_momentum_step(buf, G, o.beta)
                    step = buf
                X = X - self.eta * step
            state.buffers = buf
            return (state.x - X) / (k * self.eta)
        batch = self.problem.draw_batch(self.n, rng)
        G = self._gradients(state.x, batch, flip)
        if method == "sgd":
            return G
        if method == "sgdm":
            state.buffers = worker_momentum_step(state.buffers, G, 1.0 - alpha_t)
        elif method == "sgdm-traditional":
            state.buffers = traditional_momentum_step(state.buffers, G, o.beta)
        elif t == 1 or alpha_t == 1.0:
            state.buffers = G
        else:
            G_prev = self._gradients(state.x_prev, batch, flip)
            state.buffers = mvr_step(state.buffers, G, G_prev, alpha_t)
        return state.buffers.copy()

    def _aggregator_for_round(self, t):
        spec = self.aggregator
        o = self.optimizer
        if spec.rule == "centered-clip" and o.scale_tau and o.method == "sgdm" and spec.radius == "fixed":
            return replace(spec, tau=spec.tau * self.alpha_at(t))
        return spec

    def step(self, state: RoundState, record: bool = True):
        """Run round ``state.t + 1`` in place; returns the round's MetricRecord (or None)."""
        started = time.perf_counter()
        t = state.t + 1
        rng = RngStream(self.seed, ALL_WORKERS, t, "gradient").generator()
        flip = flips_labels(self.attack) and t >= self.attack.start_round
        x_before = state.x
        M = self._messages(state, t, rng, flip)
        ctx = AttackContext(
            good_index=self.good, good=M[self._good_idx], byzantine=self.byzantine,
            own=M[self._byz_idx], round=t, x=x_before,
            rng=RngStream(self.seed, ALL_WORKERS, t, "attack").generator(),
            problem=self.problem, n=self.n, delta=self.delta,
        )
        B, active = run_attack(self.attack, ctx)
        messages = M.copy()
        if len(self.byzantine):
            messages[self._byz_idx] = B
        agg = aggregate(self._aggregator_for_round(t), state.agg_state, messages, self.delta)
        lr = self.eta * self.optimizer.local_steps
        with np.errstate(over="ignore", invalid="ignore"):
            x_new = x_before - lr * agg
        state.x_prev = x_before
        state.x = x_new
        state.t = t
        diverged = not np.all(np.isfinite(x_new))
        with np.errstate(over="ignore", invalid="ignore"):
            loss = self.problem.loss(x_new) if not diverged else math.nan
            if not diverged and (not math.isfinite(loss) or abs(loss) > self.divergence_threshold):
                diverged = True
        if not record and not diverged:
            return None
        with np.errstate(over="ignore", invalid="ignore"):
            grad = self.problem.gradient(x_new)
            good_mean = column_mean(M[self._good_idx])
            rec = MetricRecord(
                round=t,
                loss=loss,
                grad_norm_sq=sq_norm(grad),
                agg_error=sq_norm(agg - good_mean),
                suboptimality=loss - self.f_star,
                attack_active=int(active),
                wall_ms=(time.perf_counter() - started) * 1e3,
                accuracy=self.problem.accuracy(x_new) if not diverged else math.nan,
                aggregate_bias=float(np.mean(agg - self.problem.gradient(x_before))),
            )
        if diverged:
            state.diverged_at = t
        return rec

    def run(self, cadence: int = 1, on_record: Optional[Callable[[MetricRecord], None]] = None):
        """Run all rounds; returns ``(final state, records)``. Stops early on divergence."""
        state = self.init_state()
        records = []
        for t in range(1, self.rounds + 1):
            want = (t % cadence == 0) or t == self.rounds
            rec = self.step(state, record=want)
            if rec is not None:
                records.append(rec)
                if on_record is not None:
                    on_record(rec)
            if state.diverged_at is not None:
                break
        return state, records


def server_round(state: RoundState, sim: Simulation):
    """Advance ``state`` by one round of ``sim``; returns ``(state, MetricRecord)``."""
    rec = sim.step(state)
    return state, rec
