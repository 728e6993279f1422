"""Named experiment recipes.

A preset is a list of configs: most hold one run, comparison scenarios hold
one run per aggregator. ``get(name)`` builds fresh objects each call.
"""
from __future__ import annotations

from dataclasses import replace
from typing import Callable

from ..aggregators import AggregatorSpec
from ..attacks import AttackSpec
from ..core import ConfigError
from ..optimizer import OptimizerSpec
from ..problems import ProblemSpec
from .config import ExperimentConfig

SGDM = dict(method="sgdm", lr=0.1, beta=0.9)

# aggregators compared in the attack and imbalance scenarios
COMPARED = {
    "cc": AggregatorSpec(rule="centered-clip", tau=100.0, clip_iterations=1),
    "cm": AggregatorSpec(rule="coordinate-median"),
    "krum": AggregatorSpec(rule="krum"),
    "rfa": AggregatorSpec(rule="rfa", iterations=3),
}


def counterexample1() -> list[ExperimentConfig]:
    """Coordinate median on Rademacher noise.

    Scalar problem f(x) = x^2 / 2 whose 25 workers see gradient ``x + r``
    with ``r = +-1``. The median of the messages is always ``x - 1`` or
    ``x + 1``, so SGD keeps bouncing instead of settling at zero.
    """
    return [ExperimentConfig(
        name="counterexample1", problem=ProblemSpec(kind="rademacher-scalar"),
        aggregator=AggregatorSpec(rule="coordinate-median"),
        optimizer=OptimizerSpec(method="sgd", lr=0.1), workers=25, rounds=200,
    )]


def counterexample3() -> list[ExperimentConfig]:
    """Coordinate median on skewed power-law noise.

    The ``aggregate_bias`` column settles near ``2^(1/3) - 1.5 = -0.24``:
    the median tracks the noise median, not its mean, so the iterate
    converges to the wrong point.
    """
    return [ExperimentConfig(
        name="counterexample3", problem=ProblemSpec(kind="heavy-tail-scalar", optimum=1.0),
        aggregator=AggregatorSpec(rule="coordinate-median"),
        optimizer=OptimizerSpec(method="sgd", lr=0.1), workers=2001, rounds=200,
    )]


def imbalance_gamma(gamma: float = 0.5) -> list[ExperimentConfig]:
    """Class-imbalanced softmax regression without attackers, one run per aggregator.

    Class ``k`` holds a ``gamma^k`` share of the data. Median-like rules
    ignore the rare classes; sweep ``problem.gamma`` over ``1.0, 0.8, 0.5``
    to see the gap open up.
    """
    problem = dict(kind="imbalanced-softmax", gamma=gamma, classes=10, features=20, batch_size=1,
                   dataset_size=4096, separation=2.0)
    rules = {**{k: COMPARED[k] for k in ("cc", "cm", "rfa")},
             "tm": AggregatorSpec(rule="trimmed-mean", trim=1)}
    return [ExperimentConfig(
        name=f"imbalance-gamma-{key}", problem=ProblemSpec(**problem), aggregator=replace(spec),
        optimizer=OptimizerSpec(method="sgd", lr=0.01), workers=16, rounds=2000, cadence=100,
    ) for key, spec in rules.items()]


def thm2_failure() -> list[ExperimentConfig]:
    """Permutation-invariant methods cannot beat the lower bound; momentum can.

    Scalar problem with a rare large gradient shift. CM with plain SGD
    plateaus at suboptimality ~0.025; CC with worker momentum drops below
    0.0125.
    """
    problem = dict(kind="scalar-lower-bound", mu=1.0, sigma=1.0, variant=1)
    common = dict(workers=100, delta=0.3, rounds=3000, cadence=10)
    return [
        ExperimentConfig(name="thm2-failure-cm", problem=ProblemSpec(**problem),
                         aggregator=AggregatorSpec(rule="coordinate-median"),
                         optimizer=OptimizerSpec(method="sgd", lr=0.1), **common),
        ExperimentConfig(name="thm2-failure-cc", problem=ProblemSpec(**problem),
                         aggregator=AggregatorSpec(rule="centered-clip", tau=100.0),
                         optimizer=OptimizerSpec(**SGDM), **common),
    ]


def thm5_contraction() -> list[ExperimentConfig]:
    """Centered-clipping error against far-away attackers, adaptive radius, l = 1 and 5."""
    return [ExperimentConfig(name="thm5-contraction", study="cc-contraction", workers=100, delta=0.1,
                             aggregator=AggregatorSpec(rule="centered-clip", radius="adaptive"))]


def lemma4_variance() -> list[ExperimentConfig]:
    """Pairwise distance of honest momentum buffers decays to ~2 alpha sigma^2."""
    return [ExperimentConfig(name="lemma4-variance", study="momentum-variance", workers=4000,
                             aggregator=AggregatorSpec(rule="mean"))]


def _attack_runs(prefix, attack: dict, delta: float, rounds: int = 2000) -> list[ExperimentConfig]:
    problem = dict(kind="quadratic", dim=100, L=1.0, mu=0.1, sigma=1.0)
    common = dict(workers=25, rounds=rounds, cadence=50)
    runs = [ExperimentConfig(name=f"{prefix}-baseline", problem=ProblemSpec(**problem),
                             aggregator=AggregatorSpec(rule="mean"), optimizer=OptimizerSpec(**SGDM),
                             **common)]
    for key, spec in COMPARED.items():
        runs.append(ExperimentConfig(name=f"{prefix}-{key}", problem=ProblemSpec(**problem),
                                     aggregator=replace(spec), attack=AttackSpec(**attack),
                                     optimizer=OptimizerSpec(**SGDM), delta=delta, **common))
    return runs


def ipm_cifar_analog() -> list[ExperimentConfig]:
    """Inner-product manipulation (eps 0.1) from 11 of 25 workers on a 100-d quadratic.

    Includes an attack-free mean-aggregator baseline.
    """
    return _attack_runs("ipm", dict(kind="ipm", epsilon=0.1), 0.44)


def alie_analog() -> list[ExperimentConfig]:
    """"A little is enough" from 5 of 25 workers on a 100-d quadratic, plus a baseline."""
    return _attack_runs("alie", dict(kind="alie"), 0.2)


def tau_l_grid() -> list[ExperimentConfig]:
    """Base run for the clipping radius x iteration grid.

    Sweep ``aggregator.tau`` over ``0.1, 10, 1000`` and
    ``aggregator.clip_iterations`` over ``1, 3, 5`` (nine runs).
    """
    return [ExperimentConfig(
        name="tau-l-grid", problem=ProblemSpec(kind="quadratic", dim=100, L=1.0, mu=0.1, sigma=1.0),
        aggregator=AggregatorSpec(rule="centered-clip", tau=10.0, clip_iterations=1),
        attack=AttackSpec(kind="ipm", epsilon=0.1), optimizer=OptimizerSpec(**SGDM),
        workers=25, delta=0.2, rounds=500, cadence=25,
    )]


def local_steps() -> list[ExperimentConfig]:
    """Workers take several local momentum steps per round; CC under ALIE, k = 1 and 4."""
    return [ExperimentConfig(
        name=f"local-steps-k{k}", problem=ProblemSpec(kind="quadratic", dim=100, L=1.0, mu=0.1, sigma=1.0),
        aggregator=AggregatorSpec(rule="centered-clip", tau=100.0), attack=AttackSpec(kind="alie"),
        optimizer=OptimizerSpec(**SGDM, local_steps=k), workers=25, delta=0.2, rounds=500, cadence=25,
    ) for k in (1, 4)]


def gaussian_attack() -> list[ExperimentConfig]:
    """Huge Gaussian messages against plain averaging (diverges at once) and CC (does not)."""
    problem = dict(kind="quadratic", dim=100, L=1.0, mu=0.1, sigma=1.0)
    attack = dict(kind="gaussian", sigma_attack=1e8)
    return [ExperimentConfig(name=f"gaussian-attack-{key}", problem=ProblemSpec(**problem),
                             aggregator=AggregatorSpec(**agg), attack=AttackSpec(**attack),
                             optimizer=OptimizerSpec(**SGDM), workers=25, delta=0.2, rounds=500, cadence=25)
            for key, agg in (("mean", dict(rule="mean")), ("cc", dict(rule="centered-clip", tau=100.0)))]


PRESETS: dict[str, Callable[[], list[ExperimentConfig]]] = {
    "counterexample1": counterexample1,
    "counterexample3": counterexample3,
    "imbalance-gamma": imbalance_gamma,
    "thm2-failure": thm2_failure,
    "thm5-contraction": thm5_contraction,
    "lemma4-variance": lemma4_variance,
    "ipm-cifar-analog": ipm_cifar_analog,
    "alie-analog": alie_analog,
    "tau-l-grid": tau_l_grid,
    "local-steps": local_steps,
    "gaussian-attack": gaussian_attack,
}


def get(name: str) -> list[ExperimentConfig]:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}", "preset") from None


def describe(name: str) -> str:
    doc = (get_builder(name).__doc__ or "").strip()
    return doc.splitlines()[0] if doc else ""


def get_builder(name: str):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}", "preset")
    return PRESETS[name]
