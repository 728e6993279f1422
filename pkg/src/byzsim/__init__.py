"""Deterministic simulator for Byzantine-robust distributed stochastic optimization."""
from . import _kernels
from .aggregators import AggregatorSpec, AggregatorState, adaptive_clip_radius, aggregate
from .attacks import AttackSpec, alie_z, apply_attack
from .core import ConfigError, NoiseDistribution, RngStream, UsageError, mean, sample
from .optimizer import MetricRecord, OptimizerSpec, RoundState, Simulation, server_round
from .problems import ProblemSpec, build_problem

__version__ = "0.1.0"

__all__ = [
    "AggregatorSpec", "AggregatorState", "AttackSpec", "ConfigError", "MetricRecord",
    "NoiseDistribution", "OptimizerSpec", "ProblemSpec", "RngStream", "RoundState",
    "Simulation", "UsageError", "adaptive_clip_radius", "aggregate", "alie_z", "apply_attack",
    "build_problem", "mean", "sample", "server_round",
]
