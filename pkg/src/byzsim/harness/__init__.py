"""Experiment harness: configs, runs, sweeps, reports and presets."""
from .config import ExperimentConfig, dumps, from_dict, load, loads, save, to_dict
from .presets import PRESETS
from .report import report
from .runner import run, sweep

__all__ = ["ExperimentConfig", "PRESETS", "dumps", "from_dict", "load", "loads", "report", "run", "save",
           "sweep", "to_dict"]
