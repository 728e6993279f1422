"""Execute configs and write metrics files.

Each run produces ``<out>/<name>.csv`` plus a ``<name>.json`` sidecar. Both
are written to a temporary file in the target directory and renamed into
place, so a reader never sees a half-written file.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
import os
import re
import tempfile
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import astuple, dataclass
from pathlib import Path
from typing import Optional, Sequence

from .. import __version__, _kernels
from ..aggregators import byzantine_count
from ..core import ConfigError
from ..optimizer import METRIC_FIELDS, Simulation
from ..problems import build_problem
from .config import ExperimentConfig, config_hash, from_dict, get_key, set_key, to_dict
from .studies import run_study


def format_value(v) -> str:
    """Integers verbatim, floats with 17 significant digits."""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    return format(float(v), ".17g")


@contextmanager
def atomic_writer(path: Path, newline: Optional[str] = None):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline=newline) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, payload: dict):
    with atomic_writer(path) as fh:
        json.dump(payload, fh, indent=2, sort_keys=False)
        fh.write("\n")


@dataclass
class RunResult:
    csv_path: Path
    sidecar_path: Path
    diverged: bool
    diverged_at: Optional[int]
    rows: int


def _simulation(config: ExperimentConfig) -> Simulation:
    problem = build_problem(config.problem, seed=config.seed, delta=config.delta)
    return Simulation(problem, config.aggregator, config.attack, config.optimizer,
                      n=config.workers, delta=config.delta, seed=config.seed, rounds=config.rounds,
                      divergence_threshold=config.divergence_threshold)


def run(config: ExperimentConfig, out_dir=None, seed: Optional[int] = None) -> RunResult:
    """Run one config; ``seed`` and ``out_dir`` override the config's values."""
    if seed is not None:
        config = from_dict(set_key(to_dict(config), "seed", int(seed)))
    out = Path(out_dir if out_dir is not None else config.output)
    csv_path = out / f"{config.name}.csv"
    sidecar_path = out / f"{config.name}.json"
    notes = config.warnings()
    for msg in notes:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)

    started = time.perf_counter()
    sidecar = {
        "version": __version__,
        "backend": _kernels.BACKEND,
        "config_hash": config_hash(config),
        "config": to_dict(config),
        "study": config.study,
    }
    if config.study == "simulation":
        sim = _simulation(config)
        with atomic_writer(csv_path, newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(METRIC_FIELDS)
            count = 0

            def emit(rec):
                nonlocal count
                row = list(astuple(rec))
                if not config.record_timing:
                    row[METRIC_FIELDS.index("wall_ms")] = math.nan
                writer.writerow([format_value(v) for v in row])
                count += 1

            state, _ = sim.run(config.cadence, on_record=emit)
        diverged_at = state.diverged_at
        sidecar.update({
            "byzantine": sim.byzantine,
            "lr": sim.eta,
            "alpha": sim.alpha,
            "rounds_completed": state.t,
            "diverged": diverged_at is not None,
            "diverged_at": diverged_at,
        })
    else:
        columns, rows, params = run_study(config)
        with atomic_writer(csv_path, newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([format_value(v) for v in row])
        count = len(rows)
        diverged_at = None
        sidecar.update({"study_params": params, "byzantine_count": byzantine_count(config.delta, config.workers),
                        "diverged": False, "diverged_at": None})
    sidecar["warnings"] = notes
    sidecar["elapsed_s"] = time.perf_counter() - started
    write_json(sidecar_path, sidecar)
    return RunResult(csv_path, sidecar_path, diverged_at is not None, diverged_at, count)


def _slug(value) -> str:
    text = value if isinstance(value, str) else json.dumps(value)
    return re.sub(r"[^A-Za-z0-9.+-]+", "_", text).strip("_") or "x"


def _run_entry(args):
    config, out_dir = args
    return run(config, out_dir)


def sweep(template: ExperimentConfig, axes: Sequence[tuple[str, Sequence]], out_dir=None,
          jobs: int = 1) -> Path:
    """One run per point of the cartesian product of ``axes``.

    ``axes`` is a list of ``(dotted key, values)``. Writes ``index.json`` and
    ``index.csv`` mapping each point to its metrics file; returns the index
    path.
    """
    if not axes:
        raise ConfigError("at least one axis is required", "axis")
    base = to_dict(template)
    for key, values in axes:
        get_key(base, key)
        if len(values) == 0:
            raise ConfigError("empty value list", key)
    out = Path(out_dir if out_dir is not None else template.output)
    configs, points = [], []
    for combo in itertools.product(*(values for _, values in axes)):
        data = base
        parts = []
        for (key, _), value in zip(axes, combo):
            data = set_key(data, key, value)
            parts.append(f"{key.split('.')[-1]}={_slug(value)}")
        data = set_key(data, "name", "__".join([template.name, *parts]))
        configs.append(from_dict(data))
        points.append({key: value for (key, _), value in zip(axes, combo)})
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        raise ConfigError("axis values collide after file-name sanitizing", "values")

    work = [(c, out) for c in configs]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_entry, work))
    else:
        results = [_run_entry(w) for w in work]

    entries = []
    for point, config, res in zip(points, configs, results):
        entries.append({
            "values": point,
            "name": config.name,
            "csv": res.csv_path.name,
            "sidecar": res.sidecar_path.name,
            "diverged": res.diverged,
            "diverged_at": res.diverged_at,
        })
    index = out / "index.json"
    write_json(index, {"template": template.name, "axes": [k for k, _ in axes], "runs": entries})
    with atomic_writer(out / "index.csv", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([k for k, _ in axes] + ["csv"])
        for e in entries:
            writer.writerow([json.dumps(e["values"][k]) if not isinstance(e["values"][k], str)
                             else e["values"][k] for k, _ in axes] + [e["csv"]])
    return index
