"""Summaries of metrics files."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

from ..optimizer import METRIC_FIELDS
from .runner import atomic_writer, format_value, write_json


@dataclass
class RunSummary:
    path: str
    config_hash: str
    rows: int
    final_round: int
    final_loss: float
    final_grad_norm_sq: float
    min_suboptimality: float
    diverged: bool
    diverged_at: Optional[int]


@dataclass
class Report:
    runs: list[RunSummary]
    errors: dict[str, str]
    long_path: Optional[str] = None

    def to_json(self) -> dict:
        return {"runs": [asdict(r) for r in self.runs], "errors": self.errors}

    def text(self) -> str:
        head = ("config_hash", "final_round", "final_loss", "final_grad_norm_sq", "min_suboptimality",
                "diverged", "path")
        lines = ["\t".join(head)]
        for r in self.runs:
            div = f"yes@{r.diverged_at}" if r.diverged else "no"
            lines.append("\t".join([r.config_hash, str(r.final_round), f"{r.final_loss:.6g}",
                                    f"{r.final_grad_norm_sq:.6g}", f"{r.min_suboptimality:.6g}", div, r.path]))
        for path, msg in self.errors.items():
            lines.append(f"error\t{path}\t{msg}")
        return "\n".join(lines)


def _sidecar(path: Path) -> dict:
    side = path.with_suffix(".json")
    if not side.exists():
        return {}
    try:
        return json.loads(side.read_text())
    except (OSError, ValueError):
        return {}


def _read_metrics(path: Path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != METRIC_FIELDS:
            raise ValueError("not a metrics file (header mismatch)")
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if len(raw) != len(METRIC_FIELDS):
                raise ValueError(f"line {lineno}: expected {len(METRIC_FIELDS)} fields")
            rows.append({k: float(v) for k, v in zip(METRIC_FIELDS, raw)})
    if not rows:
        raise ValueError("no data rows")
    return rows


def summarize(path) -> tuple[RunSummary, list[dict]]:
    path = Path(path)
    rows = _read_metrics(path)
    side = _sidecar(path)
    last = rows[-1]
    if "diverged" in side:
        diverged, at = bool(side["diverged"]), side.get("diverged_at")
    else:
        bad = [r for r in rows if not math.isfinite(r["loss"])]
        diverged, at = bool(bad), (int(bad[0]["round"]) if bad else None)
    finite = [r["suboptimality"] for r in rows if math.isfinite(r["suboptimality"])]
    digest = side.get("config_hash") or hashlib.sha256(path.read_bytes()).hexdigest()[:16]
    summary = RunSummary(
        path=str(path), config_hash=digest, rows=len(rows), final_round=int(last["round"]),
        final_loss=last["loss"], final_grad_norm_sq=last["grad_norm_sq"],
        min_suboptimality=min(finite) if finite else math.nan,
        diverged=diverged, diverged_at=at,
    )
    return summary, rows


def report(files: Sequence, json_path=None, long_path=None) -> Report:
    """Summarize each file; unreadable files are recorded in ``errors`` and skipped.

    Also writes a long-format CSV (``run, config_hash, round, metric,
    value``). Its default location is next to ``json_path``, or next to the
    first file when no JSON path is given.
    """
    if not files:
        raise ValueError("need at least one metrics file")
    runs, errors, series = [], {}, {}
    for f in files:
        try:
            s, rows = summarize(f)
        except (OSError, ValueError, UnicodeDecodeError) as exc:
            errors[str(f)] = str(exc)
            continue
        runs.append(s)
        series[s.path] = rows
    runs.sort(key=lambda r: (r.config_hash, r.path))
    rep = Report(runs, errors)
    if json_path is not None:
        write_json(Path(json_path), rep.to_json())
    if long_path is None:
        anchor = Path(json_path) if json_path is not None else Path(files[0])
        long_path = anchor.with_name(f"{anchor.stem}_long.csv" if json_path else "report_long.csv")
    if runs:
        with atomic_writer(Path(long_path), newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["run", "config_hash", "round", "metric", "value"])
            for s in runs:
                name = Path(s.path).stem
                for r in series[s.path]:
                    for k in METRIC_FIELDS[1:]:
                        writer.writerow([name, s.config_hash, int(r["round"]), k, format_value(r[k])])
    rep.long_path = str(long_path) if runs else None
    return rep
