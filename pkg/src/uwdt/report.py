"""Run reports on disk, golden comparison and figure extraction.

A run directory holds:

``metrics.csv``   time,node,metric,value rows, ending with ``summary.*`` rows
``figures.csv``   figure,series,x,y rows
``<table>.csv``   one file per result table
``models.bin``    flat little-endian f32 parameters (``models.json`` manifest)
``report.json``   the RunReport below
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path
from typing import Any

from pydantic import BaseModel, Field

from .cmfd import serialize
from .experiments.base import ExperimentOutput
from .sim.trace import MetricLog, fmt, read_csv

SUMMARY_NODE = -1

# figure id -> (x column, y column)
FIGURES = {
    "throughput_vs_time": ("t", "bps"),
    "packets_vs_time": ("t", "packets"),
    "power_vs_interference": ("i_power_w", "t_power_w"),
    "ber_vs_interference": ("i_power_w", "ber"),
    "collection_rate_vs_episode": ("episode", "collection_rate"),
    "tgnso_consumption": ("scenario", "value"),
    "tnsd_savings": ("event", "value"),
}


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: str = ""


class RunReport(BaseModel):
    experiment: str
    seed: int
    scenario: dict[str, Any]
    files: dict[str, str] = Field(default_factory=dict)
    sha256: dict[str, str] = Field(default_factory=dict)
    summary: dict[str, float] = Field(default_factory=dict)
    checks: list[CheckResult] = Field(default_factory=list)
    passed: bool = True
    # wall-clock figures; excluded from the digest
    timing: dict[str, float] = Field(default_factory=dict)

    def digest(self) -> str:
        body = self.model_dump(exclude={"timing"})
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def _table_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    cols: list[str] = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([fmt(r.get(c, "")) for c in cols])
    return buf.getvalue()


def figures_csv(figures: dict[str, list[tuple[str, float, float]]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("figure", "series", "x", "y"))
    for fig in sorted(figures):
        for series, x, y in figures[fig]:
            w.writerow((fig, series, fmt(float(x)), fmt(float(y))))
    return buf.getvalue()


def write_run(out: ExperimentOutput, out_dir: Path, scenario: dict, seed: int) -> RunReport:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    timing = {k: float(v) for k, v in out.summary.items() if k.endswith("elapsed_s")}
    # rounded exactly as the CSV writes them, so the summary can be recomputed from disk
    summary = {k: float(fmt(float(v))) for k, v in out.summary.items() if k not in timing}
    rows = list(out.log.rows) + [(0.0, SUMMARY_NODE, f"summary.{k}", v) for k, v in sorted(summary.items())]
    texts = {"metrics.csv": _log_text(rows), "figures.csv": figures_csv(out.figures)}
    for name, table in sorted(out.tables.items()):
        texts[f"{name}.csv"] = _table_csv(table)
    files, hashes = {}, {}
    for fname, text in texts.items():
        (out_dir / fname).write_text(text)
        files[fname.removesuffix(".csv")] = fname
        hashes[fname] = hashlib.sha256(text.encode()).hexdigest()
    if out.models:
        blob, man = serialize.save(out.models, out_dir / "models.bin")
        files["models"] = blob.name
        files["models_manifest"] = man.name
        hashes[blob.name] = hashlib.sha256(blob.read_bytes()).hexdigest()
    report = RunReport(experiment=out.kind, seed=seed, scenario=scenario, files=files, sha256=hashes,
                       summary=summary, checks=[CheckResult(name=c.name, passed=c.passed, detail=c.detail)
                                                for c in out.checks],
                       passed=out.passed, timing=timing)
    (out_dir / "report.json").write_text(json.dumps(report.model_dump(), indent=1, sort_keys=True) + "\n")
    return report


def _log_text(rows) -> str:
    log = MetricLog()
    log.extend(rows)
    return log.to_csv()


def load_report(path: Path) -> RunReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return RunReport.model_validate_json(path.read_text())


def summary_from_csv(path: Path) -> dict[str, float]:
    """Recompute a report's summary from its metrics CSV."""
    return {r["metric"].removeprefix("summary."): float(r["value"]) for r in read_csv(path)
            if r["metric"].startswith("summary.") and int(r["node"]) == SUMMARY_NODE}


# -- compare --------------------------------------------------------------------------------------------------

class MetricResult(BaseModel):
    metric: str
    passed: bool
    expected: float | None = None
    actual: float | None = None
    reason: str = ""


class CompareResult(BaseModel):
    passed: bool
    results: list[MetricResult]


def compare(report: RunReport, golden: dict, tol: float = 1e-6) -> CompareResult:
    """Check a report against a golden file.

    ``golden`` is either another report (every summary value must match
    within ``tol``) or a document with ``metrics`` (name -> value, or
    name -> {"value", "abs", "rel"}), ``orderings`` (lists of metric names
    that must strictly increase) and ``checks`` (names that must have passed).
    A metric passes when |actual - expected| <= abs + rel * |expected|, with
    both defaulting to ``tol``.
    """
    summary = report.summary
    checks = {c.name: c.passed for c in report.checks}
    if "summary" in golden and "metrics" not in golden:
        metrics = {k: {"value": v} for k, v in golden["summary"].items()}
        orderings, want_checks = [], []
    else:
        metrics = {k: v if isinstance(v, dict) else {"value": v} for k, v in golden.get("metrics", {}).items()}
        orderings, want_checks = golden.get("orderings", []), golden.get("checks", [])
    out = []
    for name in sorted(metrics):
        spec = metrics[name]
        exp = float(spec["value"])
        if name not in summary:
            out.append(MetricResult(metric=name, passed=False, expected=exp, reason="missing metric"))
            continue
        act = float(summary[name])
        bound = float(spec.get("abs", tol)) + float(spec.get("rel", tol)) * abs(exp)
        both_nan = math.isnan(exp) and math.isnan(act)
        ok = both_nan or abs(act - exp) <= bound
        out.append(MetricResult(metric=name, passed=ok, expected=exp, actual=act,
                                reason="" if ok else f"|{act:.6g} - {exp:.6g}| > {bound:.3g}"))
    for chain in orderings:
        label = " < ".join(chain)
        missing = [m for m in chain if m not in summary]
        if missing:
            out.append(MetricResult(metric=label, passed=False, reason=f"missing metric {missing[0]}"))
            continue
        vals = [float(summary[m]) for m in chain]
        ok = all(a < b for a, b in zip(vals, vals[1:]))
        out.append(MetricResult(metric=label, passed=ok, reason="" if ok else f"values {vals}"))
    for name in want_checks:
        if name not in checks:
            out.append(MetricResult(metric=f"check:{name}", passed=False, reason="missing check"))
        else:
            out.append(MetricResult(metric=f"check:{name}", passed=checks[name],
                                    reason="" if checks[name] else "check failed"))
    return CompareResult(passed=all(r.passed for r in out), results=out)


# -- figures ------------------------------------------------------------------------------------------------

class UnknownFigure(KeyError):
    pass


def emit_fig_data(figures_text: str, fig: str) -> str:
    """Long-format CSV ``series,<x>,<y>`` for one figure; header only when the run
    produced no data for it."""
    if fig not in FIGURES:
        raise UnknownFigure(f"unknown figure id {fig!r}; known: {', '.join(sorted(FIGURES))}")
    x, y = FIGURES[fig]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("series", x, y))
    for row in csv.DictReader(io.StringIO(figures_text)):
        if row["figure"] == fig:
            w.writerow((row["series"], row["x"], row["y"]))
    return buf.getvalue()
