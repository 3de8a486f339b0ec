"""Metric rows written as ``time,node,metric,value`` CSV."""
from __future__ import annotations

import csv
import hashlib
import io
from pathlib import Path

HEADER = ("time", "node", "metric", "value")


def fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(round(value, 9)) if value == value else "nan"
    return str(value)


class MetricLog:
    def __init__(self):
        self.rows: list[tuple[float, int, str, object]] = []

    def add(self, time: float, node: int, metric: str, value) -> None:
        self.rows.append((time, node, metric, value))

    def extend(self, rows) -> None:
        self.rows.extend(rows)

    def select(self, metric: str, node: int | None = None) -> list[tuple[float, object]]:
        return [(t, v) for t, n, m, v in self.rows if m == metric and (node is None or n == node)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HEADER)
        for t, n, m, v in self.rows:
            w.writerow((fmt(float(t)), n, m, fmt(v)))
        return buf.getvalue()

    def write(self, path: Path) -> str:
        text = self.to_csv()
        Path(path).write_text(text)
        return hashlib.sha256(text.encode()).hexdigest()


def read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
