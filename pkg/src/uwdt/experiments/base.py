"""Common shape of experiment results."""
from __future__ import annotations

from dataclasses import dataclass, field

from ..sim.trace import MetricLog


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ExperimentOutput:
    kind: str
    summary: dict[str, float] = field(default_factory=dict)
    tables: dict[str, list[dict]] = field(default_factory=dict)
    log: MetricLog = field(default_factory=MetricLog)
    checks: list[Check] = field(default_factory=list)
    # figure id -> rows of (series, x, y)
    figures: dict[str, list[tuple[str, float, float]]] = field(default_factory=dict)
    # model name -> parameter arrays, written out as a flat f32 blob
    models: dict[str, dict] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)
