"""Performance perception: metric series, LSTM expectations and degradation checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .lstm import InsufficientHistory, LstmModel, lstm_forward, lstm_train

BENEFIT_METRICS = {"throughput", "success_rate", "received", "sent"}
COST_METRICS = {"energy", "latency", "loss"}


class Status(str, Enum):
    NORMAL = "Normal"
    DEGRADED = "Degraded"


@dataclass
class MetricSeries:
    metric_id: str
    window: int = 10
    samples: list[tuple[int, float]] = field(default_factory=list)

    def append(self, k: int, value: float) -> None:
        if self.samples and k <= self.samples[-1][0]:
            raise ValueError(f"{self.metric_id}: sample index {k} not after {self.samples[-1][0]}")
        if not math.isfinite(value):
            raise ValueError(f"{self.metric_id}: non-finite sample at {k}")
        self.samples.append((k, float(value)))

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.samples])

    def tail(self, n: int | None = None) -> np.ndarray:
        n = self.window if n is None else n
        if len(self.samples) < n:
            raise InsufficientHistory(f"{self.metric_id}: {len(self.samples)} samples, window {n}")
        return self.values[-n:]

    def __len__(self) -> int:
        return len(self.samples)


def metric_kind(metric_id: str) -> str:
    if metric_id in COST_METRICS:
        return "cost"
    return "benefit"


def detect_degradation(real: float, predicted: float, threshold: float, kind: str = "benefit") -> Status:
    """Benefit metrics degrade when they fall short of the expectation by more than
    ``threshold``; cost metrics when they exceed it by more than ``threshold``."""
    if not (math.isfinite(real) and math.isfinite(predicted)):
        raise ValueError("real and predicted values must be finite")
    gap = predicted - real if kind == "benefit" else real - predicted
    return Status.DEGRADED if gap > threshold else Status.NORMAL


@dataclass
class PerceptionResult:
    k: int
    metric: str
    real: float
    predicted: float | None
    status: Status


class Perceptor:
    """One LSTM per metric, retrained on its own history every perception period.

    ``rel_threshold`` scales the allowed shortfall with the prediction and
    ``abs_threshold`` keeps it meaningful when the prediction is near zero.
    """

    def __init__(self, metrics: Sequence[str], window: int = 10, hidden: int = 16,
                 rel_threshold: float = 0.10, abs_threshold: float = 0.02, epochs: int = 40,
                 lr: float = 0.05, seed: int = 0, scale: dict[str, float] | None = None):
        self.window = window
        self.rel_threshold = rel_threshold
        self.abs_threshold = abs_threshold
        self.epochs = epochs
        self.lr = lr
        self.scale = {m: 1.0 for m in metrics} | dict(scale or {})
        rng = np.random.default_rng(seed)
        self.series = {m: MetricSeries(m, window) for m in metrics}
        self.models = {m: LstmModel.init(hidden, 1, rng) for m in metrics}

    def threshold(self, predicted: float) -> float:
        return max(self.rel_threshold * abs(predicted), self.abs_threshold)

    def predict(self, metric: str) -> float:
        s = self.scale[metric]
        return lstm_forward(self.models[metric], self.series[metric].tail() / s) * s

    def observe(self, k: int, metric: str, value: float) -> PerceptionResult:
        """Compare ``value`` against the expectation built from earlier samples, then learn from it."""
        series = self.series[metric]
        predicted = None
        status = Status.NORMAL
        if len(series) >= self.window:
            predicted = self.predict(metric)
            status = detect_degradation(value, predicted, self.threshold(predicted), metric_kind(metric))
        series.append(k, value)
        if len(series) > self.window:
            lstm_train(self.models[metric], series.values[-(4 * self.window):] / self.scale[metric],
                       self.window, self.epochs, self.lr)
        return PerceptionResult(k, metric, value, predicted, status)


# -- diagnosis ------------------------------------------------------------------------------------

@dataclass(frozen=True)
class InternalFailure:
    detail: str


@dataclass(frozen=True)
class ExternalChange:
    kind: str
    params: dict
    residual: float


class NoFit(RuntimeError):
    def __init__(self, best: ExternalChange | None, bound: float):
        self.best = best
        self.bound = bound
        res = f"{best.residual:.4g}" if best else "n/a"
        super().__init__(f"no candidate change explains the observation (best residual {res} > {bound})")


@dataclass(frozen=True)
class Candidate:
    kind: str
    params: dict


def internal_check(db, energy_floor_j: float = 0.0) -> InternalFailure | None:
    """Own-state evidence that explains a drop without looking outside the node."""
    residual = db.config("residual_energy_j")
    if residual is not None and residual <= energy_floor_j:
        return InternalFailure(f"battery depleted (residual {residual} J)")
    if db.config("enabled", True) is False:
        return InternalFailure("node disabled")
    if db.config("modem_fault", False):
        return InternalFailure("modem fault reported")
    return None


def diagnose(db, observed: Sequence[float], candidates: Sequence[Candidate],
             simulate: Callable[[Candidate], Sequence[float]], bound: float = 0.25) -> InternalFailure | ExternalChange:
    """Explain a degradation.

    Internal failures come straight from the node's own records.  Otherwise
    every candidate external change is simulated and the one whose metric
    vector is closest (L2) to ``observed`` wins; earlier candidates win ties.
    """
    internal = internal_check(db)
    if internal is not None:
        return internal
    obs = np.asarray(observed, dtype=float)
    best: ExternalChange | None = None
    for cand in candidates:
        sim = np.asarray(simulate(cand), dtype=float)
        r = float(np.linalg.norm(sim - obs))
        if best is None or r < best.residual - 1e-12:
            best = ExternalChange(cand.kind, dict(cand.params), r)
    if best is None or best.residual > bound:
        raise NoFit(best, bound)
    return best
