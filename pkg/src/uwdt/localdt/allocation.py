"""Allocation schemes: proposal, evaluation in a nested replica, search and deployment."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Mapping, Sequence

SCHEME_FIELDS = ("power_w", "slot_length_s", "sending_rate", "packet_size_bytes", "frequency_id")


class StaleReplica(RuntimeError):
    pass


class IllegalScheme(ValueError):
    pass


@dataclass(frozen=True)
class DeviceLimits:
    max_power_w: float = 30.0
    min_slot_s: float = 1.0
    max_slot_s: float = 60.0
    max_rate: float = 1.0
    min_packet: int = 1
    max_packet: int = 2048
    frequencies: int = 1


@dataclass(frozen=True)
class AllocationScheme:
    power_w: float = 10.0
    slot_length_s: float = 6.0
    sending_rate: float = 0.0
    packet_size_bytes: int = 400
    frequency_id: int = 0
    tunable: frozenset = frozenset({"power_w"})

    def __post_init__(self):
        if not self.tunable:
            raise IllegalScheme("a scheme needs at least one tunable field")
        unknown = set(self.tunable) - set(SCHEME_FIELDS)
        if unknown:
            raise IllegalScheme(f"unknown tunable fields {sorted(unknown)}")

    def with_(self, **kw) -> "AllocationScheme":
        return replace(self, **kw)

    def values(self) -> dict:
        return {f: getattr(self, f) for f in SCHEME_FIELDS}

    def check(self, limits: DeviceLimits) -> None:
        problems = []
        if not 0 < self.power_w <= limits.max_power_w:
            problems.append(f"power_w={self.power_w} outside (0, {limits.max_power_w}]")
        if not limits.min_slot_s <= self.slot_length_s <= limits.max_slot_s:
            problems.append(f"slot_length_s={self.slot_length_s} outside [{limits.min_slot_s}, {limits.max_slot_s}]")
        if not 0 <= self.sending_rate <= limits.max_rate:
            problems.append(f"sending_rate={self.sending_rate} outside [0, {limits.max_rate}]")
        if not limits.min_packet <= self.packet_size_bytes <= limits.max_packet:
            problems.append(f"packet_size_bytes={self.packet_size_bytes} outside device range")
        if not 0 <= self.frequency_id < limits.frequencies:
            problems.append(f"frequency_id={self.frequency_id} not available")
        if problems:
            raise IllegalScheme("; ".join(problems))


@dataclass(frozen=True)
class Demand:
    """Thresholds a scheme must meet; unset thresholds are vacuous."""
    min_throughput_bps: float = 0.0
    max_latency_s: float = math.inf
    max_loss: float = 1.0
    max_energy_j: float = math.inf

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if math.isnan(v) or (f.name in ("min_throughput_bps", "max_loss") and not math.isfinite(v)):
                raise ValueError(f"demand {f.name} must be finite")
        if not 0 <= self.max_loss <= 1:
            raise ValueError("max_loss must lie in [0, 1]")

    def violation(self, r: "EvaluationResult") -> float:
        """Sum of relative shortfalls; zero exactly when the demand is met."""
        v = 0.0
        if r.throughput_bps < self.min_throughput_bps:
            v += (self.min_throughput_bps - r.throughput_bps) / max(self.min_throughput_bps, 1e-12)
        if r.latency_s > self.max_latency_s:
            v += (r.latency_s - self.max_latency_s) / max(self.max_latency_s, 1e-12)
        if r.loss > self.max_loss:
            v += (r.loss - self.max_loss) / max(self.max_loss, 1e-3)
        if r.energy_j > self.max_energy_j:
            v += (r.energy_j - self.max_energy_j) / max(self.max_energy_j, 1e-12)
        return v

    def satisfied(self, r: "EvaluationResult") -> bool:
        return self.violation(r) == 0.0


@dataclass(frozen=True)
class EvaluationResult:
    throughput_bps: float = 0.0
    latency_s: float = 0.0
    loss: float = 0.0
    energy_j: float = 0.0
    extra: Mapping[str, float] = field(default_factory=dict)

    def vector(self) -> list[float]:
        return [self.throughput_bps, self.latency_s, self.loss, self.energy_j]


def objective(scheme: AllocationScheme, result: EvaluationResult, demand: Demand) -> tuple:
    """Lexicographic score, larger is better: feasibility, smaller violation, lower energy, lower power."""
    v = demand.violation(result)
    return (v == 0.0, -v, -result.energy_j, -scheme.power_w)


# -- proposal --------------------------------------------------------------------------------------

def propose_scheme(current: AllocationScheme, demand: Demand, diagnosis=None,
                   grids: Mapping[str, Sequence] | None = None) -> AllocationScheme:
    """Heuristic starting point: the deployed scheme adjusted for what the diagnosis implicates."""
    if diagnosis is None:
        return current
    kind = getattr(diagnosis, "kind", None)
    grids = grids or {}
    if kind == "interference":
        return current.with_(power_w=_step(current.power_w, grids.get("power_w"), +1, factor=2.0))
    if kind == "congestion":
        if "slot_length_s" in current.tunable or "sending_rate" not in current.tunable:
            return current.with_(slot_length_s=_step(current.slot_length_s, grids.get("slot_length_s"), -1,
                                                     factor=0.75))
        return current.with_(sending_rate=_step(current.sending_rate, grids.get("sending_rate"), -1, factor=0.75))
    return current


def _step(value, grid, direction: int, factor: float):
    if grid:
        g = sorted(grid)
        if direction > 0:
            bigger = [x for x in g if x > value]
            return bigger[0] if bigger else value
        smaller = [x for x in g if x < value]
        return smaller[-1] if smaller else value
    return value * factor


# -- evaluation ----------------------------------------------------------------------------------

def check_fresh(db_timestamp: float, now: float, max_age_s: float) -> None:
    age = now - db_timestamp
    if age > max_age_s:
        raise StaleReplica(f"replica snapshot is {age:.1f} s old (bound {max_age_s} s)")


def evaluate_scheme(scheme: AllocationScheme, replica_factory: Callable[[AllocationScheme], Callable[[float], EvaluationResult]],
                    horizon: float, snapshot_time: float | None = None, now: float | None = None,
                    max_age_s: float = math.inf) -> EvaluationResult:
    """Run the nested replica built for ``scheme`` over ``horizon`` seconds.

    ``replica_factory`` turns a scheme into a runnable replica (a callable
    taking the horizon); the local twin supplies one built from its database.
    """
    if snapshot_time is not None and now is not None:
        check_fresh(snapshot_time, now, max_age_s)
    return replica_factory(scheme)(horizon)


# -- search ----------------------------------------------------------------------------------------

@dataclass
class OptimizationResult:
    scheme: AllocationScheme
    result: EvaluationResult
    feasible: bool
    evaluations: int
    sweeps: int


def optimize_scheme(seed: AllocationScheme, demand: Demand, budget: int,
                    evaluate: Callable[[AllocationScheme], EvaluationResult],
                    grids: Mapping[str, Sequence]) -> OptimizationResult:
    """Coordinate-wise local search: each sweep scans every tunable field over its
    whole grid with the others fixed and keeps the best; ``budget`` bounds the
    number of sweeps.  The seed is always evaluated, so the answer is never
    worse than it."""
    if budget < 0:
        raise ValueError("budget must be >= 0")
    cache: dict[tuple, EvaluationResult] = {}

    def ev(s: AllocationScheme) -> EvaluationResult:
        key = tuple(s.values().values())
        if key not in cache:
            cache[key] = evaluate(s)
        return cache[key]

    best = seed
    best_r = ev(seed)
    best_key = objective(best, best_r, demand)
    sweeps = 0
    for _ in range(budget):
        sweeps += 1
        improved = False
        for name in sorted(seed.tunable):
            for value in grids.get(name, ()):
                cand = best.with_(**{name: value})
                r = ev(cand)
                k = objective(cand, r, demand)
                if k > best_key:
                    best, best_r, best_key, improved = cand, r, k, True
        if not improved:
            break
    return OptimizationResult(best, best_r, best_key[0], len(cache), sweeps)


def exhaustive_search(seed: AllocationScheme, demand: Demand,
                      evaluate: Callable[[AllocationScheme], EvaluationResult],
                      grids: Mapping[str, Sequence]) -> OptimizationResult:
    names = sorted(seed.tunable)
    best = seed
    best_r = evaluate(seed)
    best_key = objective(best, best_r, demand)
    n = 1
    for combo in itertools.product(*(grids[nm] for nm in names)):
        cand = seed.with_(**dict(zip(names, combo)))
        r = evaluate(cand)
        n += 1
        k = objective(cand, r, demand)
        if k > best_key:
            best, best_r, best_key = cand, r, k
    return OptimizationResult(best, best_r, best_key[0], n, 1)


# -- deployment -----------------------------------------------------------------------------------

@dataclass(frozen=True)
class Deployment:
    node: int
    requested_at: float
    effective_at: float
    scheme: AllocationScheme
    changed: tuple[str, ...]


def deploy(net, node: int, scheme: AllocationScheme, limits: DeviceLimits = DeviceLimits(),
           log: list | None = None) -> Deployment:
    """Apply ``scheme`` to ``node`` at the next slot boundary.  Checked up front so
    an illegal scheme changes nothing."""
    scheme.check(limits)
    now = net.engine.now
    spec = net.spec(node)
    changed = []
    if scheme.power_w != spec.power_w:
        changed.append("power_w")
    if scheme.packet_size_bytes != spec.packet_size:
        changed.append("packet_size_bytes")
    if scheme.sending_rate != spec.sending_rate and "sending_rate" in scheme.tunable:
        changed.append("sending_rate")
    if "slot_length_s" in scheme.tunable and scheme.slot_length_s != net.clock.length:
        changed.append("slot_length_s")
    at = net.clock.next_boundary(now)

    def apply(n, t):
        if "power_w" in changed:
            n.set_power(node, scheme.power_w)
        if "packet_size_bytes" in changed:
            n.set_packet_size(node, scheme.packet_size_bytes)
        if "sending_rate" in changed:
            n.set_rate(node, scheme.sending_rate)
        if "slot_length_s" in changed:
            n.set_slot_length(scheme.slot_length_s)

    net.at_boundary(apply)
    d = Deployment(node, now, at, scheme, tuple(changed))
    if log is not None:
        log.append(d)
    return d
