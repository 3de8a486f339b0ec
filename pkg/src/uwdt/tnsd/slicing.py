"""Slice resource scheduling, per-node schedule composition, configuration
optimisation and dispatch."""
from __future__ import annotations

import heapq
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Iterator, Mapping, Sequence

from ..globaldt.replica import NSRow
from ..localdt.allocation import AllocationScheme, Demand, EvaluationResult, OptimizationResult, optimize_scheme
from ..sim.channel import ChannelParams, Position, ber, packet_error_probability, received_intensity_w, \
    snr_from_powers, transmission_delay
from .tasks import RawTask, TaskDemand

NAV_KINDS = {"auv"}
DET_KINDS = {"auv", "sn", "sensor"}
EXCLUSIVE = {frozenset({"nav", "relay"}), frozenset({"nav"})}


class Infeasible(RuntimeError):
    def __init__(self, subtasks: Sequence[str], partial: "SliceResult | None" = None):
        self.subtasks = tuple(subtasks)
        self.partial = partial
        super().__init__("no feasible assignment for: " + ", ".join(subtasks))


class RoleConflict(RuntimeError):
    def __init__(self, node: int, t: float, a: str, b: str):
        self.node, self.t = node, t
        super().__init__(f"node {node}: {a} and {b} overlap at t={t:g}")


@dataclass(frozen=True)
class SliceConfig:
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    comm_range_m: float = 5000.0
    det_range_m: float = 3000.0
    tx_power_w: float = 10.0
    det_power_w: float = 1.0
    nav_power_w: float = 20.0
    slot_length_s: float = 6.0
    reuse: int = 3
    max_candidates: int = 12


@dataclass(frozen=True)
class SliceNode:
    node: int
    location: tuple[float, float, float] | None
    speed: float
    role: str
    duration: float
    energy_j: float


@dataclass(frozen=True)
class SliceSchedule:
    task: str
    subtask: str
    intervals: tuple[tuple[float, float], ...]
    nodes: tuple[SliceNode, ...]
    predicted: Mapping[str, float] = field(default_factory=dict)

    def roles(self) -> dict[int, str]:
        return {r.node: r.role for r in self.nodes}


@dataclass
class SliceResult:
    slices: dict[str, SliceSchedule]
    infeasible: tuple[str, ...] = ()
    expanded: int = 0

    @property
    def feasible(self) -> bool:
        return not self.infeasible


Predictor = Callable[[list[Position], int], Mapping[str, float]]


def chain_predictor(ch: ChannelParams, cfg: SliceConfig, packet_size: int = 400) -> Predictor:
    """Slotted-chain estimate: one packet per reuse cycle, one slot per hop,
    per-hop losses from the channel model at the configured power."""

    def predict(positions: list[Position], size: int = packet_size) -> dict[str, float]:
        hops = len(positions) - 1
        cycle = cfg.slot_length_s * max(min(cfg.reuse, hops), 1)
        ok = 1.0
        for a, b in zip(positions, positions[1:]):
            sig = received_intensity_w(cfg.tx_power_w * ch.efficiency, a.distance(b), ch)
            ok *= 1 - packet_error_probability(ber(snr_from_powers(sig, 0.0, ch)), 8 * size)
        return {"throughput": 8 * size / cycle * ok, "delay": hops * cfg.slot_length_s, "loss": 1 - ok}

    return predict


# -- candidate generation ----------------------------------------------------------------------------

def _pos(row: NSRow) -> Position | None:
    return Position(*row.location) if row.location is not None else None


def _dist(row: NSRow, target) -> float:
    p = _pos(row)
    if p is None or target is None:
        return 0.0
    return p.distance(Position(*target))


class _Problem:
    def __init__(self, rt: RawTask, td: TaskDemand, ns: list[NSRow], cfg: SliceConfig,
                 predict: Predictor, capacity_j: Mapping[int, float] | None):
        self.rt, self.td, self.cfg, self.predict = rt, td, cfg, predict
        self.rows = {r.node: r for r in ns}
        finite = [r.residual_energy_j for r in ns if math.isfinite(r.residual_energy_j)]
        default_cap = max(finite, default=1.0)
        self.capacity = {n: (capacity_j or {}).get(n, default_cap) for n in self.rows}
        self.expanded = 0

    def cost(self, n: int, target) -> float:
        w1, w2, w3 = self.cfg.weights
        r = self.rows[n]
        frac = 1.0 if not math.isfinite(r.residual_energy_j) else min(r.residual_energy_j / self.capacity[n], 1.0)
        return w1 * _dist(r, target) / self.cfg.comm_range_m + w2 * (1 - frac) + w3 * len(r.tasks)

    # nav: one AUV that leads the patrol
    def nav_candidates(self) -> list[tuple[float, tuple[tuple[int, str], ...]]]:
        path = self.rt.nav.get("pathway") or [self.rt.nav.get("destination")]
        start = path[0] if path else None
        out = [(self.cost(n, start), ((n, "leader"),)) for n, r in self.rows.items() if r.kind in NAV_KINDS]
        return sorted(out)

    def det_candidates(self) -> list[tuple[float, tuple[tuple[int, str], ...]]]:
        locs = self.rt.det.get("location") or []
        if locs and not isinstance(locs[0], (list, tuple)):
            locs = [locs]
        k = int(self.td.det.get("nodes", 1))

        def near(n: int) -> float:
            return min((_dist(self.rows[n], l) for l in locs), default=0.0)

        ok = [n for n, r in self.rows.items()
              if r.kind in DET_KINDS and (r.kind == "auv" or near(n) <= self.cfg.det_range_m)]
        ranked = sorted(ok, key=lambda n: (self.cost(n, None) + self.cfg.weights[0] * near(n) / self.cfg.comm_range_m, n))
        ranked = ranked[: max(self.cfg.max_candidates, k)]
        each = {n: self.cost(n, None) + self.cfg.weights[0] * near(n) / self.cfg.comm_range_m for n in ranked}
        combos = []
        for c in itertools.combinations(ranked, k):
            roles = tuple((n, "leader" if i == 0 else "member") for i, n in enumerate(c))
            combos.append((sum(each[n] for n in c), roles))
        return sorted(combos)

    def com_paths(self, src: int, dst: int) -> Iterator[tuple[float, tuple[tuple[int, str], ...]]]:
        """Simple paths from ``src`` to ``dst`` in nondecreasing relay cost."""
        if src not in self.rows or dst not in self.rows:
            return
        limit = self.td.com.get("delay", math.inf)
        max_hops = int(limit // self.cfg.slot_length_s) if math.isfinite(limit) else len(self.rows)
        rng = self.cfg.comm_range_m
        counter = itertools.count()
        heap = [(0.0, next(counter), (src,))]
        while heap:
            c, _, p = heapq.heappop(heap)
            last = p[-1]
            if last == dst:
                roles = tuple((n, "source" if i == 0 else ("sink" if n == dst else "relay")) for i, n in enumerate(p))
                yield c, roles
                continue
            if len(p) - 1 >= max_hops:
                continue
            lp = _pos(self.rows[last])
            for n in sorted(self.rows):
                if n in p or lp is None or _pos(self.rows[n]) is None:
                    continue
                if lp.distance(_pos(self.rows[n])) > rng:
                    continue
                step = 0.0 if n == dst else self.cost(n, None)
                heapq.heappush(heap, (c + step, next(counter), p + (n,)))

    # feasibility
    def energy(self, sub: str, n: int, role: str) -> float:
        st = self.rt.st
        if sub == "nav":
            return self.cfg.nav_power_w * st.total("nav")
        if sub == "det":
            return self.cfg.det_power_w * st.total("det")
        if role in ("source", "relay"):
            number = float(self.rt.com.get("number", 0))
            return number * self.cfg.tx_power_w * transmission_delay(int(self.rt.com.get("size", 1)), self._ch)
        return 0.0

    _ch = ChannelParams()

    def com_ok(self, roles) -> tuple[bool, dict]:
        nodes = [n for n, _ in roles]
        pos = [_pos(self.rows[n]) for n in nodes]
        if any(p is None for p in pos):
            return False, {}
        pred = dict(self.predict(pos, int(self.rt.com.get("size", 400))))
        d = self.td.com
        ok = (pred["throughput"] >= d.get("throughput", 0) - 1e-9 and pred["delay"] <= d.get("delay", math.inf) + 1e-9
              and pred["loss"] <= d.get("loss", 1.0) + 1e-12)
        return ok, pred

    def consistent(self, assigned: dict[str, tuple]) -> bool:
        """Energy budgets and exclusive-role overlaps across the slices chosen so far."""
        use: dict[int, float] = {}
        classes: dict[int, list[tuple[str, tuple]]] = {}
        for sub, roles in assigned.items():
            for n, role in roles:
                use[n] = use.get(n, 0.0) + self.energy(sub, n, role)
                cls = "nav" if sub == "nav" else ("relay" if role == "relay" else role)
                for prev_cls, prev_iv in classes.get(n, []):
                    if frozenset({cls, prev_cls}) in EXCLUSIVE and _overlap(self.rt.st.row(sub), prev_iv):
                        return False
                classes.setdefault(n, []).append((cls, self.rt.st.row(sub)))
        return all(use[n] <= self.rows[n].residual_energy_j + 1e-9 for n in use)


def _overlap(a, b) -> float | None:
    for s1, e1 in a:
        for s2, e2 in b:
            if max(s1, s2) < min(e1, e2):
                return max(s1, s2)
    return None


def schedule_slices(rt: RawTask, td: TaskDemand, ns: list[NSRow], cfg: SliceConfig = SliceConfig(),
                    predict: Predictor | None = None, capacity_j: Mapping[int, float] | None = None,
                    max_expansions: int = 200000) -> SliceResult:
    """Assign nodes to the task's slices.

    Candidates for each slice are tried cheapest first, so when the cheapest
    choices are mutually compatible this is plain greedy; otherwise it backs
    off to the next candidate until a compatible set is found.  Nodes come
    from the whole network status, never from a preset subnet.
    """
    predict = predict or chain_predictor(ChannelParams(range_m=cfg.comm_range_m), cfg)
    pb = _Problem(rt, td, ns, cfg, predict, capacity_j)
    order = [s for s in ("nav", "det", "com") if rt.row(s)]
    preds: dict[tuple, dict] = {}

    def candidates(sub: str, assigned: dict) -> Iterable:
        if sub == "nav":
            return pb.nav_candidates()
        if sub == "det":
            return pb.det_candidates()
        src = rt.com.get("source")
        if src == "navigator":
            src = assigned["nav"][0][0] if "nav" in assigned else None
        if src is None:
            return ()
        return _filter_com(pb, pb.com_paths(int(src), int(rt.com.get("destination", 0))), preds)

    def search(i: int, assigned: dict) -> dict | None:
        if i == len(order):
            return dict(assigned)
        sub = order[i]
        for _, roles in candidates(sub, assigned):
            pb.expanded += 1
            if pb.expanded > max_expansions:
                return None
            assigned[sub] = roles
            if pb.consistent(assigned):
                found = search(i + 1, assigned)
                if found is not None:
                    return found
            del assigned[sub]
        return None

    found = search(0, {})
    if found is not None:
        return SliceResult(_build(rt, pb, found, preds), (), pb.expanded)
    # name the slices that cannot be staffed on their own; if each can, the last one loses
    alone = []
    for sub in order:
        ctx = {"nav": nav[0][1]} if sub == "com" and (nav := pb.nav_candidates()) else {}
        if not _any(candidates(sub, ctx)):
            alone.append(sub)
    flagged = tuple(alone or order[-1:])
    assigned: dict = {}
    for sub in order:
        if sub in flagged:
            continue
        for _, roles in candidates(sub, assigned):
            assigned[sub] = roles
            if pb.consistent(assigned):
                break
            del assigned[sub]
    return SliceResult(_build(rt, pb, assigned, preds), flagged, pb.expanded)


def _any(it) -> bool:
    for _ in it:
        return True
    return False


def _filter_com(pb: _Problem, paths, preds) -> Iterator:
    for c, roles in paths:
        ok, pred = pb.com_ok(roles)
        if ok:
            preds[roles] = pred
            yield c, roles


def _build(rt: RawTask, pb: _Problem, assigned: dict, preds: dict) -> dict[str, SliceSchedule]:
    out = {}
    for sub, roles in assigned.items():
        iv = rt.st.row(sub)
        dur = float(sum(e - s for s, e in iv))
        rows = tuple(SliceNode(n, pb.rows[n].location, pb.rows[n].speed, role, dur, pb.energy(sub, n, role))
                     for n, role in roles)
        out[sub] = SliceSchedule(rt.task_id, sub, tuple(iv), rows, preds.get(roles, {}))
    return out


# -- per-node schedules ------------------------------------------------------------------------------

@dataclass(frozen=True)
class Duty:
    task: str
    subtask: str
    role: str
    start: float
    end: float
    energy_j: float
    status: str = "scheduled"

    @property
    def duty_class(self) -> str:
        return "nav" if self.subtask == "nav" else ("relay" if self.role == "relay" else self.role)


@dataclass(frozen=True)
class IndividualSchedule:
    node: int
    duties: tuple[Duty, ...]

    def to_bytes(self) -> bytes:
        return json.dumps({"node": self.node, "duties": [asdict(d) for d in self.duties]},
                          sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "IndividualSchedule":
        d = json.loads(blob)
        return cls(int(d["node"]), tuple(Duty(**x) for x in d["duties"]))

    @property
    def energy_j(self) -> float:
        return sum(d.energy_j for d in self.duties)


def combine(slices: Iterable[SliceSchedule], residual_j: Mapping[int, float] | None = None
            ) -> dict[int, IndividualSchedule]:
    """Merge slice schedules into one ordered duty list per node; exclusive
    duties that overlap in time raise RoleConflict."""
    duties: dict[int, list[Duty]] = {}
    for sl in slices:
        n_iv = max(len(sl.intervals), 1)
        for row in sl.nodes:
            for s, e in sl.intervals:
                duties.setdefault(row.node, []).append(Duty(sl.task, sl.subtask, row.role, s, e, row.energy_j / n_iv))
    out = {}
    for n, ds in sorted(duties.items()):
        ds.sort(key=lambda d: (d.start, d.end, d.task, d.subtask, d.role))
        for i, a in enumerate(ds):
            for b in ds[i + 1:]:
                if b.start >= a.end:
                    break
                if frozenset({a.duty_class, b.duty_class}) in EXCLUSIVE:
                    raise RoleConflict(n, b.start, f"{a.task}/{a.duty_class}", f"{b.task}/{b.duty_class}")
        sched = IndividualSchedule(n, tuple(ds))
        if residual_j is not None and sched.energy_j > residual_j.get(n, math.inf) + 1e-9:
            raise ValueError(f"node {n}: scheduled energy {sched.energy_j:.1f} J exceeds residual")
        out[n] = sched
    return out


# -- configuration -----------------------------------------------------------------------------------

DEFAULT_SCHEME = AllocationScheme(power_w=10.0, slot_length_s=6.0, sending_rate=0.01, packet_size_bytes=400,
                                  tunable=frozenset({"power_w", "slot_length_s", "sending_rate"}))


@dataclass
class ConfigResult:
    scheme: AllocationScheme
    result: EvaluationResult
    feasible: bool
    seeded_from: str
    optimization: OptimizationResult


def com_demand(td: TaskDemand, max_energy_j: float = math.inf) -> Demand:
    return Demand(td.com.get("throughput", 0.0), td.com.get("delay", math.inf), td.com.get("loss", 1.0), max_energy_j)


def optimize_config(task_class: str, demand: Demand, evaluate: Callable[[AllocationScheme], EvaluationResult],
                    budget: int, grids: Mapping[str, Sequence], precedents: dict[str, AllocationScheme] | None = None,
                    default: AllocationScheme = DEFAULT_SCHEME) -> ConfigResult:
    """Start from the last accepted scheme for this task class (else ``default``),
    improve by coordinate sweeps scored by ``evaluate``, and record the outcome
    as the new precedent when it meets the demand."""
    store = precedents if precedents is not None else {}
    seed = store.get(task_class, default)
    origin = "precedent" if task_class in store else "default"
    opt = optimize_scheme(seed, demand, budget, evaluate, grids)
    if opt.feasible:
        store[task_class] = opt.scheme
    return ConfigResult(opt.scheme, opt.result, opt.feasible, origin, opt)


def slice_evaluator(sl: SliceSchedule, ch: ChannelParams, horizon_s: float = 600.0, seed: int = 0,
                    overhead_s: float = 0.0) -> Callable[[AllocationScheme], EvaluationResult]:
    """Score a scheme by simulating the slice's path as a slotted chain."""
    from ..protocols.pmac import chain_offsets
    from ..protocols.routing import RoutingTable
    from ..sim.medium import Outcome
    from ..sim.network import NodeSpec, SlottedNetwork

    path = [r.node for r in sl.nodes]
    src, sink = path[0], path[-1]

    def evaluate(s: AllocationScheme) -> EvaluationResult:
        specs = [NodeSpec(r.node, Position(*r.location), power_w=s.power_w, packet_size=s.packet_size_bytes,
                          sending_rate=s.sending_rate if r.node == src else 0.0, phase=0.5, sink=sink)
                 for r in sl.nodes]
        cycle = max(min(3, len(path) - 1), 1)
        offsets = {n: o for n, o in chain_offsets(path, cycle).items()}
        net = SlottedNetwork(specs, ch, s.slot_length_s, cycle, offsets, RoutingTable.chain(path), seed=seed,
                             overhead_s=overhead_s)
        net.run(horizon_s)
        delivered = [r for r in net.received if r.node == sink and r.intended and r.outcome is Outcome.DELIVERED]
        gen = net.nodes[src].generated
        lat = [r.time - r.created_at for r in delivered]
        thr = sum(8 * r.size for r in delivered) / horizon_s
        loss = 1 - len(delivered) / gen if gen else 0.0
        return EvaluationResult(thr, max(lat) if lat else math.inf if gen else 0.0, loss, net.ledger.total())

    return evaluate


# -- dispatch ----------------------------------------------------------------------------------------

def dispatch_payloads(schedules: Mapping[int, IndividualSchedule],
                      config: Mapping[str, AllocationScheme] | None = None,
                      slices: Iterable[SliceSchedule] = ()) -> dict[int, bytes]:
    """Per-node payload: the node's own schedule plus the schemes of the slices it is in."""
    member: dict[int, set[str]] = {}
    for sl in slices:
        for r in sl.nodes:
            member.setdefault(r.node, set()).add(f"{sl.task}/{sl.subtask}")
    out = {}
    for n, sched in sorted(schedules.items()):
        cfg = {k: v.values() for k, v in sorted((config or {}).items()) if k in member.get(n, set())}
        body = {"schedule": json.loads(sched.to_bytes()), "config": cfg}
        out[n] = json.dumps(body, sort_keys=True, separators=(",", ":")).encode()
    return out


def dispatch(net, source: int, schedules: Mapping[int, IndividualSchedule],
             config: Mapping[str, AllocationScheme] | None = None, slices: Iterable[SliceSchedule] = (),
             retries: int = 3):
    """Send each node its payload over ``net``; raises Undeliverable on failures."""
    from ..globaldt.distribute import distribute
    if not schedules:
        from ..globaldt.distribute import DistributionResult
        return DistributionResult(start=net.engine.now)
    res = distribute(net, source, dispatch_payloads(schedules, config, slices), retries=retries)
    res.raise_for_failures()
    return res


def decode_payload(blob: bytes) -> tuple[IndividualSchedule, dict]:
    body = json.loads(blob)
    return IndividualSchedule.from_bytes(json.dumps(body["schedule"]).encode()), body["config"]
