"""Status acquisition and task slicing on a clustered network.

Three parts share one run:

* Full status collection over scenarios of growing size (time and energy).
* A deployment lifetime with drift, exhaustion and join events, comparing
  repeated full collection with piggyback maintenance, plus the twin's
  response to each event.
* Slicing of a set of tasks against the collected network status, merged
  into per-node schedules.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

from ..globaldt.tgnso import SCENARIOS, cluster_topology, tgnso_collect
from ..sim.channel import ChannelParams
from ..tnsd.events import default_events, simulate_lifetime
from ..tnsd.slicing import RoleConflict, SliceConfig, chain_predictor, combine, dispatch_payloads, schedule_slices
from ..tnsd.tasks import decompose, extract_demand
from .base import Check, ExperimentOutput

EXPECTED_ACTION = {"drift": {"adjust_power_slot"}, "auv_join": {"reschedule"}}


def _default_tasks() -> list[dict]:
    return [
        {"id": "patrol-east", "type": "cruise", "speed": 2.0, "sink": 0, "urgency": "normal",
         "path": [[13700, 11300, -200], [16300, 11300, -200], [16300, 14000, -200]],
         "alert_areas": [{"center": [16300, 12000, -1000], "radius": 1500}]},
        {"id": "monitor-west", "type": "monitor",
         "det": {"location": [[7150, 6900, -1000]], "scale": 500, "duration": 600, "urgency": "high",
                 "intervals": [[0, 600]]},
         "com": {"source": 9, "destination": 0, "size": 400, "number": 10, "urgency": "high",
                 "intervals": [[0, 600]]}},
    ]


@dataclass
class TnsdConfig:
    scenarios: tuple[str, ...] = ("a", "b", "c", "d")
    area_m: float = 20000.0
    range_m: float = 6000.0
    power_w: float = 32.0
    slot_length_s: float = 7.92
    schedule_bytes: int = 50
    status_bytes: int = 600
    lifetime_scenario: str = "d"
    period_s: float = 600.0
    compute_s: float = 0.1
    piggyback_bytes: int = 16
    tasks: list[dict] = field(default_factory=_default_tasks)
    seed: int = 0


def _slice_tasks(cfg: TnsdConfig, ns, out: ExperimentOutput) -> tuple[dict, list[str]]:
    scfg = SliceConfig(comm_range_m=cfg.range_m)
    predict = chain_predictor(ChannelParams(range_m=cfg.range_m), scfg)
    chosen, failed = [], []
    for desc in cfg.tasks:
        rt = decompose(desc)
        td = extract_demand(rt)
        pool = list(ns)
        while True:
            res = schedule_slices(rt, td, pool, scfg, predict)
            try:
                combine([s for r in chosen for s in r.slices.values()] + list(res.slices.values()))
                break
            except RoleConflict as e:
                # the node is already committed elsewhere; retry without it
                pool = [r for r in pool if r.node != e.node]
        chosen.append(res)
        if not res.feasible:
            failed.append(f"{rt.task_id}:{'+'.join(res.infeasible)}")
        for sub, sl in sorted(res.slices.items()):
            out.tables.setdefault("slices", []).append({
                "task": rt.task_id, "subtask": sub, "nodes": " ".join(f"{n.node}:{n.role}" for n in sl.nodes),
                "intervals": len(sl.intervals), "energy_j": sum(n.energy_j for n in sl.nodes),
                **{f"pred_{k}": v for k, v in sorted(sl.predicted.items())}})
    slices = [s for r in chosen for s in r.slices.values()]
    schedules = combine(slices)
    payloads = dispatch_payloads(schedules, slices=slices)
    for n, sched in schedules.items():
        out.tables.setdefault("node_schedules", []).append(
            {"node": n, "duties": len(sched.duties), "energy_j": sched.energy_j, "payload_bytes": len(payloads[n])})
    return schedules, failed


def run_tnsd(cfg: TnsdConfig) -> ExperimentOutput:
    out = ExperimentOutput("tnsd_multitask")
    started = time.perf_counter()
    ch = ChannelParams(range_m=cfg.range_m)

    results = {}
    for i, name in enumerate(cfg.scenarios):
        if name not in SCENARIOS:
            raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
        n_sns, n_auvs = SCENARIOS[name]
        topo = cluster_topology(n_sns, n_auvs, seed=cfg.seed, area_m=cfg.area_m, range_m=cfg.range_m)
        r = tgnso_collect(topo, ch, power_w=cfg.power_w, slot_length_s=cfg.slot_length_s,
                          schedule_bytes=cfg.schedule_bytes, status_bytes=cfg.status_bytes, seed=cfg.seed)
        results[name] = (topo, r)
        out.tables.setdefault("tgnso", []).append({"scenario": name, "sns": n_sns, "auvs": n_auvs,
                                                   "ledger_j": r.ledger.total(), **r.as_row()})
        for metric in ("schedule_time_s", "upload_time_s", "total_time_s", "energy_j"):
            out.log.add(float(i), 0, f"tgnso.{name}.{metric}", getattr(r, metric))
            out.summary[f"tgnso.{name}.{metric}"] = getattr(r, metric)
        out.figures.setdefault("tgnso_consumption", []).extend(
            [("total_time_s", float(i), r.total_time_s), ("energy_j", float(i), r.energy_j)])
    rows = out.tables["tgnso"]
    identity = all(abs(r["total_time_s"] - r["schedule_time_s"] - r["upload_time_s"]) <= 1e-9 for r in rows)
    ledger = all(r["energy_j"] == r["ledger_j"] for r in rows)
    increasing = all(a["total_time_s"] < b["total_time_s"] and a["energy_j"] < b["energy_j"]
                     for a, b in zip(rows, rows[1:]))
    out.checks += [
        Check("tgnso_time_identity", identity, "total = schedule + upload"),
        Check("tgnso_monotone", increasing, " < ".join(f"{r['scenario']}:{r['total_time_s']:.1f}s" for r in rows)),
        Check("tgnso_energy_ledger", ledger, "energy equals ledger sum"),
    ]

    topo = results[cfg.lifetime_scenario][0] if cfg.lifetime_scenario in results else cluster_topology(
        *SCENARIOS[cfg.lifetime_scenario], seed=cfg.seed, area_m=cfg.area_m, range_m=cfg.range_m)
    events = default_events(topo, cfg.period_s)
    life = simulate_lifetime(topo, events, cfg.period_s, cfg.compute_s, cfg.piggyback_bytes, cfg.status_bytes,
                             cfg.power_w, cfg.seed, ch)
    for row in life.rows:
        out.tables.setdefault("lifetime", []).append({
            "k": row.k, "time": row.time, "event": row.event, "tgnso_time_s": row.tgnso_time_s,
            "tgnso_energy_j": row.tgnso_energy_j, "tnsd_time_s": row.tnsd_time_s, "tnsd_energy_j": row.tnsd_energy_j})
        for metric in ("tgnso_time_s", "tgnso_energy_j", "tnsd_time_s", "tnsd_energy_j"):
            out.log.add(row.time, row.k, f"lifetime.{metric}", getattr(row, metric))
            out.figures.setdefault("tnsd_savings", []).append((metric, float(row.k), getattr(row, metric)))
    later = life.rows[1:]
    below = all(r.tnsd_time_s < r.tgnso_time_s and r.tnsd_energy_j < r.tgnso_energy_j for r in later)
    gaps = [(r.gap_time_s, r.gap_energy_j) for r in life.rows]
    nondecreasing = all(b[0] >= a[0] and b[1] >= a[1] for a, b in zip(gaps, gaps[1:]))
    wrong = []
    for resp in life.responses:
        ev = resp.event
        if ev.kind == "exhaustion":
            expected = {"auv_substitute"} if topo.children(ev.node) else {"none"}
        else:
            expected = EXPECTED_ACTION[ev.kind]
        late = resp.delay_s > cfg.period_s + cfg.compute_s
        out.tables.setdefault("responses", []).append({
            "event": ev.kind, "node": ev.node, "time": ev.time, "detected_at": resp.detected_at,
            "decided_at": resp.decided_at, "action": resp.action,
            "params": " ".join(f"{k}={v}" for k, v in sorted(resp.params.items()))})
        out.log.add(resp.decided_at, ev.node, f"response.{ev.kind}.delay_s", resp.delay_s)
        if resp.action not in expected or late:
            wrong.append((ev.kind, ev.node, resp.action, resp.delay_s))
    out.checks += [
        Check("lifetime_events", len(events) >= 5, f"{len(events)} events"),
        Check("tnsd_below_tgnso", below, f"final gap {gaps[-1][0]:.1f} s, {gaps[-1][1]:.1f} J"),
        Check("gap_nondecreasing", nondecreasing, ""),
        Check("event_responses", not wrong, f"wrong or late: {wrong}"),
    ]

    ns = results[cfg.lifetime_scenario][1].ns if cfg.lifetime_scenario in results else tgnso_collect(
        topo, ch, power_w=cfg.power_w, seed=cfg.seed).ns
    schedules, failed = _slice_tasks(cfg, ns, out)
    out.checks.append(Check("tasks_sliced", not failed, f"infeasible: {failed}"))
    for n, sched in schedules.items():
        for d in sched.duties:
            out.log.add(d.start, n, f"duty.{d.task}.{d.subtask}.{d.role}", d.end - d.start)

    out.summary.update({
        "lifetime.gap_time_s": gaps[-1][0], "lifetime.gap_energy_j": gaps[-1][1],
        "tasks": len(cfg.tasks), "scheduled_nodes": len(schedules),
        "elapsed_s": time.perf_counter() - started,
    })
    out.log.rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return out
