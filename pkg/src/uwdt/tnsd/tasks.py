"""Task decomposition into communication, detection and navigation subtasks,
timeline validation, and rule-based demand extraction."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

SUBTASKS = ("com", "det", "nav")

COM_KEYS = ("source", "destination", "size", "number")
DET_KEYS = ("location", "scale", "duration", "urgency", "nodes")
NAV_KEYS = ("destination", "pathway", "timing", "speed")

# urgency class -> (max delay s, max loss, detection accuracy, revisit rate 1/s)
URGENCY = {
    "high": (10.0, 0.01, 0.95, 1 / 60),
    "normal": (60.0, 0.05, 0.90, 1 / 300),
    "low": (300.0, 0.10, 0.80, 1 / 900),
}


class Unmappable(ValueError):
    pass


class InfeasibleTimeline(ValueError):
    pass


Interval = tuple[float, float]


@dataclass(frozen=True)
class Timeline:
    com: tuple[Interval, ...] = ()
    det: tuple[Interval, ...] = ()
    nav: tuple[Interval, ...] = ()

    def row(self, name: str) -> tuple[Interval, ...]:
        return getattr(self, name)

    def total(self, name: str) -> float:
        return float(sum(e - s for s, e in self.row(name)))


@dataclass(frozen=True)
class RawTask:
    task_id: str
    kind: str
    com: Mapping[str, Any] = field(default_factory=dict)
    det: Mapping[str, Any] = field(default_factory=dict)
    nav: Mapping[str, Any] = field(default_factory=dict)
    st: Timeline = Timeline()
    ext: Mapping[str, Any] = field(default_factory=dict)

    def row(self, name: str) -> Mapping[str, Any]:
        return getattr(self, name)


@dataclass(frozen=True)
class TaskDemand:
    com: Mapping[str, float]
    det: Mapping[str, float]
    nav: Mapping[str, float]

    def row(self, name: str) -> Mapping[str, float]:
        return getattr(self, name)


# -- decomposition ----------------------------------------------------------------------------------

def _intervals(raw) -> tuple[Interval, ...]:
    return tuple((float(s), float(e)) for s, e in (raw or ()))


def _path_length(points) -> float:
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def _segment_ball(a, b, c, r) -> tuple[float, float] | None:
    """Fractions of segment a->b that lie inside the ball (c, r)."""
    a, b, c = (np.asarray(v, float) for v in (a, b, c))
    d = b - a
    f = a - c
    A = d @ d
    if A == 0:
        return (0.0, 1.0) if f @ f <= r * r else None
    B = 2 * f @ d
    C = f @ f - r * r
    disc = B * B - 4 * A * C
    if disc < 0:
        return None
    sq = math.sqrt(disc)
    lo, hi = max((-B - sq) / (2 * A), 0.0), min((-B + sq) / (2 * A), 1.0)
    return (lo, hi) if hi > lo else None


def _merge(iv: list[Interval]) -> tuple[Interval, ...]:
    out: list[list[float]] = []
    for s, e in sorted(iv):
        if out and s <= out[-1][1]:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e])
    return tuple((s, e) for s, e in out)


def _cruise(desc: Mapping[str, Any]) -> tuple[dict, dict, dict, Timeline]:
    """Patrol a path; detect while inside alert areas; upload after each detection window."""
    path = [tuple(map(float, p)) for p in desc["path"]]
    speed = float(desc.get("speed", 1.0))
    t0 = float(desc.get("start", 0.0))
    upload = float(desc.get("upload_s", 60.0))
    det_iv: list[Interval] = []
    t = t0
    for a, b in zip(path, path[1:]):
        seg_t = math.dist(a, b) / speed
        for area in desc.get("alert_areas", ()):
            hit = _segment_ball(a, b, area["center"], float(area["radius"]))
            if hit:
                det_iv.append((float(t + hit[0] * seg_t), float(t + hit[1] * seg_t)))
        t += seg_t
    det_iv = list(_merge(det_iv))
    com_iv = _merge([(e, e + upload) for _, e in det_iv])
    nav = {"destination": path[-1], "pathway": path, "timing": t0, "speed": speed}
    areas = desc.get("alert_areas", ())
    det = {}
    if areas:
        det = {"location": [tuple(map(float, a["center"])) for a in areas],
               "scale": max(float(a["radius"]) for a in areas),
               "duration": sum(e - s for s, e in det_iv),
               "urgency": desc.get("urgency", "normal"), "nodes": int(desc.get("det_nodes", 1))}
    com = {}
    if com_iv:
        com = {"source": desc.get("reporter", "navigator"), "destination": desc.get("sink", 0),
               "size": int(desc.get("report_size", 400)), "number": int(desc.get("report_number", 1)) * len(com_iv),
               "urgency": desc.get("urgency", "normal")}
    return com, det, nav, Timeline(com_iv, tuple(det_iv), ((t0, t),))


KNOWN = {"id", "type", "com", "det", "nav", "path", "speed", "start", "upload_s", "alert_areas", "urgency",
         "reporter", "sink", "report_size", "report_number", "det_nodes"}


def decompose(desc: Mapping[str, Any]) -> RawTask:
    """Map a declarative task description onto com/det/nav rows and a timeline.

    ``type: cruise`` derives all three rows from a path and alert areas; any
    other type takes explicit ``com``/``det``/``nav`` sections, each with an
    ``intervals`` list.  Unrecognised keys are kept in ``ext``.
    """
    kind = str(desc.get("type", "custom"))
    ext = {k: copy.deepcopy(v) for k, v in desc.items() if k not in KNOWN}
    if kind == "cruise":
        if "path" not in desc:
            raise Unmappable("cruise task needs a path")
        com, det, nav, st = _cruise(desc)
    else:
        rows, ivs = {}, {}
        for name in SUBTASKS:
            sec = dict(desc.get(name) or {})
            ivs[name] = _intervals(sec.pop("intervals", ()))
            rows[name] = copy.deepcopy(sec)
        com, det, nav = rows["com"], rows["det"], rows["nav"]
        st = Timeline(ivs["com"], ivs["det"], ivs["nav"])
    if not (com or det or nav):
        raise Unmappable(f"task {desc.get('id', '?')} names no communication, detection or navigation need")
    return RawTask(str(desc.get("id", kind)), kind, com, det, nav, st, ext)


# -- timeline validation ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    row: str
    kind: str  # reversed | unsorted | overlap
    i: int
    j: int | None = None


def validate_timeline(st: Timeline) -> list[Violation]:
    """Every reversed interval, every out-of-order pair and every overlapping pair."""
    out: list[Violation] = []
    for name in SUBTASKS:
        row = st.row(name)
        if not row:
            continue
        iv = np.asarray(row, dtype=float)
        s, e = iv[:, 0], iv[:, 1]
        out += [Violation(name, "reversed", int(i)) for i in np.flatnonzero(s > e)]
        lo, hi = np.minimum(s, e), np.maximum(s, e)
        n = len(row)
        ii, jj = np.triu_indices(n, 1)
        unsorted = s[ii] > s[jj]
        overlap = np.maximum(lo[ii], lo[jj]) < np.minimum(hi[ii], hi[jj])
        for i, j, u, o in zip(ii, jj, unsorted, overlap):
            if u:
                out.append(Violation(name, "unsorted", int(i), int(j)))
            if o:
                out.append(Violation(name, "overlap", int(i), int(j)))
    return out


# -- demand extraction ------------------------------------------------------------------------------

def _urgency(row: Mapping[str, Any]) -> tuple:
    u = row.get("urgency", "normal")
    if u not in URGENCY:
        raise ValueError(f"unknown urgency class {u!r}")
    return URGENCY[u]


def extract_demand(rt: RawTask, history: Mapping[str, float] | None = None) -> TaskDemand:
    """Rule-based demand.  ``history`` maps ``"row.metric"`` to the achieved/requested
    ratio seen on earlier runs; ratios below 1 inflate that demand (at most 2x)."""
    hist = dict(history or {})

    def adj(key: str, v: float, higher_is_harder: bool = True) -> float:
        r = hist.get(key)
        if r is None or r >= 1 or r <= 0:
            return v
        f = min(1 / r, 2.0)
        return v * f if higher_is_harder else v / f

    com: dict[str, float] = {}
    if rt.com:
        work = 8.0 * float(rt.com.get("size", 0)) * float(rt.com.get("number", 0))
        span = rt.st.total("com")
        if span <= 0 and work > 0:
            raise InfeasibleTimeline("communication work with no active interval")
        delay, loss, _, _ = _urgency(rt.com)
        com = {"throughput": adj("com.throughput", work / span if span > 0 else 0.0),
               "delay": adj("com.delay", delay, False), "loss": adj("com.loss", loss, False)}
    det: dict[str, float] = {}
    if rt.det:
        span = rt.st.total("det")
        if span <= 0 and float(rt.det.get("duration", 0)) > 0:
            raise InfeasibleTimeline("detection duration with no active interval")
        _, _, acc, rate = _urgency(rt.det)
        det = {"accuracy": min(adj("det.accuracy", acc), 1.0),
               "coverage": float(min(max(rt.det.get("coverage", 1.0), 0.0), 1.0)),
               "update_rate": adj("det.update_rate", rate), "scale": float(rt.det.get("scale", 0.0)),
               "nodes": float(rt.det.get("nodes", 1))}
    nav: dict[str, float] = {}
    if rt.nav:
        length = _path_length(rt.nav.get("pathway", ()))
        span = rt.st.total("nav")
        if span <= 0 and length > 0:
            raise InfeasibleTimeline("navigation path with no active interval")
        nav = {"speed": adj("nav.speed", length / span if span > 0 else 0.0), "endurance": span,
               "secrecy": float(rt.nav.get("secrecy", 0.0))}
    return TaskDemand(com, det, nav)
