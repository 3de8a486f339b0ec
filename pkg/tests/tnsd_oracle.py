"""Exhaustive feasibility search for small slicing instances, written without
reference to the scheduler's search so the two can be compared."""
import itertools
import math

import numpy as np

from uwdt.globaldt.replica import EntryStatus, NSRow
from uwdt.sim.channel import ChannelParams, Position, transmission_delay
from uwdt.tnsd.tasks import decompose, extract_demand

KINDS = ("auv", "sn", "sensor", "buoy")
URGENCIES = ("high", "normal", "low")


def random_instance(rng, max_nodes=8, area=9000.0):
    n = int(rng.integers(3, max_nodes + 1))
    ns = []
    for i in range(n):
        kind = "sink" if i == 0 else KINDS[int(rng.integers(len(KINDS)))]
        loc = (float(rng.uniform(0, area)), float(rng.uniform(0, area)), -100.0)
        energy = float(rng.uniform(0, 15000)) if i else math.inf
        ns.append(NSRow(i, kind, loc, 0.0, energy, "", EntryStatus.OBSERVED, 1.0))
    nav_end = float(rng.uniform(200, 600))
    d0 = float(rng.uniform(0, nav_end - 100))
    det_iv = [[d0, d0 + float(rng.uniform(20, 100))]]
    c0 = float(rng.uniform(0, 2 * nav_end))
    com_iv = [[c0, c0 + float(rng.uniform(50, 200))]]
    desc = {"id": "t", "type": "random"}
    if rng.random() < 0.8:
        desc["nav"] = {"pathway": [[0, 0, -100], [float(rng.uniform(0, 600)), 0, -100]],
                       "intervals": [[0, nav_end]]}
    if rng.random() < 0.8:
        desc["det"] = {"location": [[float(rng.uniform(0, area)), float(rng.uniform(0, area)), -100.0]],
                       "nodes": int(rng.integers(1, 3)), "duration": 1.0, "urgency": "normal",
                       "intervals": det_iv}
    if rng.random() < 0.8 or len(desc) == 2:
        src = "navigator" if "nav" in desc and rng.random() < 0.5 else int(rng.integers(1, n))
        desc["com"] = {"source": src, "destination": 0, "size": 400, "number": int(rng.integers(1, 12)),
                       "urgency": URGENCIES[int(rng.integers(3))], "intervals": com_iv}
    rt = decompose(desc)
    return rt, extract_demand(rt), ns


def _energy(rt, cfg, sub, role):
    if sub == "nav":
        return cfg.nav_power_w * rt.st.total("nav")
    if sub == "det":
        return cfg.det_power_w * rt.st.total("det")
    if role in ("source", "relay"):
        return rt.com["number"] * cfg.tx_power_w * transmission_delay(int(rt.com["size"]), ChannelParams())
    return 0.0


def _overlaps(a, b):
    return any(max(s1, s2) < min(e1, e2) for s1, e1 in a for s2, e2 in b)


def com_path_ok(rt, td, ns, cfg, predict, path):
    rows = {r.node: r for r in ns}
    if path[-1] != rt.com["destination"] or len(set(path)) != len(path):
        return False
    if any(math.dist(rows[a].location, rows[b].location) > cfg.comm_range_m for a, b in zip(path, path[1:])):
        return False
    if len(path) - 1 > td.com["delay"] // cfg.slot_length_s:
        return False
    pred = predict([Position(*rows[n].location) for n in path], int(rt.com["size"]))
    return not (pred["throughput"] < td.com["throughput"] - 1e-9 or pred["delay"] > td.com["delay"] + 1e-9
                or pred["loss"] > td.com["loss"] + 1e-12)


def assignment_ok(rt, td, ns, cfg, predict, assign):
    """``assign`` maps subtask -> list of (node, role)."""
    rows = {r.node: r for r in ns}
    if "nav" in assign:
        (n, _), = assign["nav"]
        if rows[n].kind != "auv":
            return False
    if "det" in assign:
        locs = rt.det.get("location") or []
        members = [n for n, _ in assign["det"]]
        if len(set(members)) != int(td.det.get("nodes", 1)):
            return False
        for n in members:
            r = rows[n]
            if r.kind not in ("auv", "sn", "sensor"):
                return False
            if r.kind != "auv" and min(math.dist(r.location, l) for l in locs) > cfg.det_range_m:
                return False
    if "com" in assign:
        path = [n for n, _ in assign["com"]]
        src = rt.com["source"]
        if src == "navigator":
            if "nav" not in assign:
                return False
            src = assign["nav"][0][0]
        if path[0] != src or not com_path_ok(rt, td, ns, cfg, predict, tuple(path)):
            return False
    use = {}
    for sub, roles in assign.items():
        for n, role in roles:
            use[n] = use.get(n, 0.0) + _energy(rt, cfg, sub, role)
    if any(use[n] > rows[n].residual_energy_j + 1e-9 for n in use):
        return False
    if "nav" in assign and "com" in assign:
        navigator = assign["nav"][0][0]
        relays = {n for n, role in assign["com"] if role == "relay"}
        if navigator in relays and _overlaps(rt.st.nav, rt.st.com):
            return False
    return True


def _paths(nodes, src, dst):
    others = [n for n in nodes if n not in (src, dst)]
    for k in range(len(others) + 1):
        for mid in itertools.permutations(others, k):
            yield (src, *mid, dst)


def exhaustive_feasible(rt, td, ns, cfg, predict):
    """True when any assignment at all satisfies every constraint."""
    nodes = sorted(r.node for r in ns)
    subs = [s for s in ("nav", "det", "com") if rt.row(s)]
    nav_opts = [None]
    if "nav" in subs:
        nav_opts = [[(n, "leader")] for n in nodes if assignment_ok(rt, td, ns, cfg, predict, {"nav": [(n, "leader")]})]
    det_opts = [None]
    if "det" in subs:
        k = int(td.det.get("nodes", 1))
        det_opts = [a for a in ([(n, "member") for n in c] for c in itertools.combinations(nodes, k))
                    if assignment_ok(rt, td, ns, cfg, predict, {"det": a})]
    paths = {}

    def com_opts(src):
        if src not in paths:
            paths[src] = [p for p in _paths(nodes, src, int(rt.com["destination"]))
                          if com_path_ok(rt, td, ns, cfg, predict, p)]
        return paths[src]

    for nav, det in itertools.product(nav_opts, det_opts):
        assign = {k: v for k, v in (("nav", nav), ("det", det)) if v is not None}
        if "com" not in subs:
            if assignment_ok(rt, td, ns, cfg, predict, assign):
                return True
            continue
        src = rt.com["source"]
        if src == "navigator":
            src = nav[0][0] if nav else None
        if src is None or src not in nodes:
            continue
        for p in com_opts(int(src)):
            roles = [(n, "source" if i == 0 else ("sink" if i == len(p) - 1 else "relay")) for i, n in enumerate(p)]
            if assignment_ok(rt, td, ns, cfg, predict, {**assign, "com": roles}):
                return True
    return False


def as_assignment(result):
    return {sub: [(r.node, r.role) for r in sl.nodes] for sub, sl in result.slices.items()}


def random_slices(rng, n_nodes=5, n_slices=6):
    """Arbitrary slice schedules (not produced by the scheduler)."""
    from uwdt.tnsd.slicing import SliceNode, SliceSchedule
    out = []
    for k in range(n_slices):
        sub = ("nav", "det", "com")[int(rng.integers(3))]
        roles = {"nav": ("leader",), "det": ("leader", "member"), "com": ("source", "relay", "sink")}[sub]
        nodes = rng.choice(n_nodes, size=int(rng.integers(1, n_nodes + 1)), replace=False)
        ivs, t = [], 0.0
        for _ in range(int(rng.integers(1, 4))):
            t += float(rng.uniform(0, 50))
            e = t + float(rng.uniform(1, 50))
            ivs.append((t, e))
            t = e
        out.append(SliceSchedule(f"task{k}", sub, tuple(ivs),
                                 tuple(SliceNode(int(n), None, 0.0, roles[int(rng.integers(len(roles)))], 0.0, 1.0)
                                       for n in nodes)))
    return out


def exclusive_overlap(schedules):
    """Any pair of overlapping duties on one node whose classes are exclusive."""
    from uwdt.tnsd.slicing import EXCLUSIVE
    for sched in schedules.values():
        for a, b in itertools.combinations(sched.duties, 2):
            if frozenset({a.duty_class, b.duty_class}) in EXCLUSIVE and max(a.start, b.start) < min(a.end, b.end):
                return True
    return False
