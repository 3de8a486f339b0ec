"""Local twin database: the node's own, neighbouring and environmental records."""
from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any


class DataCategory(str, Enum):
    STATE = "state"
    SENSOR = "sensor"
    COMMUNICATION = "communication"
    LOG = "log"


@dataclass(frozen=True)
class Datum:
    source: int
    timestamp: float
    category: DataCategory
    field: str
    value: Any = None
    subject: int | None = None  # node the datum describes, defaults to ``source``


@dataclass
class Record:
    timestamp: float
    value: Any


ENV_SENSOR_FIELDS = {"obstacle", "current", "temperature", "sound_speed", "noise", "interferer_position"}


@dataclass
class LocalDatabase:
    """Three stores keyed the way a node's twin sees the world.

    Histories are bounded ring buffers; every entry carries the timestamp of
    the datum that produced it.
    """
    owner: int
    history_len: int = 256
    local_info: dict[str, dict] = field(default_factory=lambda: {"configuration": {}, "history": None, "log": None})
    neighbor_info: dict[int, dict] = field(default_factory=dict)
    env_info: dict[str, Any] = field(default_factory=lambda: {"obstacles": {}, "current": None,
                                                              "channel": {}, "interference_w": Record(0.0, 0.0)})
    rejected: int = 0
    _seen: set = field(default_factory=set, repr=False)

    def __post_init__(self):
        if self.local_info["history"] is None:
            self.local_info["history"] = deque(maxlen=self.history_len)
            self.local_info["log"] = deque(maxlen=self.history_len)
        self.config_timeline: dict[str, list[tuple[float, Any]]] = defaultdict(list)

    # -- neighbour helpers -------------------------------------------------
    def neighbor(self, nid: int) -> dict:
        if nid not in self.neighbor_info:
            self.neighbor_info[nid] = {
                "params": {}, "location": None,
                "behavior": deque(maxlen=self.history_len),
                "link": deque(maxlen=self.history_len),
            }
        return self.neighbor_info[nid]

    def config(self, name: str, default=None):
        rec = self.local_info["configuration"].get(name)
        return rec.value if rec is not None else default

    def config_at(self, name: str, t: float, default=None):
        value = default
        for eff, v in self.config_timeline.get(name, []):
            if eff <= t:
                value = v
            else:
                break
        return value

    # -- ingestion ----------------------------------------------------------
    def ingest(self, datum: Datum) -> bool:
        """Route ``datum`` into the right store; returns False if it was a duplicate or malformed."""
        if not isinstance(datum, Datum) or not isinstance(datum.field, str) or datum.source is None \
                or datum.timestamp is None or not math.isfinite(datum.timestamp):
            self.rejected += 1
            return False
        try:
            category = DataCategory(datum.category)
        except ValueError:
            self.rejected += 1
            return False
        subject = datum.subject if datum.subject is not None else datum.source
        key = (datum.source, subject, datum.timestamp, datum.field, _freeze(datum.value))
        if key in self._seen:
            return False
        self._seen.add(key)
        own = subject == self.owner

        if category is DataCategory.STATE:
            if own:
                self._set_config(datum.field, datum.timestamp, datum.value)
            else:
                nb = self.neighbor(subject)
                if datum.field == "location":
                    nb["location"] = Record(datum.timestamp, datum.value)
                else:
                    nb["params"][datum.field] = Record(datum.timestamp, datum.value)
        elif category is DataCategory.SENSOR:
            if datum.field in ENV_SENSOR_FIELDS:
                self._set_env(datum.field, datum.timestamp, datum.value)
            elif own:
                self._set_config(datum.field, datum.timestamp, datum.value)
            else:
                self.neighbor(subject)["params"][datum.field] = Record(datum.timestamp, datum.value)
        elif category is DataCategory.COMMUNICATION:
            if own:
                self.local_info["history"].append(Record(datum.timestamp, (datum.field, datum.value)))
            else:
                nb = self.neighbor(subject)
                nb["behavior"].append(Record(datum.timestamp, (datum.field, datum.value)))
                if datum.field in ("rx", "overheard", "rts") and isinstance(datum.value, dict) \
                        and "snr_db" in datum.value:
                    nb["link"].append(Record(datum.timestamp, datum.value))
        else:
            self.local_info["log"].append(Record(datum.timestamp, (datum.field, datum.value)))
        return True

    def _set_config(self, name: str, t: float, value) -> None:
        cur = self.local_info["configuration"].get(name)
        if cur is None or t >= cur.timestamp:
            self.local_info["configuration"][name] = Record(t, value)
        tl = self.config_timeline[name]
        tl.append((t, value))
        tl.sort(key=lambda r: r[0])

    def _set_env(self, name: str, t: float, value) -> None:
        if name == "obstacle":
            self.env_info["obstacles"][tuple(value)] = Record(t, True)
        else:
            self.env_info[name] = Record(t, value)

    # -- derived estimates (recomputed from stored observations only) ----
    def link_samples(self, nid: int, since: float = -math.inf) -> list[dict]:
        if nid not in self.neighbor_info:
            return []
        return [r.value for r in self.neighbor_info[nid]["link"] if r.timestamp >= since]

    def channel_quality(self, nid: int, window: int = 10) -> dict[str, float]:
        samples = self.link_samples(nid)[-window:]
        if not samples:
            return {"loss": 0.0, "snr_db": math.nan, "samples": 0}
        loss = sum(0 if s.get("ok") else 1 for s in samples) / len(samples)
        snrs = [s["snr_db"] for s in samples if math.isfinite(s["snr_db"])]
        return {"loss": loss, "snr_db": float(sum(snrs) / len(snrs)) if snrs else math.nan,
                "samples": len(samples)}

    def set_interference_estimate(self, t: float, watts: float) -> None:
        self.env_info["interference_w"] = Record(t, watts)
        self.config_timeline["__interference"].append((t, watts))

    def interference_at(self, t: float) -> float:
        return self.config_at("__interference", t, 0.0)


def _freeze(v):
    if isinstance(v, dict):
        return tuple(sorted((k, _freeze(x)) for k, x in v.items()))
    if isinstance(v, (list, tuple)):
        return tuple(_freeze(x) for x in v)
    return v
