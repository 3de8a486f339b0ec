"""Scenario files: validation and translation into experiment configs.

A scenario is a JSON (or YAML) document naming one experiment kind plus
optional sections.  Unknown keys are rejected and every validation error
points at the offending line.  Any field left out keeps the experiment's
own default.
"""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Annotated, Any, Literal, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError

from .experiments.cmfd_training import CmfdConfig
from .experiments.fidelity import FidelityConfig, Mutation
from .experiments.power_control import PowerControlConfig
from .experiments.tnsd_multitask import TnsdConfig
from .localdt.twin import LocalDtConfig


class ScenarioError(ValueError):
    def __init__(self, messages: list[str]):
        super().__init__("\n".join(messages))
        self.messages = messages


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


Framing = tuple[tuple[int, float], tuple[int, float]]


# -- fidelity ------------------------------------------------------------------------------------------

class FidelityTopology(Section):
    spacing_m: float | None = Field(None, gt=0)
    depth_m: float | None = None
    range_m: float | None = Field(None, gt=0)


class FidelityChannel(Section):
    ambient_noise_db: float | None = None
    framing: Framing | None = None


class FidelityTraffic(Section):
    power_w: float | None = Field(None, gt=0)
    packet_size: int | None = Field(None, gt=0)
    sending_rate: float | None = Field(None, gt=0)
    phases: tuple[float, float] | None = None


class PmacProtocol(Section):
    mac: Literal["pmac"] = "pmac"
    slot_length_s: float | None = Field(None, gt=0)
    slot_cycle: int | None = Field(None, ge=1)


class MutationSpec(Section):
    time: float = Field(ge=0)
    kind: Literal["sending_rate", "packet_size", "slot_length", "interference"]
    value: float
    nodes: tuple[int, ...] = ()
    position: tuple[float, float, float] | None = None


class LocalDtSpec(Section):
    period_s: float | None = Field(None, gt=0)
    window: int | None = Field(None, ge=1)
    hidden: int | None = Field(None, ge=1)
    rel_threshold: float | None = Field(None, ge=0)
    abs_threshold: float | None = Field(None, ge=0)
    epochs: int | None = Field(None, ge=1)
    lr: float | None = Field(None, gt=0)
    piggyback_period_s: float | None = Field(None, gt=0)


class FidelityRunSpec(Section):
    duration_s: float | None = Field(None, gt=0)
    interval_s: float | None = Field(None, gt=0)
    warmup_intervals: int | None = Field(None, ge=0)
    count_tolerance: float | None = Field(None, ge=0)
    throughput_tolerance: float | None = Field(None, ge=0)


class FidelityScenario(Section):
    experiment: Literal["fidelity"]
    seed: int | None = None
    out: str | None = None
    topology: FidelityTopology = FidelityTopology()
    channel: FidelityChannel = FidelityChannel()
    traffic: FidelityTraffic = FidelityTraffic()
    protocol: PmacProtocol = PmacProtocol()
    mutations: list[MutationSpec] | None = None
    local_dt: LocalDtSpec = LocalDtSpec()
    run: FidelityRunSpec = FidelityRunSpec()

    def config(self) -> FidelityConfig:
        kw = _merge(self.topology, self.channel, self.traffic, self.protocol, self.run, skip={"mac"})
        if self.mutations is not None:
            kw["mutations"] = tuple(Mutation(m.time, m.kind, m.value, m.nodes, m.position) for m in self.mutations)
        kw["local_dt"] = dataclasses.replace(LocalDtConfig(), **_merge(self.local_dt))
        if self.seed is not None:
            kw["seed"] = self.seed
        return dataclasses.replace(FidelityConfig(), **kw)


# -- power control ------------------------------------------------------------------------------------

class PowerProtocol(Section):
    mac: Literal["pmac"] = "pmac"
    power_control: list[Literal["fixed", "relink", "dt"]] | None = None
    slot_length_s: float | None = Field(None, gt=0)
    packet_size: int | None = Field(None, gt=0)
    rts_bytes: int | None = Field(None, gt=0)
    max_power_w: float | None = Field(None, gt=0)


class PowerLink(Section):
    link_distance_m: float | None = Field(None, gt=0)
    base_power_w: float | None = Field(None, gt=0)
    power_slope: float | None = Field(None, ge=0)
    framing: Framing | None = None


class PowerInterference(Section):
    levels: list[float] | None = None
    level_duration_s: float | None = Field(None, gt=0)


class PowerDt(Section):
    target_loss: float | None = Field(None, gt=0, lt=1)
    ber_threshold: float | None = Field(None, gt=0, lt=1)
    loss_window: int | None = Field(None, ge=1)
    compute_delay_s: float | None = Field(None, ge=0)


class PowerControlScenario(Section):
    experiment: Literal["power_control"]
    seed: int | None = None
    out: str | None = None
    protocol: PowerProtocol = PowerProtocol()
    link: PowerLink = PowerLink()
    interference: PowerInterference = PowerInterference()
    local_dt: PowerDt = PowerDt()

    def config(self) -> PowerControlConfig:
        kw = _merge(self.protocol, self.link, self.interference, self.local_dt, skip={"mac", "power_control"})
        if self.protocol.power_control is not None:
            kw["methods"] = tuple(self.protocol.power_control)
        if "levels" in kw:
            kw["levels"] = tuple(kw["levels"])
        if self.seed is not None:
            kw["seed"] = self.seed
        return dataclasses.replace(PowerControlConfig(), **kw)


# -- cmfd -------------------------------------------------------------------------------------------------

class CmfdEnv(Section):
    n_auvs: int | None = Field(None, ge=1)
    n_sns: int | None = Field(None, ge=1)
    grid: int | None = Field(None, ge=2)
    horizon: int | None = Field(None, ge=1)


class CmfdSchedule(Section):
    episodes: int | None = Field(None, ge=1)
    real_per_epoch: int | None = Field(None, ge=1)
    epochs: int | None = Field(None, ge=1)
    continuous_episodes: int | None = Field(None, ge=0)


class CmfdHyper(Section):
    batch: int | None = Field(None, ge=1)
    gamma: float | None = Field(None, ge=0, lt=1)
    lr: float | None = Field(None, gt=0)
    actor_lr: float | None = Field(None, gt=0)
    hidden: int | None = Field(None, ge=1)
    embed: int | None = Field(None, ge=1)
    eps_start: float | None = Field(None, ge=0, le=1)
    eps_end: float | None = Field(None, ge=0, le=1)
    eps_anneal: int | None = Field(None, ge=1)
    target_interval: int | None = Field(None, ge=1)
    policy_target_interval: int | None = Field(None, ge=1)
    value_target_interval: int | None = Field(None, ge=1)
    train_every: int | None = Field(None, ge=1)
    buffer_capacity: int | None = Field(None, ge=1)
    sigma: float | None = Field(None, ge=0)


class CmfdEvaluation(Section):
    seeds: list[int] | None = None
    eval_episodes: int | None = Field(None, ge=1)
    tolerance: float | None = Field(None, ge=0)
    max_real_fraction: float | None = Field(None, gt=0, le=1)


class CmfdPatching(Section):
    upload_loss: float | None = Field(None, ge=0, lt=1)
    patch_episodes: int | None = Field(None, ge=1)
    min_patched_fraction: float | None = Field(None, ge=0, le=1)


class CmfdScenario(Section):
    experiment: Literal["cmfd_training"]
    seed: int | None = None
    out: str | None = None
    env: CmfdEnv = CmfdEnv()
    schedule: CmfdSchedule = CmfdSchedule()
    hyperparameters: CmfdHyper = CmfdHyper()
    evaluation: CmfdEvaluation = CmfdEvaluation()
    patching: CmfdPatching = CmfdPatching()

    def config(self) -> CmfdConfig:
        base = CmfdConfig()
        kw = _merge(self.env, self.schedule, self.evaluation, self.patching)
        if "seeds" in kw:
            kw["seeds"] = tuple(kw["seeds"])
        kw["train"] = dataclasses.replace(base.train, **_merge(self.hyperparameters))
        if self.seed is not None:
            kw["seed"] = self.seed
        return dataclasses.replace(base, **kw)


# -- tnsd ---------------------------------------------------------------------------------------------------

class TnsdTopology(Section):
    scenarios: list[Literal["a", "b", "c", "d"]] | None = None
    area_m: float | None = Field(None, gt=0)
    range_m: float | None = Field(None, gt=0)
    lifetime_scenario: Literal["a", "b", "c", "d"] | None = None


class TnsdCollection(Section):
    power_w: float | None = Field(None, gt=0)
    slot_length_s: float | None = Field(None, gt=0)
    schedule_bytes: int | None = Field(None, gt=0)
    status_bytes: int | None = Field(None, gt=0)


class TnsdMaintenance(Section):
    period_s: float | None = Field(None, gt=0)
    compute_s: float | None = Field(None, ge=0)
    piggyback_bytes: int | None = Field(None, ge=0)


class TnsdScenario(Section):
    experiment: Literal["tnsd_multitask"]
    seed: int | None = None
    out: str | None = None
    topology: TnsdTopology = TnsdTopology()
    collection: TnsdCollection = TnsdCollection()
    maintenance: TnsdMaintenance = TnsdMaintenance()
    # task descriptions are free-form; they are checked when decomposed
    tasks: list[dict[str, Any]] | None = None

    def config(self) -> TnsdConfig:
        kw = _merge(self.topology, self.collection, self.maintenance)
        if "scenarios" in kw:
            kw["scenarios"] = tuple(kw["scenarios"])
        if self.tasks is not None:
            kw["tasks"] = self.tasks
        if self.seed is not None:
            kw["seed"] = self.seed
        return dataclasses.replace(TnsdConfig(), **kw)


Scenario = Annotated[Union[FidelityScenario, PowerControlScenario, CmfdScenario, TnsdScenario],
                     Field(discriminator="experiment")]
KINDS = ("fidelity", "power_control", "cmfd_training", "tnsd_multitask")
_adapter = TypeAdapter(Scenario)


def _merge(*sections: Section, skip: set[str] = frozenset()) -> dict:
    out = {}
    for sec in sections:
        for k, v in sec.model_dump(exclude_none=True).items():
            if k not in skip:
                out[k] = tuple(map(tuple, v)) if k == "framing" else v
    return out


# -- parsing with line numbers ----------------------------------------------------------------------------

def _line_index(text: str) -> dict[tuple, int]:
    """Map each path in the document (keys and list indices) to its 1-based line."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    index: dict[tuple, int] = {}

    def walk(node, path):
        index[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = path + (k.value,)
                index[key] = k.start_mark.line + 1
                if not isinstance(v, yaml.ScalarNode):
                    walk(v, key)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                index[path + (i,)] = v.start_mark.line + 1
                walk(v, path + (i,))

    if root is not None:
        walk(root, ())
    return index


def _locate(index: dict[tuple, int], loc: tuple) -> int:
    # drop the discriminator tag pydantic inserts, then fall back to the nearest known ancestor
    path = tuple(p for p in loc if p not in KINDS)
    while path and path not in index:
        path = path[:-1]
    return index.get(path, 1)


def parse(text: str, name: str = "<scenario>"):
    if name.endswith((".yaml", ".yml")):
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            raise ScenarioError([f"{name}:{mark.line + 1 if mark else 1}: {e}"]) from None
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ScenarioError([f"{name}:{e.lineno}: invalid JSON: {e.msg}"]) from None
    if not isinstance(data, dict):
        raise ScenarioError([f"{name}:1: scenario must be an object"])
    try:
        return _adapter.validate_python(data)
    except ValidationError as e:
        index = _line_index(text)
        msgs = []
        for err in e.errors():
            loc = tuple(err["loc"])
            where = ".".join(str(p) for p in loc if p not in KINDS) or "<root>"
            if err["type"] == "extra_forbidden":
                msg = f"unknown key {str(loc[-1])!r}"
            elif err["type"] == "union_tag_invalid":
                msg = f"experiment must be one of {', '.join(KINDS)}"
                where = "experiment"
            elif err["type"] == "union_tag_not_found":
                msg = "missing 'experiment'"
            else:
                msg = err["msg"]
            line = _locate(index, loc + (("experiment",) if where == "experiment" else ()))
            msgs.append(f"{name}:{line}: {where}: {msg}")
        raise ScenarioError(msgs) from None


def load(path: str | Path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ScenarioError([f"{path}: cannot read: {e.strerror}"]) from None
    return parse(text, str(path))
