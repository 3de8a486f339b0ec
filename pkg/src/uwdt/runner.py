"""Run a scenario file end to end and write its report."""
from __future__ import annotations

from pathlib import Path

from .experiments.cmfd_training import run_cmfd
from .experiments.fidelity import run_fidelity
from .experiments.power_control import run_power_control
from .experiments.tnsd_multitask import run_tnsd
from .report import RunReport, write_run
from .scenario import ScenarioError, parse
from .tnsd.tasks import decompose, extract_demand

RUNNERS = {
    "fidelity": lambda cfg: run_fidelity(cfg)[0],
    "power_control": run_power_control,
    "cmfd_training": run_cmfd,
    "tnsd_multitask": run_tnsd,
}


def prepare(scenario, name: str):
    """Build the experiment config, surfacing value errors that the schema
    alone cannot catch (task descriptions, epoch arithmetic) as config errors."""
    try:
        cfg = scenario.config()
        if scenario.experiment == "tnsd_multitask":
            for i, desc in enumerate(cfg.tasks):
                try:
                    extract_demand(decompose(desc))
                except (ValueError, KeyError, TypeError) as e:
                    raise ValueError(f"tasks.{i}: {e}") from None
        if scenario.experiment == "cmfd_training":
            cfg.hybrid_schedule()
    except ValueError as e:
        raise ScenarioError([f"{name}:1: {e}"]) from None
    return cfg


def run_text(text: str, name: str = "<scenario>", seed: int | None = None,
             out_dir: str | Path | None = None) -> tuple[RunReport, Path]:
    """Validate, run and write.  ``seed`` and ``out_dir`` override the file."""
    scenario = parse(text, name)
    if seed is not None:
        scenario = scenario.model_copy(update={"seed": seed})
    cfg = prepare(scenario, name)
    out = RUNNERS[scenario.experiment](cfg)
    target = Path(out_dir or scenario.out or Path("runs") / f"{scenario.experiment}-seed{cfg.seed}")
    echo = scenario.model_dump(mode="json", exclude={"out"})
    echo["seed"] = cfg.seed
    return write_run(out, target, echo, cfg.seed), target


def run(path: str | Path, seed: int | None = None, out_dir: str | Path | None = None) -> tuple[RunReport, Path]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ScenarioError([f"{path}: cannot read: {e.strerror}"]) from None
    return run_text(text, str(path), seed, out_dir)
