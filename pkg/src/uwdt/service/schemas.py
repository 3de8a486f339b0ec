from __future__ import annotations

from typing import Any

from pydantic import BaseModel, Field

from ..report import RunReport


class RunRequest(BaseModel):
    scenario_text: str
    filename: str = "<scenario>.json"
    seed: int | None = None
    out_dir: str | None = None


class RunResponse(BaseModel):
    report: RunReport
    out_dir: str


class CompareRequest(BaseModel):
    report: RunReport
    golden: dict[str, Any]
    tol: float = Field(1e-6, ge=0)


class EmitRequest(BaseModel):
    figures_csv: str
    fig: str


class EmitResponse(BaseModel):
    fig: str
    csv: str
    rows: int


class ConfigErrorBody(BaseModel):
    errors: list[str]

