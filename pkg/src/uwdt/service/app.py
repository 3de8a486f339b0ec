"""HTTP front end over the runner: the CLI talks to this, in process or remote."""
from __future__ import annotations

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..report import CompareResult, UnknownFigure, compare, emit_fig_data
from ..runner import run_text
from ..scenario import ScenarioError
from .schemas import CompareRequest, ConfigErrorBody, EmitRequest, EmitResponse, RunRequest, RunResponse

app = FastAPI(title="uwdt", version=__version__)

CONFIG_ERROR = 422


def _config_error(messages: list[str]) -> JSONResponse:
    return JSONResponse(ConfigErrorBody(errors=messages).model_dump(), status_code=CONFIG_ERROR)


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/runs", response_model=RunResponse, responses={CONFIG_ERROR: {"model": ConfigErrorBody}})
def create_run(req: RunRequest):
    try:
        report, out_dir = run_text(req.scenario_text, req.filename, req.seed, req.out_dir)
    except ScenarioError as e:
        return _config_error(e.messages)
    return RunResponse(report=report, out_dir=str(out_dir))


@app.post("/compare", response_model=CompareResult)
def compare_report(req: CompareRequest) -> CompareResult:
    return compare(req.report, req.golden, req.tol)


@app.post("/emit", response_model=EmitResponse, responses={CONFIG_ERROR: {"model": ConfigErrorBody}})
def emit(req: EmitRequest):
    try:
        text = emit_fig_data(req.figures_csv, req.fig)
    except UnknownFigure as e:
        return _config_error([e.args[0]])
    return EmitResponse(fig=req.fig, csv=text, rows=text.count("\n") - 1)
