"""HTTP face of the harness: scenarios in, reports out.

Everything is stateless — each request parses its config, runs the
simulation, and returns the rendered report, so the service can sit behind
anything that load-balances.  The CLI mounts this app in-process by default.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..harness.baseline import run_baseline, compare
from ..harness.config import ConfigError, bundled_scenarios, parse_config, scenario_path
from ..harness.fuzz import run_fuzz
from ..harness.history import check_strict_serializability, history_from_trace
from ..harness.rebalance import plan as rebalance_plan
from ..harness.runner import run_scenario
from .models import (
    BaselineRequest,
    BaselineResponse,
    CheckRequest,
    CheckResponse,
    FuzzFailureModel,
    FuzzRequest,
    FuzzResponse,
    RebalanceRequest,
    RebalanceResponse,
    RunRequest,
    RunResponse,
    ScenarioEntry,
    ScenarioList,
)

app = FastAPI(title="consus-sim", version=__version__)


def _parse(config_text: str):
    try:
        return parse_config(config_text)
    except ConfigError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.get("/scenarios", response_model=ScenarioList)
def scenarios() -> ScenarioList:
    entries = [
        ScenarioEntry(name=name,
                      config=scenario_path(name).read_text(encoding="utf-8"))
        for name in bundled_scenarios()
    ]
    return ScenarioList(scenarios=entries)


@app.post("/run", response_model=RunResponse)
def run(req: RunRequest) -> RunResponse:
    cfg = _parse(req.config)
    report = run_scenario(cfg, with_trace=req.trace)
    return RunResponse(
        ok=report.ok,
        exit_code=report.exit_code,
        report=report.render(),
        checks=report.checks,
        hops=report.hops,
        trace=report.trace if req.trace else None,
    )


@app.post("/baseline", response_model=BaselineResponse)
def baseline(req: BaselineRequest) -> BaselineResponse:
    cfg = _parse(req.config)
    if not 1 <= req.coordinator <= cfg.topo.n_dcs:
        raise HTTPException(status_code=400, detail="coordinator out of range")
    consus, base, comparison = compare(cfg, req.coordinator)
    ok = comparison["consus_beats_baseline"] and comparison["noncoordinator_learn_ge_4"]
    return BaselineResponse(
        ok=ok,
        report=base.render(),
        consus_report=consus.render(),
        comparison=comparison,
    )


@app.post("/check", response_model=CheckResponse)
def check(req: CheckRequest) -> CheckResponse:
    history = history_from_trace(req.trace)
    ok, result = check_strict_serializability(history)
    return CheckResponse(
        ok=ok,
        transactions=len(history),
        order=result if ok else None,
        witness=None if ok else {k: v for k, v in result.items() if k != "rows"},
    )


@app.post("/rebalance", response_model=RebalanceResponse)
def rebalance(req: RebalanceRequest) -> RebalanceResponse:
    try:
        return RebalanceResponse(plan=rebalance_plan(req.mapfile))
    except (ConfigError, ValueError) as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


@app.post("/fuzz", response_model=FuzzResponse)
def fuzz(req: FuzzRequest) -> FuzzResponse:
    cfg = _parse(req.config)
    if req.seed_end < req.seed_start:
        raise HTTPException(status_code=400, detail="empty seed range")
    result = run_fuzz(cfg, range(req.seed_start, req.seed_end + 1))
    return FuzzResponse(
        ok=result.ok,
        report=result.render(),
        failures=[
            FuzzFailureModel(
                seed=f.seed,
                checks=f.checks,
                witness_config=f.witness_config,
                report=f.report,
            )
            for f in result.failures
        ],
    )
