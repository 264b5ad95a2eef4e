"""Request/response schemas for the scenario service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class RunRequest(BaseModel):
    config: str = Field(description="scenario config text")
    trace: bool = Field(default=False, description="include the event trace")


class RunResponse(BaseModel):
    ok: bool
    exit_code: int
    report: str
    checks: dict
    hops: dict
    trace: Optional[str] = None


class BaselineRequest(BaseModel):
    config: str
    coordinator: int = 1


class BaselineResponse(BaseModel):
    ok: bool
    report: str
    consus_report: str
    comparison: dict


class CheckRequest(BaseModel):
    trace: str = Field(description="trace text whose 'done' rows carry the history")


class CheckResponse(BaseModel):
    ok: bool
    transactions: int
    order: Optional[list] = None
    witness: Optional[dict] = None


class RebalanceRequest(BaseModel):
    mapfile: str


class RebalanceResponse(BaseModel):
    plan: str


class FuzzRequest(BaseModel):
    config: str
    seed_start: int = 0
    seed_end: int = 199


class FuzzFailureModel(BaseModel):
    seed: int
    checks: dict
    witness_config: str
    report: str


class FuzzResponse(BaseModel):
    ok: bool
    report: str
    failures: list[FuzzFailureModel]


class ScenarioEntry(BaseModel):
    name: str
    config: str


class ScenarioList(BaseModel):
    scenarios: list[ScenarioEntry]
