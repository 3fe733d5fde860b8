"""Wire models for the decision-oracle service.

Inputs travel as exact decimal strings (Python ``repr`` of each float64, the
shortest round-trip form), so the server reconstructs bit-identical inputs and
remote trajectories can match in-process ones exactly.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class SessionRequest(BaseModel):
    budget: int | None = Field(default=None, ge=0, description="Max queries for this session")


class SessionResponse(BaseModel):
    session_id: str
    budget: int | None


class DecideRequest(BaseModel):
    session_id: str
    x: list[str] = Field(description="Input vector, one repr'd float64 per entry")
    key: str | None = Field(
        default=None,
        description="Idempotency key; retries with the same key are not double-counted",
    )


class DecideResponse(BaseModel):
    sign: int
    queries_used: int
    budget_remaining: int | None = None


class OverBudgetResponse(BaseModel):
    code: str = "over_budget"
    queries_used: int
    budget_remaining: int = 0


class SessionStats(BaseModel):
    queries_used: int
    budget: int | None


class StatsResponse(BaseModel):
    model_name: str
    budget_default: int | None
    sessions: dict[str, SessionStats]


class ResetRequest(BaseModel):
    session_id: str | None = None


class ResetResponse(BaseModel):
    cleared_sessions: int


class ErrorBody(BaseModel):
    code: str
    detail: str = ""


def encode_vector(x) -> list[str]:
    return [repr(float(v)) for v in x]


def decode_vector(values: list[str]) -> list[float]:
    return [float(v) for v in values]
