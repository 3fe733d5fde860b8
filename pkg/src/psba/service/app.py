"""FastAPI app exposing a metered, label-only decision oracle.

The server holds one classifier and one attack spec; clients open sessions
and spend queries against per-session counters. Decisions are deterministic
functions of (model, spec, x). Each query may carry an idempotency key: a
retry with a key the session has already answered returns the stored response
without touching the counter, which keeps query accounting exact across
transport retries.

Sessions run concurrently; queries within one session are serialized by the
session lock, which is what defines the counter order.
"""

from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from ..errors import ShapeMismatchError
from ..models import AttackSpec, Classifier, sign
from . import schemas


@dataclass
class _Session:
    budget: int | None
    queries_used: int = 0
    answered: dict[str, schemas.DecideResponse] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)


class OracleState:
    def __init__(self, model: Classifier, spec: AttackSpec, budget: int | None, delay_s: float = 0.0):
        self.model = model
        self.spec = spec
        self.default_budget = budget
        self.delay_s = delay_s
        self.sessions: dict[str, _Session] = {}
        self._ids = itertools.count(1)
        self._lock = threading.Lock()

    def new_session(self, budget: int | None) -> tuple[str, _Session]:
        with self._lock:
            sid = f"s{next(self._ids)}"
            session = _Session(budget=budget if budget is not None else self.default_budget)
            self.sessions[sid] = session
            return sid, session


def _error(status: int, code: str, detail: str = "") -> JSONResponse:
    return JSONResponse(
        status_code=status, content=schemas.ErrorBody(code=code, detail=detail).model_dump()
    )


def dump_stats(state: OracleState) -> str:
    """Per-session query counts as JSON, for the optional shutdown dump."""
    import json

    return json.dumps(
        {
            "budget_default": state.default_budget,
            "sessions": {
                sid: {"queries_used": s.queries_used, "budget": s.budget}
                for sid, s in state.sessions.items()
            },
        },
        indent=2,
        sort_keys=True,
    ) + "\n"


def create_app(
    model: Classifier,
    spec: AttackSpec,
    budget: int | None = None,
    delay_s: float = 0.0,
    model_name: str = "model",
) -> FastAPI:
    app = FastAPI(title="psba decision oracle", version="1")
    state = OracleState(model, spec, budget, delay_s)
    app.state.oracle = state

    @app.exception_handler(RequestValidationError)
    async def malformed(_, exc):
        return _error(422, "malformed_request", str(exc.errors()[:3]))

    @app.post("/v1/session", response_model=schemas.SessionResponse)
    def open_session(req: schemas.SessionRequest) -> schemas.SessionResponse:
        sid, session = state.new_session(req.budget)
        return schemas.SessionResponse(session_id=sid, budget=session.budget)

    @app.post("/v1/decide")
    def decide(req: schemas.DecideRequest):
        session = state.sessions.get(req.session_id)
        if session is None:
            return _error(404, "unknown_session", req.session_id)
        try:
            x = np.array(schemas.decode_vector(req.x), dtype=np.float64)
        except ValueError as exc:
            return _error(400, "malformed_vector", str(exc))
        if x.size != state.model.input_dim:
            return _error(
                400, "bad_dimension", f"expected {state.model.input_dim}, got {x.size}"
            )
        with session.lock:
            if req.key is not None and req.key in session.answered:
                return session.answered[req.key]
            if session.budget is not None and session.queries_used >= session.budget:
                return JSONResponse(
                    status_code=429,
                    content=schemas.OverBudgetResponse(
                        queries_used=session.queries_used
                    ).model_dump(),
                )
            if state.delay_s > 0:
                time.sleep(state.delay_s)
            try:
                answer = sign(state.model, state.spec, x)
            except ShapeMismatchError as exc:
                return _error(400, "bad_dimension", str(exc))
            session.queries_used += 1
            remaining = (
                None if session.budget is None else session.budget - session.queries_used
            )
            resp = schemas.DecideResponse(
                sign=answer, queries_used=session.queries_used, budget_remaining=remaining
            )
            if req.key is not None:
                session.answered[req.key] = resp
            return resp

    @app.get("/v1/stats", response_model=schemas.StatsResponse)
    def stats() -> schemas.StatsResponse:
        return schemas.StatsResponse(
            model_name=model_name,
            budget_default=state.default_budget,
            sessions={
                sid: schemas.SessionStats(queries_used=s.queries_used, budget=s.budget)
                for sid, s in state.sessions.items()
            },
        )

    @app.post("/v1/reset", response_model=schemas.ResetResponse)
    def reset(req: schemas.ResetRequest) -> schemas.ResetResponse:
        if req.session_id is not None:
            existed = int(req.session_id in state.sessions)
            state.sessions.pop(req.session_id, None)
            return schemas.ResetResponse(cleared_sessions=existed)
        count = len(state.sessions)
        state.sessions.clear()
        return schemas.ResetResponse(cleared_sessions=count)

    return app
