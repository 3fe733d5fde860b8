"""HTTP client implementing the metered-oracle contract against the service.

The client mirrors the server's per-session counter locally and verifies the
two after every query; any disagreement is a hard error because query
accounting is a correctness property. Transient transport failures are
retried a bounded number of times with the same idempotency key, so retries
can never double-count.
"""

from __future__ import annotations

import numpy as np
import httpx

from ..errors import BudgetExhaustedError, DesyncError, TransportError
from ..models import MeteredOracle
from . import schemas

RETRIES = 3


class RemoteOracle(MeteredOracle):
    def __init__(
        self,
        endpoint: str,
        budget: int | None = None,
        session_id: str | None = None,
        transport: httpx.BaseTransport | None = None,
        timeout: float = 30.0,
    ):
        super().__init__(budget=None)  # budget is enforced server-side
        self.endpoint = endpoint.rstrip("/")
        self._client = httpx.Client(base_url=self.endpoint, transport=transport, timeout=timeout)
        if session_id is None:
            resp = self._post("/v1/session", schemas.SessionRequest(budget=budget).model_dump())
            payload = schemas.SessionResponse(**resp.json())
            session_id = payload.session_id
            self._budget = payload.budget
        else:
            self._budget = budget
        self.session_id = session_id

    def close(self):
        self._client.close()

    def _post(self, path: str, payload: dict) -> httpx.Response:
        last_exc: Exception | None = None
        for _ in range(RETRIES):
            try:
                return self._client.post(path, json=payload)
            except httpx.TransportError as exc:
                last_exc = exc
        raise TransportError(f"service unreachable after {RETRIES} attempts: {last_exc}")

    def decide(self, x: np.ndarray) -> int:
        req = schemas.DecideRequest(
            session_id=self.session_id,
            x=schemas.encode_vector(np.asarray(x, dtype=np.float64).reshape(-1)),
            key=f"q{self._count}",  # one key per query index
        )
        resp = self._post("/v1/decide", req.model_dump())
        if resp.status_code == 429:
            body = resp.json()
            server_used = int(body.get("queries_used", self._count))
            if server_used != self._count:
                raise DesyncError(
                    f"server counted {server_used} queries, client counted {self._count}"
                )
            raise BudgetExhaustedError("server query budget exhausted", self._count)
        if resp.status_code != 200:
            raise TransportError(f"decide failed with HTTP {resp.status_code}: {resp.text}")
        payload = schemas.DecideResponse(**resp.json())
        with self._lock:
            self._count += 1
            local = self._count
        if payload.queries_used != local:
            raise DesyncError(
                f"server counted {payload.queries_used} queries, client counted {local}"
            )
        return payload.sign

    def server_queries_used(self) -> int:
        resp = self._client.get("/v1/stats")
        stats = schemas.StatsResponse(**resp.json())
        return stats.sessions[self.session_id].queries_used
