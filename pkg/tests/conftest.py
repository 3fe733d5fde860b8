import asyncio

import httpx


class SyncASGITransport(httpx.BaseTransport):
    """Drive an ASGI app from a synchronous httpx.Client.

    httpx's ASGITransport is async-only; this wrapper runs each request on a
    private event loop and materializes the body so tests can exercise the
    real request path without sockets.
    """

    def __init__(self, app):
        self._inner = httpx.ASGITransport(app=app)
        self._loop = asyncio.new_event_loop()

    def handle_request(self, request):
        async def roundtrip():
            response = await self._inner.handle_async_request(request)
            body = await response.aread()
            await response.aclose()
            return response, body

        response, body = self._loop.run_until_complete(roundtrip())
        return httpx.Response(
            status_code=response.status_code, headers=response.headers, content=body
        )

    def close(self):
        self._loop.close()
