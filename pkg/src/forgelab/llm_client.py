"""HTTP client for an external chat-completion service and a deterministic
scripted mock server used in tests and the chat REPL/UI.

Wire protocol (vendor-neutral): POST JSON {"model", "messages",
"temperature"}; reply JSON {"content", "finish_reason"}. The client retries
transport errors idempotently up to 2 times and never retries HTTP >= 400.
"""

from __future__ import annotations

import json
import socket
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

VALID_ROLES = ("system", "user", "assistant")


class LlmClientError(Exception):
    """Base class for chat-completion client failures."""


class TransportError(LlmClientError):
    """Endpoint unreachable or connection dropped (after retries)."""


class CompletionTimeout(LlmClientError):
    """No response within the request timeout."""


class ProtocolError(LlmClientError):
    """Response body was not the expected JSON shape; carries the raw body."""

    def __init__(self, message: str, body: str):
        super().__init__(f"{message}: {body[:200]!r}")
        self.body = body


class StatusError(LlmClientError):
    """HTTP status >= 400."""

    def __init__(self, status: int, body: str):
        super().__init__(f"HTTP {status}: {body[:200]!r}")
        self.status = status
        self.body = body


@dataclass
class ChatRequest:
    model: str
    messages: list[dict]
    temperature: float = 0.0
    timeout: float = 10.0

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        for m in self.messages:
            if m.get("role") not in VALID_ROLES:
                raise ValueError(f"invalid role {m.get('role')!r}")
            if not isinstance(m.get("content"), str):
                raise ValueError("message content must be a string")
        non_system = [m for m in self.messages if m["role"] != "system"]
        if non_system and non_system[0]["role"] != "user":
            raise ValueError("first non-system message must have role 'user'")


@dataclass
class ChatResponse:
    content: str
    finish_reason: str
    latency: float

    def __post_init__(self):
        if self.finish_reason == "stop" and not self.content:
            raise ValueError("content must be non-empty when finish_reason is 'stop'")


def complete(endpoint: str, request: ChatRequest, retries: int = 2) -> ChatResponse:
    """POST the request; retry transport errors up to `retries` extra times."""
    payload = json.dumps({
        "model": request.model,
        "messages": request.messages,
        "temperature": request.temperature,
    }).encode("utf-8")
    last: Exception | None = None
    t0 = time.monotonic()
    for _ in range(1 + retries):
        req = urllib.request.Request(
            endpoint, data=payload,
            headers={"Content-Type": "application/json"}, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=request.timeout) as resp:
                body = resp.read().decode("utf-8")
        except urllib.error.HTTPError as err:
            raise StatusError(err.code, err.read().decode("utf-8", "replace")) from err
        except TimeoutError as err:
            raise CompletionTimeout(f"no response within {request.timeout}s") from err
        except urllib.error.URLError as err:
            if isinstance(err.reason, (socket.timeout, TimeoutError)):
                raise CompletionTimeout(f"no response within {request.timeout}s") from err
            last = err
            continue
        except (ConnectionError, socket.error) as err:
            last = err
            continue
        latency = time.monotonic() - t0
        try:
            doc = json.loads(body)
            content = doc["content"]
            finish = doc["finish_reason"]
        except (json.JSONDecodeError, KeyError, TypeError) as err:
            raise ProtocolError("malformed completion response", body) from err
        return ChatResponse(content=content, finish_reason=finish, latency=latency)
    raise TransportError(f"endpoint {endpoint} unreachable after {1 + retries} attempts: {last}")


# ---------------------------------------------------------------------------
# Scripted mock server


@dataclass
class MockLlmServer:
    """Serves scripted responses in order, repeating the last; records every
    received request body for assertions. Thread-safe."""

    script: list[str]
    endpoint: str = field(init=False)
    requests: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if not self.script:
            raise ValueError("mock script must contain at least one response")
        self._lock = threading.Lock()
        self._served = 0
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802 (http.server API)
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                try:
                    doc = json.loads(raw.decode("utf-8"))
                except json.JSONDecodeError:
                    doc = {"raw": raw.decode("utf-8", "replace")}
                with outer._lock:
                    outer.requests.append(doc)
                    idx = min(outer._served, len(outer.script) - 1)
                    outer._served += 1
                body = json.dumps({"content": outer.script[idx],
                                   "finish_reason": "stop"}).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):  # silence default stderr logging
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        self.endpoint = f"http://127.0.0.1:{self._server.server_port}/"

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)

    def __enter__(self) -> "MockLlmServer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def mock_server(script: list[str]) -> MockLlmServer:
    return MockLlmServer(list(script))
