"""Chat-completion client and scripted mock server tests."""

import json
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from threading import Thread

import pytest

from forgelab.llm_client import (ChatRequest, ChatResponse, ProtocolError,
                                 StatusError, TransportError, complete,
                                 mock_server)


def _req(content="hi"):
    return ChatRequest(model="m", messages=[{"role": "user", "content": content}],
                       timeout=5.0)


def test_chat_request_validation():
    with pytest.raises(ValueError):
        ChatRequest(model="m", messages=[])
    with pytest.raises(ValueError):
        ChatRequest(model="m", messages=[{"role": "oracle", "content": "x"}])
    with pytest.raises(ValueError):
        ChatRequest(model="m", messages=[{"role": "user", "content": 3}])
    with pytest.raises(ValueError):
        ChatRequest(model="m", messages=[{"role": "assistant", "content": "x"}])
    with pytest.raises(ValueError):
        ChatRequest(model="m", messages=[{"role": "user", "content": "x"}],
                    temperature=-1.0)


def test_chat_response_validation():
    with pytest.raises(ValueError):
        ChatResponse(content="", finish_reason="stop", latency=0.1)


def test_mock_complete_script_order_and_recording():
    with mock_server(["first", "second"]) as server:
        a = complete(server.endpoint, _req("one"))
        b = complete(server.endpoint, _req("two"))
        c = complete(server.endpoint, _req("three"))  # script repeats last
        assert (a.content, b.content, c.content) == ("first", "second", "second")
        assert a.finish_reason == "stop"
        assert len(server.requests) == 3
        assert server.requests[0]["messages"][0]["content"] == "one"
        assert server.requests[0]["model"] == "m"


def _one_shot_server(handler_cls):
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler_cls)
    Thread(target=server.serve_forever, daemon=True).start()
    return server, f"http://127.0.0.1:{server.server_port}/"


def test_status_error_not_retried():
    hits = []

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            hits.append(1)
            self.rfile.read(int(self.headers.get("Content-Length", 0)))
            body = b'{"error": "boom"}'
            self.send_response(500)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):
            pass

    server, endpoint = _one_shot_server(Handler)
    try:
        with pytest.raises(StatusError) as err:
            complete(endpoint, _req(), retries=2)
        assert err.value.status == 500
        assert len(hits) == 1  # HTTP errors are never retried
    finally:
        server.shutdown()
        server.server_close()


def test_protocol_error_on_malformed_body():
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            self.rfile.read(int(self.headers.get("Content-Length", 0)))
            body = json.dumps({"unexpected": "shape"}).encode()
            self.send_response(200)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):
            pass

    server, endpoint = _one_shot_server(Handler)
    try:
        with pytest.raises(ProtocolError) as err:
            complete(endpoint, _req())
        assert "unexpected" in err.value.body
    finally:
        server.shutdown()
        server.server_close()


def test_transport_error_after_retries():
    # grab a port that is then closed again
    probe = ThreadingHTTPServer(("127.0.0.1", 0), BaseHTTPRequestHandler)
    port = probe.server_port
    probe.server_close()
    with pytest.raises(TransportError):
        complete(f"http://127.0.0.1:{port}/", _req(), retries=1)


def test_mock_server_requires_script():
    with pytest.raises(ValueError):
        mock_server([])
