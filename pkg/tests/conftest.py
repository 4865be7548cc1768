from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from wee import dsl
from wee.engine import RunOptions, WorkflowInstance


class CountingStubServer:
    """Local HTTP stub that counts POSTs per path and serves canned results.

    `responses` maps a path (e.g. "/airline") to the JSON "result" object;
    `delays` holds per-path artificial response delays in seconds.
    """

    def __init__(self):
        self.counts: dict[str, int] = {}
        self.responses: dict[str, dict] = {}
        self.delays: dict[str, float] = {}
        self.status_codes: dict[str, int] = {}
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                self.rfile.read(length)
                with stub._lock:
                    stub.counts[self.path] = stub.counts.get(self.path, 0) + 1
                delay = stub.delays.get(self.path, 0)
                if delay:
                    time.sleep(delay)
                status = stub.status_codes.get(self.path, 200)
                body = json.dumps({"result": stub.responses.get(self.path, {})}).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.port = self.server.server_address[1]
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    def url(self, path: str) -> str:
        return f"http://127.0.0.1:{self.port}{path}"

    def total(self) -> int:
        with self._lock:
            return sum(self.counts.values())

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def stub_server():
    server = CountingStubServer()
    yield server
    server.close()


def run_source(source: str, handler, **options) -> WorkflowInstance:
    ast = dsl.parse(source)
    diagnostics = dsl.validate(ast)
    assert not diagnostics, diagnostics
    instance = WorkflowInstance(ast, handler, RunOptions(**options))
    instance.run()
    return instance


def starts(instance: WorkflowInstance, position: str | None = None) -> list:
    return [
        r
        for r in instance.log.records
        if r.kind == "activity_start" and (position is None or r.position == position)
    ]


def kinds(instance: WorkflowInstance) -> list[str]:
    return [r.kind for r in instance.log.records]
