"""In-process HTTP stub for the remote reasoner/tool protocol.

By default the stub answers like the deterministic simulator: tool outputs
name their tool index, the reasoner recovers the selection from them and
replies with the gold answer when the simulator profile says it would be
correct. Scripted faults exercise the client's retry and timeout paths.
"""

from __future__ import annotations

import json
import re
import threading
import time
from collections import defaultdict, deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Iterable, Mapping

from ..core import ToolSelection
from .simulator import SimProfile

_TOOL_TAG = re.compile(r"^\[tool (\d+)\]")

# Scripted behaviours consumed in order per route: "ok", "timeout", "malformed", "error".
Fault = str


class StubServer:
    def __init__(
        self,
        num_tools: int,
        gold: Mapping[str, str] | None = None,
        profiles: Mapping[str, SimProfile] | None = None,
        tool_output: Callable[[int, str], str] | None = None,
        delay: float = 0.0,
        timeout_sleep: float = 1.0,
        host: str = "127.0.0.1",
    ):
        self.num_tools = num_tools
        self.gold = dict(gold or {})
        self.profiles = dict(profiles or {})
        self.tool_output = tool_output or (lambda i, qid: f"[tool {i}] summary for {qid}")
        self.delay = delay
        self.timeout_sleep = timeout_sleep
        self.faults: dict[str, deque[Fault]] = defaultdict(deque)
        self.calls: dict[str, int] = defaultdict(int)
        self.in_flight = 0
        self.peak_in_flight = 0
        self._lock = threading.Lock()
        self._server = ThreadingHTTPServer((host, 0), self._handler())
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def reason_url(self) -> str:
        return self.url + "/reason"

    @property
    def tool_url(self) -> str:
        return self.url + "/tool"

    def script(self, route: str, faults: Iterable[Fault]) -> None:
        self.faults[route].extend(faults)

    def start(self) -> "StubServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "StubServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    # -- behaviour ------------------------------------------------------------

    def answer(self, body: dict) -> str:
        qid = body["query_id"]
        gold = self.gold.get(qid, "")
        if qid not in self.profiles:
            return gold
        indices = set()
        for out in body.get("tool_outputs", []):
            m = _TOOL_TAG.match(out)
            if m:
                indices.add(int(m.group(1)))
        selection = ToolSelection(tuple(sorted(indices)))
        ok = self.profiles[qid].logit(selection) >= 0.0
        return gold if ok else "no answer"

    def _handler(self):
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args) -> None:
                pass

            def _send(self, status: int, payload: bytes) -> None:
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def do_POST(self) -> None:
                route = self.path.rstrip("/")
                length = int(self.headers.get("Content-Length", 0))
                with stub._lock:
                    stub.calls[route] += 1
                    stub.in_flight += 1
                    stub.peak_in_flight = max(stub.peak_in_flight, stub.in_flight)
                    fault = stub.faults[route].popleft() if stub.faults[route] else "ok"
                try:
                    body = json.loads(self.rfile.read(length) or b"{}")
                    if stub.delay:
                        time.sleep(stub.delay)
                    if fault == "timeout":
                        time.sleep(stub.timeout_sleep)
                    if fault == "malformed":
                        self._send(200, b"{not json")
                        return
                    if fault == "error":
                        self._send(500, b'{"error": "scripted failure"}')
                        return
                    if route == "/reason":
                        self._send(200, json.dumps({"answer": stub.answer(body)}).encode())
                    elif route == "/tool":
                        idx = body.get("tool_index")
                        if not isinstance(idx, int) or not 0 <= idx < stub.num_tools:
                            self._send(404, json.dumps({"error": f"unknown tool_index {idx!r}"}).encode())
                            return
                        self._send(200, json.dumps({"output": stub.tool_output(idx, body["query_id"])}).encode())
                    else:
                        self._send(404, b'{"error": "unknown route"}')
                except (BrokenPipeError, ConnectionResetError):
                    pass
                finally:
                    with stub._lock:
                        stub.in_flight -= 1

        return Handler
