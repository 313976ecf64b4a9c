"""In-process chat-completions mock for hermetic tests and offline runs.

The server records every request body, tracks the concurrent-request
high-water mark, and can be scripted to fail, delay, or answer from a
benchmark's own references (the "oracle" responder).
"""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class _Handler(BaseHTTPRequestHandler):
    def log_message(self, *args):  # silence default stderr chatter
        pass

    def do_POST(self):
        owner: MockVlm = self.server.owner  # type: ignore[attr-defined]
        if self.path != "/v1/chat/completions":
            self._respond(404, {"error": "unknown path"})
            return
        length = int(self.headers.get("Content-Length", "0"))
        try:
            payload = json.loads(self.rfile.read(length))
        except json.JSONDecodeError:
            self._respond(400, {"error": "invalid JSON"})
            return

        with owner._lock:
            owner.requests.append(payload)
            owner.call_count += 1
            call_index = owner.call_count
            owner._active += 1
            owner.max_concurrent = max(owner.max_concurrent, owner._active)
        try:
            if owner.latency_s:
                time.sleep(owner.latency_s)
            if owner.auth_token is not None:
                header = self.headers.get("Authorization", "")
                if header != f"Bearer {owner.auth_token}":
                    self._respond(401, {"error": "bad token"})
                    return
            if call_index <= owner.fail_times:
                self._respond(owner.fail_status, {"error": "scripted failure"})
                return
            result = owner.responder(payload)
            if isinstance(result, tuple):
                status, text = result
                if status != 200:
                    self._respond(status, {"error": text})
                    return
            else:
                text = result
            self._respond(200, _completion(text))
        finally:
            with owner._lock:
                owner._active -= 1

    def _respond(self, status: int, body: dict):
        raw = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)


def _completion(text: str) -> dict:
    return {
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {
            "prompt_tokens": 16,
            "completion_tokens": max(1, len(text) // 4),
        },
    }


class MockVlm:
    """Threaded mock endpoint; use as a context manager.

    responder(payload) returns the assistant text, or (status, text) to force
    an HTTP status. fail_times makes the first N calls return fail_status
    regardless of the responder.
    """

    def __init__(self, responder=None, latency_s: float = 0.0, fail_times: int = 0,
                 fail_status: int = 500, auth_token: str | None = None):
        self.responder = responder or (lambda payload: "ok")
        self.latency_s = latency_s
        self.fail_times = fail_times
        self.fail_status = fail_status
        self.auth_token = auth_token
        self.requests: list[dict] = []
        self.call_count = 0
        self.max_concurrent = 0
        self._active = 0
        self._lock = threading.Lock()
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    def start(self) -> "MockVlm":
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
        self._server.owner = self  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None

    def __enter__(self) -> "MockVlm":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    @property
    def base_url(self) -> str:
        assert self._server is not None, "server not started"
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"


def question_of(payload: dict) -> str:
    """The question text inside a chat payload: last text part of the user turn."""
    for message in reversed(payload.get("messages", [])):
        if message.get("role") != "user":
            continue
        content = message.get("content")
        if isinstance(content, str):
            return content
        texts = [part.get("text", "") for part in content if part.get("type") == "text"]
        if texts:
            return texts[-1]
    return ""


def oracle_responder(benchmark: dict):
    """Answer every benchmark question with its own first reference."""
    answers = {
        q["question"]: str(q["references"][0]) for q in benchmark["questions"]
    }

    def respond(payload: dict) -> str:
        question = question_of(payload)
        if question in answers:
            return f"Answer: {answers[question]}"
        return "Answer: unknown"

    return respond


def fixed_responder(text: str):
    return lambda payload: text


def scripted_responder(texts):
    """Reply with texts[i] on the i-th call (cycles when exhausted)."""
    texts = list(texts)
    counter = {"i": 0}
    lock = threading.Lock()

    def respond(payload: dict) -> str:
        with lock:
            i = counter["i"]
            counter["i"] += 1
        return texts[i % len(texts)]

    return respond
