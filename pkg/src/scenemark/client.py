"""Chat-completions HTTP client: bounded retries, bounded concurrency.

Requests go to POST {base_url}/v1/chat/completions in the de-facto
chat-completions JSON shape, with images inlined as base64 PNG data URLs.
Serialization uses a fixed field order so identical requests produce
identical bytes (request logs can be replayed and cached by body hash).
"""

from __future__ import annotations

import base64
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import requests

from .prompts import ImageAttachment, VlmRequest


class VlmError(RuntimeError):
    """Request failed for good; status is the HTTP code when one applies."""

    def __init__(self, message: str, status: int | None = None, attempts: int = 1):
        self.status = status
        self.attempts = attempts
        super().__init__(message)


class VlmAuthError(VlmError):
    pass


class VlmPayloadError(VlmError):
    pass


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str
    auth_env: str | None = None
    timeout_s: float = 60.0
    max_in_flight: int = 4
    max_attempts: int = 3
    backoff_base_s: float = 0.25
    max_payload_bytes: int = 20_000_000
    log_path: str | None = None

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


@dataclass(frozen=True)
class VlmResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    latency_ms: float
    attempts: int


@dataclass(frozen=True)
class VlmFailure:
    """A failed slot in a batch; mirrors the VlmError that caused it."""

    message: str
    status: int | None
    attempts: int


def serialize_request(request: VlmRequest, config: EndpointConfig) -> dict:
    """The wire payload dict, field order fixed."""
    content = []
    for part in request.parts:
        if isinstance(part, ImageAttachment):
            encoded = base64.b64encode(part.png).decode("ascii")
            content.append(
                {
                    "type": "image_url",
                    "image_url": {"url": f"data:image/png;base64,{encoded}"},
                }
            )
        else:
            content.append({"type": "text", "text": str(part)})
    return {
        "model": config.model,
        "messages": [
            {"role": "system", "content": request.system},
            {"role": "user", "content": content},
        ],
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    }


def request_body(request: VlmRequest, config: EndpointConfig) -> bytes:
    return json.dumps(serialize_request(request, config), ensure_ascii=False).encode("utf-8")


_log_lock = threading.Lock()


def _append_log(path: str, entry: dict) -> None:
    line = json.dumps(entry, ensure_ascii=False)
    with _log_lock:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")


def _headers(config: EndpointConfig) -> dict:
    headers = {"Content-Type": "application/json"}
    if config.auth_env:
        token = os.environ.get(config.auth_env)
        if not token:
            raise VlmAuthError(
                f"auth token environment variable {config.auth_env!r} is not set"
            )
        headers["Authorization"] = f"Bearer {token}"
    return headers


def send(request: VlmRequest, config: EndpointConfig,
         session: requests.Session | None = None) -> VlmResponse:
    """One request with retry on transport errors and 429/5xx statuses.

    Other 4xx statuses fail immediately. Raises VlmError when attempts are
    exhausted.
    """
    body = request_body(request, config)
    if len(body) > config.max_payload_bytes:
        raise VlmPayloadError(
            f"payload of {len(body)} bytes exceeds limit {config.max_payload_bytes}"
        )
    headers = _headers(config)
    url = config.base_url.rstrip("/") + "/v1/chat/completions"
    http = session or requests

    start = time.monotonic()
    last_error: str = "no attempt made"
    last_status: int | None = None
    for attempt in range(1, config.max_attempts + 1):
        try:
            resp = http.post(url, data=body, headers=headers, timeout=config.timeout_s)
        except requests.RequestException as exc:
            last_error, last_status = f"transport error: {exc}", None
        else:
            if resp.status_code == 200:
                data = resp.json()
                text = data["choices"][0]["message"]["content"]
                usage = data.get("usage", {})
                out = VlmResponse(
                    text=text,
                    prompt_tokens=int(usage.get("prompt_tokens", 0)),
                    completion_tokens=int(usage.get("completion_tokens", 0)),
                    latency_ms=(time.monotonic() - start) * 1000.0,
                    attempts=attempt,
                )
                if config.log_path:
                    _append_log(config.log_path, {
                        "request": serialize_request(request, config),
                        "response": {"text": out.text, "attempts": attempt},
                    })
                return out
            last_error = f"HTTP {resp.status_code}: {resp.text[:200]}"
            last_status = resp.status_code
            retryable = resp.status_code == 429 or resp.status_code >= 500
            if not retryable:
                if config.log_path:
                    _append_log(config.log_path, {
                        "request": serialize_request(request, config),
                        "error": last_error,
                    })
                raise VlmError(last_error, status=last_status, attempts=attempt)
        if attempt < config.max_attempts:
            time.sleep(config.backoff_base_s * 2 ** (attempt - 1))
    if config.log_path:
        _append_log(config.log_path, {
            "request": serialize_request(request, config),
            "error": last_error,
        })
    raise VlmError(
        f"gave up after {config.max_attempts} attempts: {last_error}",
        status=last_status,
        attempts=config.max_attempts,
    )


def send_batch(requests_list, config: EndpointConfig):
    """Send many requests with at most max_in_flight concurrently.

    The result list matches the input order; failed slots hold VlmFailure
    instead of aborting the batch.
    """
    results: list = [None] * len(requests_list)
    if not requests_list:
        return results

    def worker(index: int, req: VlmRequest):
        try:
            results[index] = send(req, config)
        except VlmError as exc:
            results[index] = VlmFailure(str(exc), exc.status, exc.attempts)

    with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
        futures = [pool.submit(worker, i, r) for i, r in enumerate(requests_list)]
        for fut in futures:
            fut.result()
    return results


def cache_key(request: VlmRequest, config: EndpointConfig) -> str:
    """Stable key for response caching: hash of (model, request body)."""
    import hashlib

    digest = hashlib.sha256()
    digest.update(config.model.encode("utf-8"))
    digest.update(b"\x00")
    digest.update(request_body(request, config))
    return digest.hexdigest()


class ResponseCache:
    """File-backed response cache keyed by request-body hash."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def get(self, key: str) -> VlmResponse | None:
        path = self.directory / f"{key}.json"
        if not path.exists():
            return None
        data = json.loads(path.read_text())
        return VlmResponse(
            text=data["text"],
            prompt_tokens=data.get("prompt_tokens", 0),
            completion_tokens=data.get("completion_tokens", 0),
            latency_ms=0.0,
            attempts=0,
        )

    def put(self, key: str, response: VlmResponse) -> None:
        path = self.directory / f"{key}.json"
        path.write_text(json.dumps({
            "text": response.text,
            "prompt_tokens": response.prompt_tokens,
            "completion_tokens": response.completion_tokens,
        }, ensure_ascii=False))
