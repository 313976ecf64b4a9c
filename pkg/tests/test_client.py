import base64
import json
import os

import pytest
from PIL import Image

from scenemark import (EndpointConfig, MockVlm, ResponseCache, VlmError,
                       VlmFailure, send, send_batch, serialize_request)
from scenemark.client import VlmAuthError, VlmPayloadError, cache_key, request_body
from scenemark.mock_server import fixed_responder, question_of, scripted_responder
from scenemark.prompts import ImageAttachment, VlmRequest


def png_bytes(size=(4, 4), color=(5, 5, 5)):
    import io

    buf = io.BytesIO()
    Image.new("RGB", size, color).save(buf, format="PNG")
    return buf.getvalue()


def image_request(question="What color?"):
    return VlmRequest(
        system="sys prompt",
        parts=(ImageAttachment(png_bytes()), ImageAttachment(png_bytes()), question),
    )


def text_request(question):
    return VlmRequest(system="sys", parts=(question,))


def config_for(mock, **kwargs):
    return EndpointConfig(base_url=mock.base_url, model="test-model", **kwargs)


def test_mock_echo_fixture_text():
    with MockVlm(fixed_responder("a fixed reply")) as mock:
        response = send(image_request(), config_for(mock))
    assert response.text == "a fixed reply"
    assert response.attempts == 1
    assert response.completion_tokens > 0


def test_retry_succeeds_on_third_attempt():
    with MockVlm(fixed_responder("late success"), fail_times=2) as mock:
        config = config_for(mock, max_attempts=3, backoff_base_s=0.01)
        response = send(image_request(), config)
    assert response.text == "late success"
    assert response.attempts == 3
    assert mock.call_count == 3


def test_no_retry_on_client_error():
    with MockVlm(fail_times=5, fail_status=400) as mock:
        config = config_for(mock, max_attempts=3, backoff_base_s=0.01)
        with pytest.raises(VlmError) as err:
            send(image_request(), config)
    assert err.value.status == 400
    assert err.value.attempts == 1
    assert mock.call_count == 1


def test_retries_exhausted_on_server_error():
    with MockVlm(fail_times=99, fail_status=503) as mock:
        config = config_for(mock, max_attempts=2, backoff_base_s=0.01)
        with pytest.raises(VlmError) as err:
            send(image_request(), config)
    assert err.value.attempts == 2
    assert mock.call_count == 2


def test_transport_error_raises_after_retries():
    config = EndpointConfig(base_url="http://127.0.0.1:1", model="m",
                            max_attempts=2, backoff_base_s=0.01, timeout_s=0.5)
    with pytest.raises(VlmError):
        send(text_request("q"), config)


def test_wire_payload_structure():
    request = image_request("the question")
    config = EndpointConfig(base_url="http://x", model="gpt-test")
    payload = serialize_request(request, config)
    assert list(payload) == ["model", "messages", "temperature", "max_tokens"]
    assert payload["model"] == "gpt-test"
    assert payload["temperature"] == 0.0
    assert payload["max_tokens"] == 256
    system, user = payload["messages"]
    assert system == {"role": "system", "content": "sys prompt"}
    assert user["role"] == "user"
    kinds = [part["type"] for part in user["content"]]
    assert kinds == ["image_url", "image_url", "text"]
    url = user["content"][0]["image_url"]["url"]
    assert url.startswith("data:image/png;base64,")
    decoded = base64.b64decode(url.split(",", 1)[1])
    assert decoded.startswith(b"\x89PNG")
    assert user["content"][2]["text"] == "the question"


def test_mock_records_exact_payload():
    request = image_request("recorded?")
    with MockVlm() as mock:
        config = config_for(mock)
        send(request, config)
        recorded = mock.requests[0]
    assert recorded == serialize_request(request, config)
    assert question_of(recorded) == "recorded?"


def test_serialization_is_deterministic():
    request = image_request()
    config = EndpointConfig(base_url="http://x", model="m")
    assert request_body(request, config) == request_body(request, config)
    assert cache_key(request, config) == cache_key(request, config)
    other = EndpointConfig(base_url="http://x", model="m2")
    assert cache_key(request, config) != cache_key(request, other)


def test_batch_respects_concurrency_bound_and_order():
    with MockVlm(lambda payload: f"echo:{question_of(payload)}",
                 latency_s=0.05) as mock:
        config = config_for(mock, max_in_flight=3)
        requests = [text_request(f"q{i}") for i in range(10)]
        results = send_batch(requests, config)
    assert mock.max_concurrent <= 3
    assert mock.call_count == 10
    for i, result in enumerate(results):
        assert result.text == f"echo:q{i}"


def test_batch_reports_partial_failures_in_place():
    def responder(payload):
        if question_of(payload) == "q3":
            return (400, "boom")
        return "fine"

    with MockVlm(responder) as mock:
        config = config_for(mock, max_attempts=1)
        results = send_batch([text_request(f"q{i}") for i in range(10)], config)
    failures = [r for r in results if isinstance(r, VlmFailure)]
    assert len(failures) == 1
    assert isinstance(results[3], VlmFailure)
    assert results[3].status == 400
    assert all(r.text == "fine" for i, r in enumerate(results) if i != 3)


def test_empty_batch():
    config = EndpointConfig(base_url="http://x", model="m")
    assert send_batch([], config) == []


def test_auth_token_required_and_sent(monkeypatch):
    with MockVlm(auth_token="sesame") as mock:
        config = config_for(mock, auth_env="TEST_VLM_TOKEN", max_attempts=1)
        monkeypatch.delenv("TEST_VLM_TOKEN", raising=False)
        with pytest.raises(VlmAuthError):
            send(text_request("q"), config)
        monkeypatch.setenv("TEST_VLM_TOKEN", "wrong")
        with pytest.raises(VlmError):
            send(text_request("q"), config)
        monkeypatch.setenv("TEST_VLM_TOKEN", "sesame")
        assert send(text_request("q"), config).text == "ok"


def test_payload_size_guard():
    config = EndpointConfig(base_url="http://x", model="m", max_payload_bytes=100)
    with pytest.raises(VlmPayloadError):
        send(image_request(), config)


def test_request_log_jsonl(tmp_path):
    log = tmp_path / "log.jsonl"
    with MockVlm(fixed_responder("logged")) as mock:
        config = config_for(mock, log_path=str(log))
        send(text_request("q"), config)
    entries = [json.loads(line) for line in log.read_text().splitlines()]
    assert len(entries) == 1
    assert entries[0]["response"]["text"] == "logged"
    assert entries[0]["request"]["model"] == "test-model"


def test_response_cache_roundtrip(tmp_path):
    cache = ResponseCache(tmp_path / "cache")
    from scenemark.client import VlmResponse

    response = VlmResponse("cached text", 3, 5, 12.0, 1)
    cache.put("abc", response)
    hit = cache.get("abc")
    assert hit.text == "cached text"
    assert hit.prompt_tokens == 3
    assert cache.get("missing") is None


def test_scripted_responder_cycles():
    responder = scripted_responder(["one", "two"])
    assert responder({}) == "one"
    assert responder({}) == "two"
    assert responder({}) == "one"
