import json
import threading
import time

import httpx
import pytest

from fgsumm.gateway import (
    API_KEY_ENV,
    BackendConfig,
    BackendKind,
    Gateway,
    GatewayConfigError,
    ResponseCache,
    cache_key,
    load_replay_fixtures,
)
from fgsumm.prompts import render_fact_check, render_summarize

HTTP = BackendKind.OPENAI_COMPATIBLE_HTTP


def _prompt(i=0):
    return render_summarize(f"Document number {i}.")


def _http_config(**kw):
    kw.setdefault("endpoint_url", "https://llm.example/v1")
    kw.setdefault("model_name", "m")
    kw.setdefault("backoff_base", 0.0)
    return BackendConfig(kind=HTTP, **kw)


def _reply(text):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}]})


def _client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


# -- config ----------------------------------------------------------------


@pytest.mark.parametrize("url", ["", "not a url", "ftp://x/y", "http://"])
def test_malformed_endpoint(url):
    with pytest.raises(GatewayConfigError):
        BackendConfig(kind=HTTP, endpoint_url=url, model_name="m")


def test_missing_api_key_names_variable(monkeypatch):
    monkeypatch.delenv(API_KEY_ENV, raising=False)
    with pytest.raises(GatewayConfigError, match=API_KEY_ENV):
        Gateway(_http_config())


def test_describe_has_no_secret(monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "sk-secret-value")
    cfg = _http_config()
    Gateway(cfg, http_client=_client(lambda r: _reply("x")))
    assert "sk-secret-value" not in json.dumps(cfg.describe())


# -- replay ----------------------------------------------------------------


def test_replay_by_prompt_hash():
    p = _prompt()
    gw = Gateway(BackendConfig(), replay={p.sha256: "hello"})
    r = gw.complete(p, "i1")
    assert r.ok and r.raw_text == "hello" and not r.from_cache


def test_replay_fallback_key_and_missing():
    p = render_fact_check("Doc.", ["One."])
    gw = Gateway(BackendConfig(max_retries=0), replay={"i1:fact_check": "[]"})
    assert gw.complete(p, "i1").raw_text == "[]"
    missing = gw.complete(p, "i2")
    assert missing.status == "transport_error" and "no replay fixture" in missing.error


def test_replay_fixture_file(tmp_path):
    path = tmp_path / "r.json"
    path.write_text(json.dumps({"a": "b"}))
    assert load_replay_fixtures(path) == {"a": "b"}
    path.write_text(json.dumps({"a": 1}))
    with pytest.raises(GatewayConfigError):
        load_replay_fixtures(path)


# -- cache -----------------------------------------------------------------


def test_cache_round_trip(tmp_path):
    p = _prompt()
    gw = Gateway(BackendConfig(cache_dir=tmp_path), replay={p.sha256: "héllo\n  wörld"})
    first = gw.complete(p)
    second = Gateway(BackendConfig(cache_dir=tmp_path), replay={}).complete(p)
    assert not first.from_cache and second.from_cache
    assert second.raw_text == first.raw_text
    key = cache_key(p.text, "mock", 0.0)
    assert (tmp_path / f"{key}.txt").exists() and (tmp_path / f"{key}.json").exists()
    assert not list(tmp_path.glob(".tmp-*"))


def test_cache_key_fields():
    base = cache_key("p", "m", 0.0)
    assert cache_key("p", "m", 0) == base
    assert cache_key("p", "m2", 0.0) != base
    assert cache_key("p", "m", 0.7) != base
    assert cache_key("q", "m", 0.0) != base


def test_cache_overwrite_is_atomic(tmp_path):
    cache = ResponseCache(tmp_path)
    cache.put("k", "one", "m")
    cache.put("k", "two", "m")
    assert cache.get("k") == "two"
    assert cache.get("absent") is None


# -- http ------------------------------------------------------------------


def test_http_request_shape():
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return _reply("ok")

    gw = Gateway(_http_config(temperature=0.0, max_output_tokens=77), http_client=_client(handler), api_key="k")
    p = _prompt()
    r = gw.complete(p)
    assert r.ok and r.raw_text == "ok" and r.attempts == 1
    assert seen["url"] == "https://llm.example/v1/chat/completions"
    assert seen["auth"] == "Bearer k"
    body = seen["body"]
    assert body["messages"] == [{"role": "user", "content": p.text}]
    assert body["temperature"] == 0.0 and body["max_tokens"] == 77 and body["model"] == "m"


def test_retries_then_transport_error():
    calls = []
    sleeps = []

    def handler(request):
        calls.append(1)
        raise httpx.ConnectError("refused", request=request)

    gw = Gateway(_http_config(max_retries=2, backoff_base=0.5), http_client=_client(handler), api_key="k",
                 sleep=sleeps.append)
    r = gw.complete(_prompt())
    assert r.status == "transport_error" and r.attempts == 3 and len(calls) == 3
    assert sleeps == [0.5, 1.0]


def test_retry_on_5xx_recovers():
    responses = iter([httpx.Response(503), httpx.Response(502), _reply("fine")])
    gw = Gateway(_http_config(max_retries=3), http_client=_client(lambda r: next(responses)), api_key="k",
                 sleep=lambda s: None)
    r = gw.complete(_prompt())
    assert r.ok and r.raw_text == "fine" and r.attempts == 3


def test_4xx_is_config_error():
    gw = Gateway(_http_config(), http_client=_client(lambda r: httpx.Response(401, text="bad key")), api_key="k")
    with pytest.raises(GatewayConfigError, match="401"):
        gw.complete(_prompt())


def test_malformed_body_is_transport_error():
    gw = Gateway(_http_config(max_retries=0), http_client=_client(lambda r: httpx.Response(200, json={})),
                 api_key="k")
    assert gw.complete(_prompt()).status == "transport_error"


def test_long_prompt_warning():
    p = render_summarize("x" * 40_000)
    r = Gateway(BackendConfig(), replay={p.sha256: "s"}).complete(p)
    assert r.warnings and "long prompt" in r.warnings[0]


# -- batch -----------------------------------------------------------------


def test_batch_order_and_bounded_parallelism():
    lock = threading.Lock()
    state = {"now": 0, "peak": 0}

    def handler(request):
        content = json.loads(request.content)["messages"][0]["content"]
        with lock:
            state["now"] += 1
            state["peak"] = max(state["peak"], state["now"])
        # later prompts finish first
        idx = int(content.split("Document number ")[1].split(".")[0])
        time.sleep(0.02 * (10 - idx))
        with lock:
            state["now"] -= 1
        return _reply(f"reply {idx}")

    gw = Gateway(_http_config(parallelism=3), http_client=_client(handler), api_key="k")
    results = gw.complete_batch([_prompt(i) for i in range(10)], [f"i{i}" for i in range(10)])
    assert [r.raw_text for r in results] == [f"reply {i}" for i in range(10)]
    assert [r.instance_id for r in results] == [f"i{i}" for i in range(10)]
    assert 1 < state["peak"] <= 3


def test_batch_one_failure_does_not_abort():
    prompts = [_prompt(i) for i in range(10)]
    replay = {p.sha256: f"r{i}" for i, p in enumerate(prompts) if i != 4}
    for par in (1, 3):
        results = Gateway(BackendConfig(parallelism=par, max_retries=0), replay=replay).complete_batch(prompts)
        assert [r.ok for r in results] == [i != 4 for i in range(10)]
        assert results[5].raw_text == "r5"


def test_batch_serial_equals_singles():
    prompts = [_prompt(i) for i in range(5)]
    replay = {p.sha256: f"r{i}" for i, p in enumerate(prompts)}
    gw = Gateway(BackendConfig(parallelism=1), replay=replay)
    batch = [r.raw_text for r in gw.complete_batch(prompts)]
    singles = [gw.complete(p).raw_text for p in prompts]
    parallel = [r.raw_text for r in Gateway(BackendConfig(parallelism=4), replay=replay).complete_batch(prompts)]
    assert batch == singles == parallel
