import textwrap

import pytest
import requests

from reprompt.errors import (
    AmbiguousScriptError,
    EmptyResponseError,
    RateLimitedError,
    RejectedError,
    ScriptParseError,
    TransportError,
)
from reprompt.gateway import (
    API_KEY_ENV,
    BASE_URL_ENV,
    ChatRequest,
    FinishReason,
    HttpGateway,
    Message,
    Role,
    ScriptEntry,
    Usage,
    load_script,
)

from conftest import entry, make_gateway, write_script


def req(*parts, model="agent"):
    """Build a request from (role, content) pairs or bare user strings."""
    messages = []
    for part in parts:
        if isinstance(part, str):
            messages.append(Message(Role.USER, part))
        else:
            role, content = part
            messages.append(Message(Role(role), content))
    return ChatRequest(messages=tuple(messages), model=model)


# --- request validation -------------------------------------------------------


def test_request_needs_messages():
    with pytest.raises(ValueError):
        ChatRequest(messages=())


def test_request_rejects_assistant_opening():
    with pytest.raises(ValueError):
        ChatRequest(messages=(Message(Role.ASSISTANT, "hi"),))


def test_request_rejects_negative_temperature():
    with pytest.raises(ValueError):
        ChatRequest(messages=(Message(Role.USER, "x"),), temperature=-0.1)


# --- entry matching -------------------------------------------------------------


def test_contains_anchors_must_appear_in_order():
    e = ScriptEntry(contains=("alpha", "beta"), response="r")
    assert e.matches(req("alpha then beta"))
    assert not e.matches(req("beta then alpha"))


def test_contains_anchors_may_not_overlap():
    e = ScriptEntry(contains=("aa", "aa"), response="r")
    assert not e.matches(req("aaa"))
    assert e.matches(req("aaaa"))


def test_anchors_span_message_boundaries():
    e = ScriptEntry(contains=("first", "second"), response="r")
    assert e.matches(req(("system", "the first part"), ("user", "the second part")))


def test_roles_pin_the_exact_sequence():
    e = ScriptEntry(contains=("x",), roles=("system", "user"), response="r")
    assert e.matches(req(("system", "x"), ("user", "y")))
    assert not e.matches(req("x"))
    assert not e.matches(req(("system", "x"), ("user", "y"), ("user", "z")))


def test_excludes_veto_a_match():
    e = ScriptEntry(contains=("x",), excludes=("stop word",), response="r")
    assert e.matches(req("x marks the spot"))
    assert not e.matches(req("x plus the stop word"))


# --- scripted gateway ------------------------------------------------------------


def test_single_match_returns_response():
    gw = make_gateway(entry(["hello"], "world"))
    res = gw.complete(req("say hello"))
    assert res.content == "world"
    assert res.finish_reason is FinishReason.STOP
    assert gw.calls == 1
    assert gw.history[0][1] == "world"


def test_unscripted_request_is_rejected():
    gw = make_gateway(entry(["hello"], "world"))
    with pytest.raises(RejectedError, match="unscripted"):
        gw.complete(req("goodbye"))
    assert gw.calls == 1


def test_double_match_is_ambiguous():
    gw = make_gateway(entry(["alpha"], "a"), entry(["beta"], "b"))
    with pytest.raises(AmbiguousScriptError):
        gw.complete(req("alpha and beta"))


def test_max_uses_retires_an_entry():
    gw = make_gateway(entry(["go"], "once", max_uses=1))
    assert gw.complete(req("go")).content == "once"
    with pytest.raises(RejectedError):
        gw.complete(req("go"))


def test_round_dependent_entries_via_roles():
    first = entry(["Task id: s1"], "round one", roles=["user"])
    second = entry(
        ["Task id: s1"], "round two", roles=["user", "assistant", "user"]
    )
    gw = make_gateway(first, second)
    assert gw.complete(req("Task id: s1")).content == "round one"
    followup = req(
        ("user", "Task id: s1"), ("assistant", "round one"), ("user", "try again")
    )
    assert gw.complete(followup).content == "round two"
    assert gw.calls == 2


def test_empty_scripted_response_raises():
    gw = make_gateway(entry(["x"], ""))
    with pytest.raises(EmptyResponseError):
        gw.complete(req("x"))
    assert gw.calls == 1


def test_history_records_requests_in_order():
    gw = make_gateway(entry(["one"], "1"), entry(["two"], "2"))
    gw.complete(req("one"))
    gw.complete(req("two"))
    assert [resp for _, resp in gw.history] == ["1", "2"]
    assert gw.history[0][0].messages[0].content == "one"


# --- script files -----------------------------------------------------------------


def test_load_script_round_trip(tmp_path):
    path = write_script(
        tmp_path / "s.yaml",
        [
            entry(["a"], "ra", roles=["user"], max_uses=2),
            entry(["b"], "rb", excludes=["veto"]),
        ],
    )
    script = load_script(path)
    assert len(script.entries) == 2
    assert script.entries[0].contains == ("a",)
    assert script.entries[0].roles == ("user",)
    assert script.entries[0].max_uses == 2
    assert script.entries[1].excludes == ("veto",)
    assert script.entries[0].line == 1


def test_load_script_reports_entry_line(tmp_path):
    text = textwrap.dedent(
        """\
        - match:
            contains: [ok]
          response: fine
        - match:
            contains: []
          response: broken
        """
    )
    path = tmp_path / "s.yaml"
    path.write_text(text)
    with pytest.raises(ScriptParseError) as err:
        load_script(str(path))
    assert err.value.line == 4


def test_load_script_rejects_duplicate_fingerprints(tmp_path):
    path = write_script(
        tmp_path / "s.yaml",
        [entry(["same"], "first"), entry(["same"], "second")],
    )
    with pytest.raises(AmbiguousScriptError):
        load_script(path)


def test_load_script_rejects_empty_file(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text("")
    with pytest.raises(ScriptParseError):
        load_script(str(path))


def test_load_script_rejects_non_list_root(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text("match: {contains: [x]}\nresponse: y\n")
    with pytest.raises(ScriptParseError):
        load_script(str(path))


def test_load_script_rejects_bad_roles(tmp_path):
    path = write_script(
        tmp_path / "s.yaml", [entry(["x"], "r", roles=["narrator"])]
    )
    with pytest.raises(ScriptParseError, match="roles"):
        load_script(path)


def test_load_script_rejects_bad_max_uses(tmp_path):
    path = write_script(tmp_path / "s.yaml", [entry(["x"], "r", max_uses=0)])
    with pytest.raises(ScriptParseError, match="max_uses"):
        load_script(path)


def test_load_script_rejects_missing_response(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text("- match:\n    contains: [x]\n")
    with pytest.raises(ScriptParseError, match="response"):
        load_script(str(path))


def test_load_script_reports_yaml_syntax_errors(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text("- match: [unclosed\n")
    with pytest.raises(ScriptParseError):
        load_script(str(path))


# --- HTTP backend -----------------------------------------------------------------


class FakeHttp:
    def __init__(self, status_code=200, body=None, text="", bad_json=False):
        self.status_code = status_code
        self._body = body
        self.text = text
        self._bad_json = bad_json

    def json(self):
        if self._bad_json:
            raise ValueError("body is not JSON")
        return self._body


def ok_body(content="hello", finish="stop", usage=None):
    return {
        "choices": [
            {"message": {"content": content}, "finish_reason": finish}
        ],
        "usage": usage or {},
    }


class FakePost:
    """Canned transport: yields one outcome per attempt, records each call."""

    def __init__(self, *outcomes):
        self.outcomes = list(outcomes)
        self.calls = []

    def __call__(self, url, json=None, headers=None, timeout=None):
        self.calls.append(
            {"url": url, "json": json, "headers": headers, "timeout": timeout}
        )
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


def make_http(post, **kwargs):
    slept = []
    gw = HttpGateway(
        base_url="http://unit.test",
        api_key=kwargs.pop("api_key", "k"),
        transport=post,
        sleep=slept.append,
        **kwargs,
    )
    return gw, slept


def test_success_sends_expected_payload():
    post = FakePost(FakeHttp(body=ok_body(usage={"prompt_tokens": 3, "completion_tokens": 7})))
    gw, slept = make_http(post)
    res = gw.complete(
        ChatRequest(
            messages=(Message(Role.SYSTEM, "s"), Message(Role.USER, "u")),
            model="planner",
            temperature=0.5,
            seed=7,
        )
    )
    assert res.content == "hello"
    assert res.usage == Usage(prompt_units=3, output_units=7)
    assert slept == []
    call = post.calls[0]
    assert call["url"] == "http://unit.test/chat/completions"
    assert call["headers"]["Authorization"] == "Bearer k"
    assert call["json"]["model"] == "planner"
    assert call["json"]["temperature"] == 0.5
    assert call["json"]["seed"] == 7
    assert call["json"]["messages"] == [
        {"role": "system", "content": "s"},
        {"role": "user", "content": "u"},
    ]
    assert "max_tokens" not in call["json"]
    assert gw.calls == 1


def test_max_output_becomes_max_tokens():
    post = FakePost(FakeHttp(body=ok_body()))
    gw, _ = make_http(post)
    gw.complete(
        ChatRequest(messages=(Message(Role.USER, "u"),), max_output=128)
    )
    assert post.calls[0]["json"]["max_tokens"] == 128


def test_no_auth_header_without_key(monkeypatch):
    monkeypatch.delenv(API_KEY_ENV, raising=False)
    post = FakePost(FakeHttp(body=ok_body()))
    gw, _ = make_http(post, api_key=None)
    gw.complete(req("u"))
    assert "Authorization" not in post.calls[0]["headers"]


def test_rate_limit_retries_with_backoff():
    post = FakePost(*(FakeHttp(status_code=429) for _ in range(3)))
    gw, slept = make_http(post)
    with pytest.raises(RateLimitedError):
        gw.complete(req("u"))
    assert len(post.calls) == 3
    assert slept == [1.0, 2.0]
    assert gw.calls == 1


def test_server_error_then_success():
    post = FakePost(FakeHttp(status_code=503), FakeHttp(body=ok_body()))
    gw, slept = make_http(post)
    assert gw.complete(req("u")).content == "hello"
    assert slept == [1.0]


def test_connection_error_is_retried():
    post = FakePost(
        requests.ConnectionError("boom"), FakeHttp(body=ok_body())
    )
    gw, _ = make_http(post)
    assert gw.complete(req("u")).content == "hello"


def test_client_error_fails_immediately():
    post = FakePost(FakeHttp(status_code=403, text="nope"))
    gw, slept = make_http(post)
    with pytest.raises(RejectedError, match="403"):
        gw.complete(req("u"))
    assert len(post.calls) == 1
    assert slept == []


def test_non_json_success_body_fails_immediately():
    post = FakePost(FakeHttp(bad_json=True))
    gw, _ = make_http(post)
    with pytest.raises(TransportError, match="non-JSON"):
        gw.complete(req("u"))
    assert len(post.calls) == 1


def test_malformed_body_is_a_transport_error():
    post = FakePost(FakeHttp(body={"choices": []}))
    gw, _ = make_http(post)
    with pytest.raises(TransportError, match="malformed"):
        gw.complete(req("u"))


def test_finish_reason_mapping():
    for finish, expected in [
        ("stop", FinishReason.STOP),
        ("length", FinishReason.LENGTH),
        ("tool_calls", FinishReason.OTHER),
    ]:
        post = FakePost(FakeHttp(body=ok_body(finish=finish)))
        gw, _ = make_http(post)
        assert gw.complete(req("u")).finish_reason is expected


def test_null_content_with_length_maps_to_empty():
    post = FakePost(FakeHttp(body=ok_body(content=None, finish="length")))
    gw, _ = make_http(post)
    res = gw.complete(req("u"))
    assert res.content == ""
    assert res.finish_reason is FinishReason.LENGTH


def test_stop_with_empty_content_is_an_error():
    post = FakePost(FakeHttp(body=ok_body(content="")))
    gw, _ = make_http(post)
    with pytest.raises(EmptyResponseError):
        gw.complete(req("u"))


def test_backoff_schedule_clamps_to_last_value():
    post = FakePost(*(FakeHttp(status_code=429) for _ in range(5)))
    gw, slept = make_http(post, attempts=5, backoff=(1.0,))
    with pytest.raises(RateLimitedError):
        gw.complete(req("u"))
    assert slept == [1.0, 1.0, 1.0, 1.0]


def test_base_url_from_environment(monkeypatch):
    monkeypatch.setenv(BASE_URL_ENV, "http://env.test/")
    post = FakePost(FakeHttp(body=ok_body()))
    gw = HttpGateway(api_key="k", transport=post, sleep=lambda _: None)
    gw.complete(req("u"))
    assert post.calls[0]["url"] == "http://env.test/chat/completions"


def test_missing_base_url_is_an_error(monkeypatch):
    monkeypatch.delenv(BASE_URL_ENV, raising=False)
    with pytest.raises(ValueError):
        HttpGateway(api_key="k")
