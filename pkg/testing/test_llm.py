import json
from unittest import mock

import pytest
import requests

from model.errors import (
    InvalidValue, NoJsonFound, ProviderError, ProviderUnavailable, RetriesExhausted, SchemaMismatch, ScriptExhausted,
)
from model.llm import (
    HttpProvider, LlmResponse, SchemaId, ScriptedProvider, extract_json, json_objects, send, start_conversation,
)
from model.prompts import OUTPUT_INSTRUCTIONS, TemplateId, render
from conftest import MAKEFILE, approximation_reply


def fake_response(status, body=None, text=""):
    response = mock.Mock()
    response.status_code = status
    response.text = text or json.dumps(body or {})
    response.json.return_value = body
    return response


def completion(text):
    return {"id": "c1", "model": "m", "choices": [{"message": {"role": "assistant", "content": text}}],
            "usage": {"total_tokens": 3}}


""" Providers and conversations """

def test_scripted_conversation_appends_turns():
    provider = ScriptedProvider(["first", "second"])
    conv = start_conversation("system text", provider, "conv1")
    assert send(conv, "hello").text == "first"
    assert send(conv, "again").text == "second"
    assert [m.role for m in conv.messages] == ["system", "user", "assistant", "user", "assistant"]
    assert provider.requests[1][-1] == {"role": "user", "content": "again"}
    assert conv.read()["provider_tag"] == "scripted"


def test_script_exhausted_leaves_history():
    conv = start_conversation("system text", ScriptedProvider([]))
    with pytest.raises(ScriptExhausted) as info:
        send(conv, "hello")
    assert info.value.exit_code == 3
    assert len(conv.messages) == 1


def test_empty_system_prompt():
    with pytest.raises(InvalidValue):
        start_conversation("  ", ScriptedProvider([]))


def test_scripted_from_file(tmp_path):
    path = tmp_path / "script.json"
    path.write_text(json.dumps(["a", "b"]))
    assert ScriptedProvider.from_file(path).remaining == 2
    path.write_text(json.dumps({"a": 1}))
    with pytest.raises(ProviderUnavailable):
        ScriptedProvider.from_file(path)


def test_conversation_save(tmp_path):
    conv = start_conversation("system text", ScriptedProvider(["ok"]), "conv3")
    send(conv, "hi")
    saved = json.loads(conv.save(tmp_path / "c" / "conv3.json").read_text())
    assert saved["id"] == "conv3"
    assert len(saved["messages"]) == 3


def test_http_provider_without_key():
    with pytest.raises(ProviderUnavailable):
        start_conversation("system text", HttpProvider(api_key=""))


def test_http_provider_success():
    provider = HttpProvider(base_url="http://llm.test/v1", api_key="k", model="m")
    with mock.patch("model.llm.requests.post", return_value=fake_response(200, completion("hi there"))) as post:
        conv = start_conversation("system text", provider)
        response = send(conv, "hello")
    assert response.text == "hi there"
    assert response.usage == {"total_tokens": 3}
    args, kwargs = post.call_args
    assert args[0] == "http://llm.test/v1/chat/completions"
    assert kwargs["headers"]["Authorization"] == "Bearer k"
    assert kwargs["json"]["messages"][-1] == {"role": "user", "content": "hello"}


def test_http_provider_retries_rate_limits():
    sleeps = []
    provider = HttpProvider(base_url="http://llm.test", api_key="k", max_retries=3, backoff=0.5, sleep=sleeps.append)
    replies = [fake_response(429), requests.ConnectionError("down"), fake_response(200, completion("ok"))]
    with mock.patch("model.llm.requests.post", side_effect=replies):
        assert send(start_conversation("s", provider), "q").text == "ok"
    assert sleeps == [0.5, 1.0]


def test_http_provider_gives_up():
    provider = HttpProvider(base_url="http://llm.test", api_key="k", max_retries=2, sleep=lambda s: None)
    with mock.patch("model.llm.requests.post", return_value=fake_response(503)) as post:
        with pytest.raises(RetriesExhausted):
            send(start_conversation("s", provider), "q")
    assert post.call_count == 3


def test_http_provider_client_error_is_final():
    provider = HttpProvider(base_url="http://llm.test", api_key="k", sleep=lambda s: None)
    with mock.patch("model.llm.requests.post", return_value=fake_response(401, text="bad key")) as post:
        with pytest.raises(ProviderError):
            send(start_conversation("s", provider), "q")
    assert post.call_count == 1


""" Extraction """

def test_selection_from_fenced_json():
    text = 'Reasoning.\n```json\n{"target_functions": {"f": "approximate", "g": "Do not approximate"}}\n```'
    assert extract_json(text, SchemaId.FUNCTION_SELECTION, functions=["g", "f"]) == {
        "g": "do_not_approximate", "f": "approximate"}


def test_selection_missing_function():
    with pytest.raises(SchemaMismatch):
        extract_json('{"f": "approximate"}', SchemaId.FUNCTION_SELECTION, functions=["f", "g"])


def test_selection_bad_decision():
    with pytest.raises(SchemaMismatch):
        extract_json('{"f": "maybe"}', SchemaId.FUNCTION_SELECTION)


def test_no_json():
    with pytest.raises(NoJsonFound):
        extract_json(LlmResponse("no braces here"), SchemaId.APPROXIMATION_OUTPUT)


def test_approximation_reply():
    output = extract_json(approximation_reply(), SchemaId.APPROXIMATION_OUTPUT)
    assert output["knob_variables"] == ["stride"]
    assert output["apx_code"].startswith("void filter")


def test_approximated_code_alias():
    text = json.dumps({"approximated_code": "int f(void) { return 0; }", "knob_variables": [],
                       "knob_ranges": [], "knob_increments": []})
    assert extract_json(text, SchemaId.APPROXIMATION_OUTPUT)["apx_code"] == "int f(void) { return 0; }"


def test_approximation_missing_field():
    with pytest.raises(SchemaMismatch):
        extract_json('{"apx_code": "int f(void) { return 0; }", "knob_variables": []}',
                     SchemaId.APPROXIMATION_OUTPUT)


def test_relaxed_json():
    assert list(json_objects("x {a: 1, 'b': 2} {c: [1, 2,],}")) == [{"c": [1, 2]}]
    assert list(json_objects('{"s": "brace } inside"}')) == [{"s": "brace } inside"}]


def test_makefile_fence_stripped():
    assert extract_json("```make\n" + MAKEFILE + "```", SchemaId.MAKEFILE) == MAKEFILE


def test_makefile_prose_around_fence_dropped():
    reply = "Here is a Makefile for your project:\n\n```makefile\n" + MAKEFILE + "```\n\nRun `make main` to build."
    assert extract_json(reply, SchemaId.MAKEFILE) == MAKEFILE


def test_makefile_without_fence_kept_verbatim():
    assert extract_json(MAKEFILE, SchemaId.MAKEFILE) == MAKEFILE


""" Prompts """

def test_render_fills_declared_placeholders():
    text = render(TemplateId.CONV2_JSONIFY, add_error="", output_instuctions=OUTPUT_INSTRUCTIONS)
    assert "apx_code" in text
    assert "{output_instuctions}" not in text


def test_render_missing_value():
    with pytest.raises(InvalidValue):
        render(TemplateId.CONV1_FUNCTION_DETAIL)


def test_render_keeps_literal_braces():
    text = render(TemplateId.CONV1_SELECT)
    assert '"function_1": "approximate"' in text
