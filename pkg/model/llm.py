""" Chat providers, conversations and structured-reply extraction.

Two providers ship: an HTTP client for OpenAI-style chat-completion endpoints
and a scripted provider that replays canned replies from a JSON file, used
for offline runs and tests.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
import json
import logging
import re
import time

import requests

from __init__ import config
from model.errors import (
    InvalidValue, ProviderUnavailable, ProviderError, RetriesExhausted,
    ScriptExhausted, NoJsonFound, SchemaMismatch,
)

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
TRANSIENT_STATUS = {408, 409, 429, 500, 502, 503, 504}


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def read(self):
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class LlmResponse:
    text: str
    usage: dict = None
    provider_meta: dict = field(default_factory=dict)


class Provider(ABC):
    """Interface every chat backend implements"""
    tag = "provider"

    @abstractmethod
    def complete(self, messages):
        """Returns an LlmResponse for the full message history"""

    def check(self):
        '''Raises ProviderUnavailable when the backend cannot be used'''


class HttpProvider(Provider):
    """Chat-completion client, retries rate limits and server errors with exponential backoff"""
    tag = "http"

    def __init__(self, base_url=None, model=None, api_key=None, temperature=None,
                 max_tokens=None, timeout=None, max_retries=None, backoff=None, sleep=time.sleep):
        self.base_url = (base_url or config['LLM_BASE_URL']).rstrip("/")
        self.model = model or config['LLM_MODEL']
        self.api_key = api_key if api_key is not None else config['LLM_API_KEY']
        self.temperature = config['LLM_TEMPERATURE'] if temperature is None else temperature
        self.max_tokens = max_tokens or config['LLM_MAX_TOKENS']
        self.timeout = timeout or config['LLM_TIMEOUT']
        self.max_retries = config['LLM_MAX_RETRIES'] if max_retries is None else max_retries
        self.backoff = config['LLM_BACKOFF_SECONDS'] if backoff is None else backoff
        self._sleep = sleep

    def check(self):
        if not self.api_key:
            raise ProviderUnavailable("CHECKMATE_LLM_API_KEY is not set")

    def _post(self, payload):
        '''One request, returns (response, error) like the other HTTP helpers'''
        try:
            response = requests.post(
                self.base_url + "/chat/completions",
                json=payload,
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.timeout,
            )
        except (requests.ConnectionError, requests.Timeout) as e:
            return None, {'message': 'Chat request failed', 'code': 503, 'error': str(e)}
        except requests.RequestException as e:
            return None, {'message': 'Chat request failed', 'code': 500, 'error': str(e)}
        if response.status_code != 200:
            return None, {'message': 'Chat request rejected', 'code': response.status_code, 'error': response.text}
        return response, None

    def complete(self, messages):
        self.check()
        payload = {
            "model": self.model,
            "messages": [m.read() for m in messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        last_error = None
        for attempt in range(self.max_retries + 1):
            response, error = self._post(payload)
            if error is None:
                try:
                    body = response.json()
                    text = body["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError):
                    raise ProviderError(response.status_code, response.text)
                if not text:
                    raise ProviderError(response.status_code, "empty completion")
                return LlmResponse(text=text, usage=body.get("usage"),
                                   provider_meta={"model": body.get("model"), "id": body.get("id")})
            if error['code'] not in TRANSIENT_STATUS:
                raise ProviderError(error['code'], error.get('error'))
            last_error = error
            if attempt < self.max_retries:
                delay = self.backoff * (2 ** attempt)
                logger.warning("Chat request failed with %s, retrying in %.1fs", error['code'], delay)
                self._sleep(delay)
        raise RetriesExhausted(f"Chat request failed after {self.max_retries + 1} attempts",
                               status=last_error['code'])


class ScriptedProvider(Provider):
    """Replays assistant replies in order, records every request it receives"""
    tag = "scripted"

    def __init__(self, responses):
        self.responses = list(responses)
        self.requests = []

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        try:
            responses = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ProviderUnavailable(f"Cannot read script {path}: {e}")
        if not isinstance(responses, list) or not all(isinstance(r, str) for r in responses):
            raise ProviderUnavailable(f"Script {path} must be a JSON array of strings")
        return cls(responses)

    @property
    def remaining(self):
        return len(self.responses)

    def complete(self, messages):
        self.requests.append([m.read() for m in messages])
        if not self.responses:
            raise ScriptExhausted()
        text = self.responses.pop(0)
        return LlmResponse(text=text, usage=None, provider_meta={"script_index": len(self.requests) - 1})


class Conversation:
    """Append-only message history bound to one provider"""

    def __init__(self, id, provider, messages=None):
        self.id = id
        self.provider = provider
        self.messages = list(messages or [])

    @property
    def provider_tag(self):
        return self.provider.tag

    @property
    def last_role(self):
        return self.messages[-1].role if self.messages else None

    def read(self):
        return {
            "id": self.id,
            "provider_tag": self.provider_tag,
            "messages": [m.read() for m in self.messages],
        }

    def __str__(self):
        return json.dumps(self.read())

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.read(), indent=2) + "\n", encoding="utf-8")
        return path


def start_conversation(system_text, provider, conversation_id="conversation"):
    """Returns a conversation holding exactly the system message"""
    if not system_text or not system_text.strip():
        raise InvalidValue("system_prompt", "must not be empty")
    provider.check()
    logger.debug("Starting conversation %s on %s", conversation_id, provider.tag)
    return Conversation(conversation_id, provider, [Message("system", system_text)])


def send(conv, user_text):
    """Sends user_text and appends both turns only once a reply arrived"""
    if conv.last_role not in ("system", "assistant"):
        raise InvalidValue("conversation", f"cannot send after a '{conv.last_role}' message")
    user = Message("user", user_text)
    response = conv.provider.complete(conv.messages + [user])
    conv.messages.append(user)
    conv.messages.append(Message("assistant", response.text))
    logger.debug("%s: %d messages", conv.id, len(conv.messages))
    return response


""" Structured extraction """

class SchemaId(str, Enum):
    FUNCTION_SELECTION = "function_selection"
    APPROXIMATION_OUTPUT = "approximation_output"
    MAKEFILE = "makefile"


APPROXIMATION_FIELDS = ("apx_code", "knob_variables", "knob_ranges", "knob_increments")
DECISIONS = {
    "approximate": "approximate",
    "do not approximate": "do_not_approximate",
    "do_not_approximate": "do_not_approximate",
    "do-not-approximate": "do_not_approximate",
}
FENCED_BLOCK = re.compile(r"```[^\n`]*\n(.*?)```", re.S)
TRAILING_COMMA = re.compile(r",(\s*[}\]])")
BARE_KEY = re.compile(r"([{,]\s*)([A-Za-z_]\w*)(\s*:)")


def _balanced_end(text, start):
    '''Index just past the brace closing the one at start, strings respected'''
    depth = 0
    in_string = False
    k = start
    while k < len(text):
        ch = text[k]
        if in_string:
            if ch == "\\":
                k += 1
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return k + 1
        k += 1
    return None


def _relax(snippet):
    '''Accepts the near-JSON models tend to write: trailing commas and bare keys'''
    snippet = TRAILING_COMMA.sub(r"\1", snippet)
    return BARE_KEY.sub(r'\1"\2"\3', snippet)


def json_objects(text):
    """Yields every top-level JSON object embedded in text, in order"""
    pos = text.find("{")
    while pos >= 0:
        end = _balanced_end(text, pos)
        if end is None:
            return
        snippet = text[pos:end]
        parsed = None
        for candidate in (snippet, _relax(snippet)):
            try:
                parsed = json.loads(candidate)
                break
            except json.JSONDecodeError:
                continue
        if isinstance(parsed, dict):
            yield parsed
            pos = text.find("{", end)
        else:
            pos = text.find("{", pos + 1)


def _selection(obj, functions):
    table = obj.get("target_functions", obj)
    if not isinstance(table, dict):
        raise SchemaMismatch("target_functions", "not an object")
    selection = {}
    for name, decision in table.items():
        if not isinstance(decision, str) or decision.strip().lower() not in DECISIONS:
            raise SchemaMismatch(name, f"has decision {decision!r}")
        selection[name] = DECISIONS[decision.strip().lower()]
    if functions is not None:
        for name in functions:
            if name not in selection:
                raise SchemaMismatch(name, "missing from the selection")
        selection = {name: selection[name] for name in functions}
    return selection


def _approximation(obj):
    if "apx_code" not in obj and isinstance(obj.get("approximated_code"), str):
        obj = {"apx_code": obj["approximated_code"], **{k: v for k, v in obj.items() if k != "approximated_code"}}
    for name in APPROXIMATION_FIELDS:
        if name not in obj:
            raise SchemaMismatch(name)
    if not isinstance(obj["apx_code"], str) or not obj["apx_code"].strip():
        raise SchemaMismatch("apx_code", "not a code string")
    if not isinstance(obj["knob_variables"], list) or not all(isinstance(k, str) for k in obj["knob_variables"]):
        raise SchemaMismatch("knob_variables", "not a list of names")
    for name in ("knob_ranges", "knob_increments"):
        if not isinstance(obj[name], (list, dict)):
            raise SchemaMismatch(name, "not a list of objects")
        if isinstance(obj[name], list) and not all(isinstance(item, dict) for item in obj[name]):
            raise SchemaMismatch(name, "not a list of objects")
    return obj


def _looks_like(obj, schema_id):
    if schema_id == SchemaId.APPROXIMATION_OUTPUT:
        return "apx_code" in obj or "approximated_code" in obj or "knob_variables" in obj
    return "target_functions" in obj or (bool(obj) and all(isinstance(v, str) and v.strip().lower() in DECISIONS
                                                           for v in obj.values()))


def extract_json(response, schema_id, functions=None):
    """
    Pulls the object for schema_id out of a reply.

    function_selection returns {name: 'approximate' | 'do_not_approximate'},
    checked against functions when given. approximation_output returns the
    object with its four required fields. makefile returns the body of the
    first fenced block, or the whole reply when it has no fence.
    """
    schema_id = SchemaId(schema_id)
    text = response.text if isinstance(response, LlmResponse) else str(response)

    if schema_id == SchemaId.MAKEFILE:
        block = FENCED_BLOCK.search(text)
        makefile = (block.group(1) if block else text).strip("\n")
        if not makefile.strip():
            raise SchemaMismatch("makefile", "empty")
        return makefile + "\n"

    objects = list(json_objects(text))
    if not objects:
        raise NoJsonFound()
    chosen = next((o for o in objects if _looks_like(o, schema_id)), objects[0])
    if schema_id == SchemaId.FUNCTION_SELECTION:
        return _selection(chosen, functions)
    return _approximation(chosen)
