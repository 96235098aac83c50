"""
Chat-with-tools models

Every model answers `complete(ChatTurnRequest) -> ChatTurnResponse`. The
controller and the judges never know whether a live provider, a replay
fixture, a script or a canned policy is behind the handle.
"""
import abc
import json
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

import requests

from configs import settings
from utils import canonical_json, get_json_config
from utils.text import extract_code_block
from . import exceptions
from .clients import get_credential
from .fixtures import FixtureStore
from .lean import IDENTIFIER_RE
from .records import Message, ToolCall


__all__ = [
    'ChatTurnRequest', 'ChatTurnResponse', 'ChatModel', 'RateLimiter',
    'HttpChatModel', 'ReplayModel', 'RecordingModel', 'ScriptedModel',
    'CannedPolicyModel', 'CannedJudgeModel', 'get_model'
]


@dataclass
class ChatTurnRequest:
    history: list
    tool_specs: list = field(default_factory=list)
    model_id: str = ''
    decoding: dict = field(default_factory=dict)

    def fixture_payload(self) -> dict:
        """What the replay key is computed from"""
        return {
            'model_id': self.model_id,
            'history': [m.to_dict() for m in self.history],
            'tool_specs': [s.to_dict() for s in self.tool_specs]
        }


@dataclass
class ChatTurnResponse:
    message: Message
    usage: dict = field(default_factory=dict)
    provider_meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            'message': self.message.to_dict(), 'usage': self.usage,
            'provider_meta': self.provider_meta
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'ChatTurnResponse':
        return cls(
            Message.from_dict(data['message']), data.get('usage', {}),
            data.get('provider_meta', {})
        )


class ChatModel(abc.ABC):
    def __init__(self, model_id: str):
        self.model_id = model_id

    @abc.abstractmethod
    def complete(self, request: ChatTurnRequest) -> ChatTurnResponse:
        pass


class RateLimiter(object):
    """Process-wide bound on in-flight provider calls per credential"""
    _lock = threading.Lock()
    _slots = {}

    @classmethod
    def for_credential(
            cls, credential: str,
            limit: int = settings.MAX_IN_FLIGHT_PER_CREDENTIAL
            ) -> threading.BoundedSemaphore:
        with cls._lock:
            if credential not in cls._slots:
                cls._slots[credential] = threading.BoundedSemaphore(limit)
            return cls._slots[credential]


def to_openai_messages(history: list) -> list:
    messages = []
    for m in history:
        if m.role == 'tool':
            messages.append({
                'role': 'tool', 'tool_call_id': m.in_reply_to,
                'content': m.content or ''
            })
            continue
        data = {'role': m.role, 'content': m.content}
        if m.tool_calls:
            data['tool_calls'] = [
                {
                    'id': call.call_id, 'type': 'function',
                    'function': {
                        'name': call.name,
                        'arguments': json.dumps(call.arguments)
                    }
                }
                for call in m.tool_calls
            ]
        messages.append(data)
    return messages


class HttpChatModel(ChatModel):
    """
    OpenAI-compatible chat-completions endpoint over HTTP

    :attributes:
        model_id(str): registry key in config.json "models"
        entry(dict): provider, baseUrl, credential, model, decoding
        retry_cap(int)=settings.GATEWAY_RETRY_CAP: provider calls per turn
    """
    TRANSIENT_STATUS = {408, 429, 500, 502, 503, 504}

    def __init__(
            self, model_id: str, entry: Optional[dict] = None, *,
            session: Optional[requests.Session] = None,
            retry_cap: int = settings.GATEWAY_RETRY_CAP,
            backoff: float = settings.GATEWAY_BACKOFF, sleep=time.sleep
            ):
        super().__init__(model_id)
        if entry is None:
            models = get_json_config()['models']
            if model_id not in models:
                raise exceptions.ToolchainConfigurationError(
                    f"model {model_id!r} is not in the model registry",
                    cause='model'
                )
            entry = models[model_id]
        self.entry = entry
        self.api_key = get_credential(entry['credential'])
        self.url = entry['baseUrl'].rstrip('/') + '/chat/completions'
        self.session = session or requests.Session()
        self.retry_cap = retry_cap
        self.backoff = backoff
        self.sleep = sleep
        self.limiter = RateLimiter.for_credential(entry['credential'])

    def complete(self, request: ChatTurnRequest) -> ChatTurnResponse:
        """
        :raise:
            exceptions.GatewayError: retries exhausted or non-transient status
            exceptions.DecodeError: malformed provider payload
        """
        payload = {
            'model': self.entry.get('model', self.model_id),
            'messages': to_openai_messages(request.history),
            **settings.DEFAULT_DECODING, **self.entry.get('decoding', {}),
            **request.decoding
        }
        if request.tool_specs:
            payload['tools'] = [s.to_dict() for s in request.tool_specs]
        last_error = None
        for attempt in range(1, self.retry_cap + 1):
            try:
                with self.limiter:
                    response = self.session.post(
                        self.url, json=payload,
                        headers={'Authorization': f"Bearer {self.api_key}"},
                        timeout=settings.GATEWAY_TIMEOUT
                    )
            except (requests.ConnectionError, requests.Timeout) as e:
                last_error = f"{e.__class__.__name__}: {e}"
            else:
                if response.status_code in self.TRANSIENT_STATUS:
                    last_error = f"status {response.status_code}"
                elif not response.ok:
                    raise exceptions.GatewayError(
                        f"{self.model_id} returned {response.status_code}: "
                        f"{response.text[:500]}", cause='status'
                    )
                else:
                    settings.logger.debug(
                        f"{self.model_id} response: {response.text}"
                    )
                    return self.decode(response.text)
            settings.logger.warning(
                f"{self.model_id} attempt {attempt}/{self.retry_cap} "
                f"failed ({last_error})"
            )
            if attempt < self.retry_cap:
                self.sleep(self.backoff * 2 ** (attempt - 1))
        raise exceptions.GatewayError(
            f"{self.model_id} failed after {self.retry_cap} attempts: "
            f"{last_error}", cause='retries'
        )

    @staticmethod
    def decode(raw_body: str) -> ChatTurnResponse:
        try:
            data = json.loads(raw_body)
            choice = data['choices'][0]['message']
            calls = [
                ToolCall(
                    call['id'], call['function']['name'],
                    json.loads(call['function'].get('arguments') or '{}')
                )
                for call in choice.get('tool_calls') or []
            ]
            message = Message(
                'assistant', choice.get('content'), calls or None
            )
        except (ValueError, KeyError, IndexError, TypeError,
                exceptions.InvariantViolationError) as e:
            raise exceptions.DecodeError(
                f"malformed provider payload: {e}", raw_body=raw_body,
                cause='decode'
            ) from None
        usage = data.get('usage') or {}
        return ChatTurnResponse(
            message,
            {
                'prompt_tokens': usage.get('prompt_tokens', 0),
                'completion_tokens': usage.get('completion_tokens', 0)
            },
            {'id': data.get('id'), 'model': data.get('model')}
        )


class ReplayModel(ChatModel):
    """Fail-closed replay; a miss raises FixtureMissError with the hash"""

    def __init__(self, model_id: str, directory: str):
        super().__init__(model_id)
        self.fixtures = FixtureStore(directory, namespace='chat')

    def complete(self, request: ChatTurnRequest) -> ChatTurnResponse:
        return ChatTurnResponse.from_dict(
            self.fixtures.lookup(request.fixture_payload())
        )


class RecordingModel(ChatModel):
    def __init__(self, inner: ChatModel, directory: str):
        super().__init__(inner.model_id)
        self.inner = inner
        self.fixtures = FixtureStore(directory, namespace='chat')

    def complete(self, request: ChatTurnRequest) -> ChatTurnResponse:
        response = self.inner.complete(request)
        self.fixtures.record(request.fixture_payload(), response.to_dict())
        return response


def _usage(request: ChatTurnRequest, message: Message) -> dict:
    prompt = sum(len((m.content or '').split()) for m in request.history)
    return {
        'prompt_tokens': prompt,
        'completion_tokens': len((message.content or '').split())
    }


class ScriptedModel(ChatModel):
    """
    Plays a fixed list of assistant turns

    usage:
    model = ScriptedModel([
        ScriptedModel.call('lean_write_file', path='t.lean', content=code),
        ScriptedModel.call('lean4_repl_runner', path='t.lean'),
        ScriptedModel.say('{"status": "success"}'),
    ])
    """

    def __init__(self, script: list, model_id: str = 'scripted'):
        super().__init__(model_id)
        if not script:
            raise exceptions.UsageError("empty script", cause='script')
        self.script = [self._to_message(x) for x in script]
        self.position = 0
        self.requests = []
        self._lock = threading.Lock()

    @staticmethod
    def call(name: str, /, **arguments) -> Message:
        return Message('assistant', None, [ToolCall('', name, arguments)])

    @staticmethod
    def say(text: str) -> Message:
        return Message('assistant', text)

    @staticmethod
    def _to_message(item) -> Message:
        if isinstance(item, Message):
            return item
        if isinstance(item, str):
            return Message('assistant', item)
        return Message.from_dict({'role': 'assistant', **item})

    def complete(self, request: ChatTurnRequest) -> ChatTurnResponse:
        with self._lock:
            if self.position >= len(self.script):
                raise exceptions.ScriptExhaustedError(
                    f"script of {len(self.script)} turns exhausted",
                    cause='script'
                )
            template = self.script[self.position]
            self.position += 1
            self.requests.append(request)
            turn = self.position
        calls = [
            ToolCall(call.call_id or f"call_{turn}_{i}", call.name,
                     dict(call.arguments))
            for i, call in enumerate(template.tool_calls or [], start=1)
        ]
        message = Message('assistant', template.content, calls or None)
        return ChatTurnResponse(message, _usage(request, message))


USER_FIELD_RE = {
    'theorem_id': re.compile(r"^Theorem id: (.+)$", re.MULTILINE),
    'filename': re.compile(r"^Target file: (.+)$", re.MULTILINE),
    'statement': re.compile(r"Natural-language statement:\n(.*)\Z", re.DOTALL),
}
SUCCESS_TEXT = canonical_json(settings.SUCCESS_DECLARATION)


def _qualified_names(code: str) -> list:
    names = []
    for match in IDENTIFIER_RE.finditer(code):
        if '.' in match.group(1) and match.group(1) not in names:
            names.append(match.group(1))
    return names


class CannedPolicyModel(ChatModel):
    """
    Offline orchestrator for stub experiments

    Plays, per theorem, an ordered list of candidate files through the
    active tools: drafter first when available, symbol checks of each
    candidate's qualified names when search is on, then write, then
    compile when feedback is on. A candidate is abandoned when search
    finds a missing name or the compiler rejects it and another candidate
    remains. Without tools the first candidate is emitted as a code block.

    :attributes:
        answers(dict[str, list[str]]): theorem id -> candidate files
    """

    def __init__(self, answers: dict, model_id: str = 'canned-policy'):
        super().__init__(model_id)
        self.answers = {
            k: [v] if isinstance(v, str) else list(v)
            for k, v in answers.items()
        }

    def complete(self, request: ChatTurnRequest) -> ChatTurnResponse:
        user = request.history[1].content
        fields = {
            k: (m.group(1).strip() if (m := regex.search(user)) else '')
            for k, regex in USER_FIELD_RE.items()
        }
        candidates = self.answers.get(fields['theorem_id']) or [
            f"theorem {fields['theorem_id'] or 'unknown'} : True"
        ]
        tools = {spec.name for spec in request.tool_specs}
        if not tools:
            message = Message(
                'assistant', f"```lean\n{candidates[0]}\n```"
            )
        else:
            message = self.next_turn(request.history, tools, fields, candidates)
        return ChatTurnResponse(message, _usage(request, message))

    def next_turn(self, history, tools, fields, candidates) -> Message:
        calls, replies = {}, {}
        for m in history:
            for call in m.tool_calls or []:
                calls[call.call_id] = call
            if m.role == 'tool':
                replies[m.in_reply_to] = json.loads(m.content)
        made = [calls[i] for i in calls]
        turn = sum(m.role == 'assistant' for m in history) + 1
        act = lambda name, /, **args: Message(
            'assistant', None, [ToolCall(f"canned_{turn}", name, args)]
        )

        if 'lean4_translator' in tools \
                and not any(c.name == 'lean4_translator' for c in made):
            return act('lean4_translator', statement=fields['statement'])
        inspected = {
            c.arguments['name']: (
                json.loads(replies[c.call_id]['payload'])
                if replies[c.call_id]['ok'] else {'exists': False}
            )
            for c in made
            if c.name == 'lean_inspect_name' and c.call_id in replies
        }
        writes = [c for c in made if c.name == 'lean_write_file']
        path = fields['filename']
        last = len(candidates) - 1
        for i, code in enumerate(candidates):
            if 'lean_inspect_name' in tools:
                for name in _qualified_names(code):
                    if name not in inspected:
                        return act('lean_inspect_name', name=name)
                missing = any(
                    not inspected[n].get('exists')
                    for n in _qualified_names(code)
                )
                if missing and i < last:
                    continue
            written = [c for c in writes if c.arguments.get('content') == code]
            if not written:
                return act('lean_write_file', path=path, content=code)
            if 'lean4_repl_runner' in tools:
                write_index = made.index(written[-1])
                runs = [
                    c for c in made[write_index + 1:]
                    if c.name == 'lean4_repl_runner'
                ]
                if not runs:
                    return act('lean4_repl_runner', path=path)
                result = replies.get(runs[-1].call_id, {})
                if not result.get('ok') and i < last:
                    continue
            break
        return Message('assistant', SUCCESS_TEXT)


class CannedJudgeModel(ChatModel):
    """
    Offline judge answering from a grade table keyed by code text

    Non-compiling code is graded min(grade, 3) with faithful=false, so
    the answers always satisfy the judge contract.
    """
    CODE_RE = re.compile(
        r"Lean 4 code:\n(.*)\n\ncompile_pass: (True|False)\s*\Z", re.DOTALL
    )

    def __init__(self, grades: dict, model_id: str = 'canned-judge', *,
                 default_grade: int = 5):
        super().__init__(model_id)
        self.grades = dict(grades)
        self.default_grade = default_grade

    def complete(self, request: ChatTurnRequest) -> ChatTurnResponse:
        match = self.CODE_RE.search(request.history[-1].content or '')
        code, compile_pass = (
            (match.group(1), match.group(2) == 'True')
            if match else ('', False)
        )
        grade = self.grades.get(code.strip(), self.default_grade)
        if not compile_pass:
            grade = min(grade, settings.COMPILE_FAIL_MAX_GRADE)
        verdict = {
            'faithful': compile_pass and grade >= settings.FAITHFUL_THRESHOLD,
            'grade': grade,
            'thought': "### BEGIN THOUGHT\ncanned grade\n### END THOUGHT"
        }
        message = Message('assistant', json.dumps(verdict))
        return ChatTurnResponse(message, _usage(request, message))


def get_model(
        model_id: str, backend: str, *, fixtures_dir: Optional[str] = None
        ) -> ChatModel:
    """
    Build the live, replay or recording handle of a registered model

    :arguments:
        backend(str): live | replay | record
    """
    if backend == 'replay':
        if not fixtures_dir:
            raise exceptions.UsageError(
                "replay needs a fixtures directory", cause='fixtures'
            )
        return ReplayModel(model_id, fixtures_dir)
    model = HttpChatModel(model_id)
    if backend == 'record':
        return RecordingModel(model, fixtures_dir)
    return model
