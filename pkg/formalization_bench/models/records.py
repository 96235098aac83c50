"""
Serializable domain records shared by the controller, the store and analysis

Every record has `to_dict()` / `from_dict()` producing plain JSON values, so a
record written by the store reloads field-equal.
"""
import itertools
from dataclasses import dataclass, field
from typing import Optional

from configs import settings
from utils import canonical_json, stable_hash
from . import exceptions


__all__ = [
    'ToolConfig', 'ToolCall', 'Message', 'Diagnostic', 'ToolOutcome',
    'CompilerReport', 'EpisodeTranscript', 'EpisodeResult', 'JudgeVerdict',
    'RunRecord', 'SUCCESS', 'FAILURE'
]


SUCCESS = 'Success'
FAILURE = 'Failure'
ROLES = ('system', 'user', 'assistant', 'tool')
SEVERITIES = ('error', 'warning', 'info')
FACTORS = ('t', 'f', 's')


@dataclass(frozen=True, order=True)
class ToolConfig:
    """
    The (T, F, S) bit triple selecting the active tool groups

    :attributes:
        t(bool): expert drafter (lean4_translator)
        f(bool): compiler feedback (lean4_repl_runner)
        s(bool): symbol search (inspect, resolve, search_online)
    """
    t: bool = False
    f: bool = False
    s: bool = False

    def code(self) -> str:
        return ''.join('1' if getattr(self, x) else '0' for x in FACTORS)

    def __str__(self):
        return self.code()

    @classmethod
    def from_code(cls, code: str) -> 'ToolConfig':
        code = str(code).strip()
        if len(code) != 3 or any(c not in '01' for c in code):
            raise exceptions.UsageError(
                f"invalid config code {code!r}, expected 000..111",
                cause='config'
            )
        return cls(*(c == '1' for c in code))

    @classmethod
    def all(cls) -> list:
        """The eight configurations in T,F,S bit order (000, 001, ... 111)"""
        return [cls(*bits) for bits in itertools.product((False, True), repeat=3)]

    @property
    def is_baseline(self) -> bool:
        return not (self.t or self.f or self.s)

    def level(self, factor: str) -> int:
        return int(getattr(self, factor.lower()))

    def active_tools(self) -> list:
        """Tool names exposed under this config, in tool-block order"""
        if self.is_baseline:
            return []
        active = {settings.WORKSPACE_TOOL}
        for factor, tools in settings.TOOL_GROUPS.items():
            if getattr(self, factor):
                active.update(tools)
        return [name for name in settings.TOOL_NAMES if name in active]


@dataclass
class ToolCall:
    call_id: str
    name: str
    arguments: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            'call_id': self.call_id, 'name': self.name,
            'arguments': self.arguments
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'ToolCall':
        return cls(data['call_id'], data['name'], data.get('arguments') or {})


@dataclass
class Message:
    """
    One entry of the episode history

    :attributes:
        role(str): system | user | assistant | tool
        content(str | None): text
        tool_calls(list[ToolCall] | None): assistant tool calls
        in_reply_to(str | None): call id answered by a tool message
    """
    role: str
    content: Optional[str] = None
    tool_calls: Optional[list] = None
    in_reply_to: Optional[str] = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise exceptions.InvariantViolationError(
                f"unknown message role {self.role!r}", cause='role'
            )
        if self.role == 'assistant' and not self.content \
                and not self.tool_calls:
            raise exceptions.InvariantViolationError(
                "assistant message carries neither content nor tool calls",
                cause='assistant'
            )
        if self.role == 'tool' and not self.in_reply_to:
            raise exceptions.InvariantViolationError(
                "tool message without in_reply_to", cause='tool'
            )

    def to_dict(self) -> dict:
        data = {'role': self.role, 'content': self.content}
        if self.tool_calls:
            data['tool_calls'] = [call.to_dict() for call in self.tool_calls]
        if self.in_reply_to:
            data['in_reply_to'] = self.in_reply_to
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'Message':
        calls = data.get('tool_calls')
        return cls(
            role=data['role'], content=data.get('content'),
            tool_calls=[ToolCall.from_dict(c) for c in calls] if calls else None,
            in_reply_to=data.get('in_reply_to')
        )


@dataclass
class Diagnostic:
    severity: str
    message: str
    line: Optional[int] = None
    column: Optional[int] = None

    def __post_init__(self):
        if self.severity not in SEVERITIES:
            raise exceptions.InvariantViolationError(
                f"unknown severity {self.severity!r}", cause='severity'
            )

    def to_dict(self) -> dict:
        return {
            'severity': self.severity, 'message': self.message,
            'line': self.line, 'column': self.column
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'Diagnostic':
        return cls(
            data['severity'], data['message'],
            data.get('line'), data.get('column')
        )

    def __str__(self):
        position = (
            f"{self.line}:{self.column}: " if self.line is not None else ""
        )
        return f"{position}{self.severity}: {self.message}"


@dataclass
class ToolOutcome:
    ok: bool
    payload: str = ''
    diagnostics: list = field(default_factory=list)

    def __post_init__(self):
        if not self.ok and not self.diagnostics and not self.payload:
            raise exceptions.InvariantViolationError(
                "failed tool outcome without an error description",
                cause='outcome'
            )

    @classmethod
    def failure(cls, message: str, *, payload: str = '') -> 'ToolOutcome':
        return cls(
            ok=False, payload=payload or message,
            diagnostics=[Diagnostic('error', message)]
        )

    def to_dict(self) -> dict:
        return {
            'ok': self.ok, 'payload': self.payload,
            'diagnostics': [d.to_dict() for d in self.diagnostics]
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'ToolOutcome':
        return cls(
            data['ok'], data.get('payload', ''),
            [Diagnostic.from_dict(d) for d in data.get('diagnostics', [])]
        )


@dataclass
class CompilerReport:
    success: bool
    messages: list = field(default_factory=list)
    elapsed_ms: int = 0
    snapshot_id: str = settings.MATHLIB_SNAPSHOT

    def __post_init__(self):
        if self.success and any(d.severity == 'error' for d in self.messages):
            raise exceptions.InvariantViolationError(
                "successful compile report carries an error diagnostic",
                cause='report'
            )

    def to_dict(self) -> dict:
        return {
            'success': self.success,
            'messages': [d.to_dict() for d in self.messages],
            'elapsed_ms': self.elapsed_ms, 'snapshot_id': self.snapshot_id
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'CompilerReport':
        return cls(
            data['success'],
            [Diagnostic.from_dict(d) for d in data.get('messages', [])],
            data.get('elapsed_ms', 0),
            data.get('snapshot_id', settings.MATHLIB_SNAPSHOT)
        )

    def to_outcome(self) -> ToolOutcome:
        lines = [str(d) for d in self.messages]
        if not self.success and not lines:
            lines = ['error: compilation failed']
        return ToolOutcome(
            ok=self.success,
            payload=canonical_json({
                'success': self.success, 'snapshot_id': self.snapshot_id,
                'messages': lines
            }),
            diagnostics=list(self.messages) or (
                [] if self.success
                else [Diagnostic('error', 'compilation failed')]
            )
        )


@dataclass
class EpisodeTranscript:
    """
    Full history of one agent run

    :attributes:
        messages(list[Message]): [system, user, assistant, tool, ...]
        tool_outcomes(list[tuple[str, ToolOutcome]]): (call_id, outcome)
        steps(int): orchestrator invocations, equals assistant messages
    """
    messages: list = field(default_factory=list)
    tool_outcomes: list = field(default_factory=list)
    steps: int = 0

    def append(self, message: Message) -> None:
        self.messages.append(message)
        if message.role == 'assistant':
            self.steps += 1

    def tool_calls(self) -> list:
        return [
            call
            for message in self.messages if message.role == 'assistant'
            for call in (message.tool_calls or [])
        ]

    def tool_call_names(self) -> list:
        return [call.name for call in self.tool_calls()]

    def outcome_for(self, call_id: str) -> Optional[ToolOutcome]:
        for reply_id, outcome in self.tool_outcomes:
            if reply_id == call_id:
                return outcome
        return None

    def last_compiler_outcome(self) -> Optional[ToolOutcome]:
        for call in reversed(self.tool_calls()):
            if call.name == 'lean4_repl_runner':
                return self.outcome_for(call.call_id)
        return None

    def check_integrity(self) -> None:
        """
        Verify the structural invariants of the transcript

        :raise:
            exceptions.InvariantViolationError: if any invariant fails
        """
        if len(self.messages) < 2 or self.messages[0].role != 'system' \
                or self.messages[1].role != 'user':
            raise exceptions.InvariantViolationError(
                "transcript must open with system and user messages",
                cause='transcript'
            )
        assistants = sum(m.role == 'assistant' for m in self.messages)
        if assistants != self.steps:
            raise exceptions.InvariantViolationError(
                f"steps={self.steps} but {assistants} assistant messages",
                cause='steps'
            )
        issued, replied = {}, set()
        for message in self.messages:
            if message.role == 'assistant':
                for call in message.tool_calls or []:
                    if call.call_id in issued:
                        raise exceptions.InvariantViolationError(
                            f"duplicate call id {call.call_id}", cause='call'
                        )
                    issued[call.call_id] = call
            elif message.role == 'tool':
                if message.in_reply_to not in issued \
                        or message.in_reply_to in replied:
                    raise exceptions.InvariantViolationError(
                        f"tool reply {message.in_reply_to} matches no "
                        f"pending call", cause='reply'
                    )
                replied.add(message.in_reply_to)
        if set(issued) != replied:
            raise exceptions.InvariantViolationError(
                "tool calls without reply: "
                + ', '.join(sorted(set(issued) - replied)), cause='reply'
            )

    def to_dict(self) -> dict:
        return {
            'messages': [m.to_dict() for m in self.messages],
            'tool_outcomes': [
                [call_id, outcome.to_dict()]
                for call_id, outcome in self.tool_outcomes
            ],
            'steps': self.steps
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'EpisodeTranscript':
        return cls(
            [Message.from_dict(m) for m in data['messages']],
            [
                (call_id, ToolOutcome.from_dict(outcome))
                for call_id, outcome in data.get('tool_outcomes', [])
            ],
            data.get('steps', 0)
        )

    def content_hash(self) -> str:
        return stable_hash(self.to_dict())


@dataclass
class EpisodeResult:
    status: str
    transcript: EpisodeTranscript
    final_code: Optional[str] = None
    steps_used: int = 0
    annotations: list = field(default_factory=list)

    @property
    def succeeded(self) -> bool:
        return self.status == SUCCESS


@dataclass
class JudgeVerdict:
    judge_id: str
    faithful: bool
    grade: int
    thought: str = ''

    def __post_init__(self):
        if isinstance(self.grade, bool) or not isinstance(self.grade, int) \
                or not 0 <= self.grade <= 10:
            raise exceptions.InvariantViolationError(
                f"grade {self.grade!r} outside 0..10", cause='grade'
            )

    def to_dict(self) -> dict:
        return {
            'judge_id': self.judge_id, 'faithful': self.faithful,
            'grade': self.grade, 'thought': self.thought
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'JudgeVerdict':
        return cls(
            data['judge_id'], data['faithful'], data['grade'],
            data.get('thought', '')
        )


@dataclass
class RunRecord:
    """
    Stored outcome of one (theorem, config, orchestrator) episode

    :attributes:
        theorem_id(str), domain(str), config(ToolConfig),
        orchestrator_id(str): identify the run
        steps_used(int): orchestrator invocations, <= t_max
        final_code(str | None): last written file or extracted block
        compile_pass(bool): compile gate result
        verdicts(dict[str, JudgeVerdict]): judge id -> verdict
        faithful_primary, faithful_consensus(bool): faithfulness flags
        transcript_ref(str): content hash of the stored transcript
        wall_time_ms(int): episode wall time
        t_max(int): step budget the episode ran under
        annotations(list[str]): episode and judge flags
        judge_invalid(list[str]): judges that exhausted their retries
    """
    theorem_id: str
    domain: str
    config: ToolConfig
    orchestrator_id: str
    steps_used: int
    final_code: Optional[str]
    compile_pass: bool
    transcript_ref: str
    wall_time_ms: int = 0
    verdicts: dict = field(default_factory=dict)
    faithful_primary: bool = False
    faithful_consensus: bool = False
    t_max: int = settings.T_MAX
    annotations: list = field(default_factory=list)
    judge_invalid: list = field(default_factory=list)

    @property
    def key(self) -> str:
        return record_key(self.theorem_id, self.config, self.orchestrator_id)

    def check_invariants(self) -> None:
        """
        :raise:
            exceptions.InvariantViolationError: if the record is inconsistent
        """
        problems = []
        if not self.theorem_id or not self.orchestrator_id:
            problems.append("theorem_id and orchestrator_id are required")
        if not isinstance(self.config, ToolConfig):
            problems.append("config must be a ToolConfig")
        if self.steps_used < 0 or self.wall_time_ms < 0:
            problems.append("steps_used and wall_time_ms must be >= 0")
        if self.steps_used > self.t_max:
            problems.append(
                f"steps_used={self.steps_used} exceeds t_max={self.t_max}"
            )
        if not self.compile_pass and (
                self.faithful_primary or self.faithful_consensus):
            problems.append("faithful flags set on a non-compiling run")
        if self.faithful_consensus and not self.faithful_primary:
            problems.append("consensus faithful without primary faithful")
        if not self.transcript_ref:
            problems.append("transcript_ref is required")
        if problems:
            raise exceptions.InvariantViolationError(
                f"invalid run record {self.key}: " + '; '.join(problems),
                cause='record'
            )

    def to_dict(self) -> dict:
        return {
            'theorem_id': self.theorem_id, 'domain': self.domain,
            'config': self.config.code(),
            'orchestrator_id': self.orchestrator_id,
            'steps_used': self.steps_used, 'final_code': self.final_code,
            'compile_pass': self.compile_pass,
            'verdicts': {k: v.to_dict() for k, v in self.verdicts.items()},
            'faithful_primary': self.faithful_primary,
            'faithful_consensus': self.faithful_consensus,
            'transcript_ref': self.transcript_ref,
            'wall_time_ms': self.wall_time_ms, 't_max': self.t_max,
            'annotations': list(self.annotations),
            'judge_invalid': list(self.judge_invalid)
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'RunRecord':
        return cls(
            theorem_id=data['theorem_id'], domain=data['domain'],
            config=ToolConfig.from_code(data['config']),
            orchestrator_id=data['orchestrator_id'],
            steps_used=data['steps_used'], final_code=data.get('final_code'),
            compile_pass=data['compile_pass'],
            transcript_ref=data['transcript_ref'],
            wall_time_ms=data.get('wall_time_ms', 0),
            verdicts={
                k: JudgeVerdict.from_dict(v)
                for k, v in data.get('verdicts', {}).items()
            },
            faithful_primary=data.get('faithful_primary', False),
            faithful_consensus=data.get('faithful_consensus', False),
            t_max=data.get('t_max', settings.T_MAX),
            annotations=list(data.get('annotations', [])),
            judge_invalid=list(data.get('judge_invalid', []))
        )


def record_key(theorem_id: str, config, orchestrator_id: str) -> str:
    code = config.code() if isinstance(config, ToolConfig) else str(config)
    return f"{theorem_id}|{code}|{orchestrator_id}"
