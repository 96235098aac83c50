import abc
import functools
import json
import os
from dataclasses import dataclass
from typing import Optional

import requests

from configs import settings
from utils import canonical_json, get_json_config
from . import exceptions
from .clients import DrafterClient, SearchClient
from .fixtures import FixtureStore
from .lean import (
    CompilerPool, LeanCompiler, StubChecker, SymbolIndex, load_stub_symbols
)
from .records import CompilerReport, Diagnostic, ToolCall, ToolConfig, ToolOutcome


__all__ = [
    'ToolSpec', 'load_tool_block', 'tool_specs', 'Workspace', 'Backend',
    'StubBackend', 'LiveBackend', 'ReplayBackend', 'RecordingBackend',
    'Toolbelt'
]


JSON_TYPES = {
    'string': str, 'boolean': bool, 'array': list, 'object': dict,
    'integer': int
}


@dataclass(frozen=True)
class ToolSpec:
    name: str
    signature: str
    summary: str
    parameters: dict

    def to_dict(self) -> dict:
        """Provider tool-calling format"""
        return {
            'type': 'function',
            'function': {
                'name': self.name, 'description': self.summary,
                'parameters': self.parameters
            }
        }

    def render(self) -> str:
        return f"{self.signature}\n  {self.summary}"

    def check_arguments(self, arguments: dict) -> None:
        """
        :raise:
            exceptions.ToolArgumentError: missing, unknown or mistyped argument
        """
        if not isinstance(arguments, dict):
            raise exceptions.ToolArgumentError(
                f"{self.name}: arguments must be a JSON object", cause='args'
            )
        properties = self.parameters.get('properties', {})
        for name in self.parameters.get('required', []):
            if name not in arguments:
                raise exceptions.ToolArgumentError(
                    f"{self.name}: missing required argument '{name}'",
                    cause=name
                )
        for name, value in arguments.items():
            if name not in properties:
                raise exceptions.ToolArgumentError(
                    f"{self.name}: unknown argument '{name}'", cause=name
                )
            expected = JSON_TYPES[properties[name]['type']]
            # bool is an int subclass, but never a valid integer here
            if not isinstance(value, expected) or (
                    expected is int and isinstance(value, bool)):
                raise exceptions.ToolArgumentError(
                    f"{self.name}: argument '{name}' must be of type "
                    f"{properties[name]['type']}", cause=name
                )


@functools.lru_cache(maxsize=None)
def load_tool_block() -> tuple:
    """(header, {name: ToolSpec}) in block order"""
    with open(
            os.path.join(settings.TEMPLATES_DIR, 'tool_block.json'), 'r',
            encoding='utf-8') as f:
        block = json.load(f)
    specs = {
        tool['name']: ToolSpec(
            tool['name'], tool['signature'], tool['summary'],
            tool['parameters']
        )
        for tool in block['tools']
    }
    assert list(specs) == settings.TOOL_NAMES, 'tool block out of sync'
    return block['header'], specs


def tool_specs(config: ToolConfig) -> list:
    _, specs = load_tool_block()
    return [specs[name] for name in config.active_tools()]


class Workspace(object):
    """
    One episode directory; every path argument is resolved inside it

    :attributes:
        root(str): created on construction
    """

    def __init__(self, root: str):
        os.makedirs(root, exist_ok=True)
        self.root = os.path.realpath(root)
        self.last_written = None

    def resolve(self, path: str) -> str:
        """
        :raise:
            exceptions.SandboxViolationError: path leaves the workspace
        """
        if not path or not isinstance(path, str):
            raise exceptions.SandboxViolationError(
                "empty path", cause='path'
            )
        target = os.path.realpath(os.path.join(self.root, path))
        if os.path.commonpath([self.root, target]) != self.root \
                or target == self.root:
            raise exceptions.SandboxViolationError(
                f"path {path!r} is outside workspace", cause='path'
            )
        return target

    def write(self, path: str, content: str) -> int:
        target = self.resolve(path)
        data = content.encode('utf-8')
        os.makedirs(os.path.dirname(target), exist_ok=True)
        with open(target, 'wb') as f:
            f.write(data)
        self.last_written = path
        return len(data)

    def read(self, path: str) -> str:
        with open(self.resolve(path), 'rb') as f:
            return f.read().decode('utf-8')


class Backend(abc.ABC):
    """What the tools run against; all return plain JSON-able values"""

    @abc.abstractmethod
    def compile(self, content: str) -> CompilerReport:
        pass

    @abc.abstractmethod
    def inspect(
            self, name: str, imports: Optional[list] = None,
            include_print: bool = False
            ) -> dict:
        pass

    @abc.abstractmethod
    def resolve(
            self, token: str, namespace_hints: Optional[list] = None,
            imports: Optional[list] = None,
            top_k: int = settings.RESOLVE_TOP_K
            ) -> list:
        pass

    @abc.abstractmethod
    def translate(self, statement: str) -> str:
        pass

    @abc.abstractmethod
    def search(self, query: str) -> list:
        pass


class StubBackend(Backend):
    """
    Offline backend: miniature checker, JSON symbol table, canned
    drafts and search results

    :keyword arguments:
        symbols(dict | None): name -> type, default configs/stub_symbols.json
        drafts(dict | None): statement -> draft
        search_results(dict | None): query -> list of results
    """

    def __init__(
            self, *, symbols: Optional[dict] = None,
            drafts: Optional[dict] = None,
            search_results: Optional[dict] = None,
            sessions: int = settings.COMPILER_SESSIONS
            ):
        symbols = load_stub_symbols() if symbols is None else symbols
        self.checker = StubChecker(symbols)
        self.pool = CompilerPool(self.checker, sessions)
        self.index = SymbolIndex(symbols)
        self.drafts = drafts or {}
        self.search_results = search_results or {}

    def compile(self, content: str) -> CompilerReport:
        return self.pool.compile(content)

    def inspect(self, name, imports=None, include_print=False) -> dict:
        return self.pool.inspect(name, include_print)

    def resolve(
            self, token, namespace_hints=None, imports=None,
            top_k=settings.RESOLVE_TOP_K
            ) -> list:
        return self.index.resolve(token, namespace_hints, top_k)

    def translate(self, statement: str) -> str:
        if statement not in self.drafts:
            raise requests.ConnectionError("drafter is not reachable")
        return self.drafts[statement]

    def search(self, query: str) -> list:
        return list(self.search_results.get(query, []))


class LiveBackend(Backend):
    """Lean toolchain subprocess plus HTTP drafter and search clients"""

    def __init__(
            self, config: Optional[dict] = None, *,
            sessions: int = settings.COMPILER_SESSIONS,
            drafter: Optional[DrafterClient] = None,
            searcher: Optional[SearchClient] = None
            ):
        config = config or get_json_config()
        lean = config['lean']
        self.pool = CompilerPool(
            LeanCompiler(lean['projectDir'], lean.get('command')), sessions
        )
        self.index_path = lean['symbolIndex']
        self._index = None
        self.drafter = drafter or DrafterClient(config['drafter'])
        self.searcher = searcher or SearchClient(config['search'])

    @property
    def index(self) -> SymbolIndex:
        if self._index is None:
            self._index = SymbolIndex.from_jsonl(self.index_path)
        return self._index

    def compile(self, content: str) -> CompilerReport:
        return self.pool.compile(content)

    def inspect(self, name, imports=None, include_print=False) -> dict:
        return self.pool.inspect(name, include_print)

    def resolve(
            self, token, namespace_hints=None, imports=None,
            top_k=settings.RESOLVE_TOP_K
            ) -> list:
        return self.index.resolve(token, namespace_hints, top_k)

    def translate(self, statement: str) -> str:
        return self.drafter.translate(statement)

    def search(self, query: str) -> list:
        return self.searcher.search(query)


class ReplayBackend(Backend):
    """
    Serve recorded tool responses; a miss raises FixtureMissError

    Recorded provider failures replay as `requests.ConnectionError`.
    """

    def __init__(self, directory: str, *,
                 snapshot_id: str = settings.MATHLIB_SNAPSHOT):
        self.fixtures = FixtureStore(directory, namespace='tools')
        self.snapshot_id = snapshot_id

    def request(self, tool: str, **arguments) -> dict:
        return {'tool': tool, 'snapshot': self.snapshot_id, **arguments}

    def _replay(self, tool: str, **arguments):
        response = self.fixtures.lookup(self.request(tool, **arguments))
        if isinstance(response, dict) and 'error' in response:
            raise requests.ConnectionError(response['error'])
        return response['result']

    def compile(self, content: str) -> CompilerReport:
        return CompilerReport.from_dict(self._replay('compile', content=content))

    def inspect(self, name, imports=None, include_print=False) -> dict:
        return self._replay(
            'inspect', name=name, imports=imports or [],
            include_print=include_print
        )

    def resolve(
            self, token, namespace_hints=None, imports=None,
            top_k=settings.RESOLVE_TOP_K
            ) -> list:
        return self._replay(
            'resolve', token=token, namespace_hints=namespace_hints or [],
            imports=imports or [], top_k=top_k
        )

    def translate(self, statement: str) -> str:
        return self._replay('translate', statement=statement)

    def search(self, query: str) -> list:
        return self._replay('search', query=query)


class RecordingBackend(ReplayBackend):
    """Delegate to `inner` and store every response for later replay"""

    def __init__(self, inner: Backend, directory: str, **kwargs):
        super().__init__(directory, **kwargs)
        self.inner = inner

    def _record(self, tool: str, call, encode=lambda x: x, **arguments):
        request = self.request(tool, **arguments)
        try:
            result = call()
        except requests.RequestException as e:
            self.fixtures.record(request, {'error': str(e)})
            raise
        self.fixtures.record(request, {'result': encode(result)})
        return result

    def compile(self, content: str) -> CompilerReport:
        return self._record(
            'compile', lambda: self.inner.compile(content),
            lambda report: report.to_dict(), content=content
        )

    def inspect(self, name, imports=None, include_print=False) -> dict:
        return self._record(
            'inspect', lambda: self.inner.inspect(name, imports, include_print),
            name=name, imports=imports or [], include_print=include_print
        )

    def resolve(
            self, token, namespace_hints=None, imports=None,
            top_k=settings.RESOLVE_TOP_K
            ) -> list:
        return self._record(
            'resolve',
            lambda: self.inner.resolve(token, namespace_hints, imports, top_k),
            token=token, namespace_hints=namespace_hints or [],
            imports=imports or [], top_k=top_k
        )

    def translate(self, statement: str) -> str:
        return self._record(
            'translate', lambda: self.inner.translate(statement),
            statement=statement
        )

    def search(self, query: str) -> list:
        return self._record(
            'search', lambda: self.inner.search(query), query=query
        )


class Toolbelt(object):
    """
    The tools one episode may call

    Tool errors become failed outcomes so the agent can repair them.
    Configuration errors and replay misses propagate and stop the run.

    :attributes:
        config(ToolConfig): decides which tools are active
        backend(Backend): compiler, symbol and network access
        workspace(Workspace): episode directory
    """

    def __init__(self, config: ToolConfig, backend: Backend,
                 workspace: Workspace, *, logger=None):
        self.config = config
        self.backend = backend
        self.workspace = workspace
        self.logger = logger or settings.logger
        self.active = config.active_tools()
        self.last_report = None

    def specs(self) -> list:
        return tool_specs(self.config)

    def execute(self, call: ToolCall) -> ToolOutcome:
        if call.name not in self.active:
            self.logger.warning(
                f"Call to inactive tool {call.name} under config {self.config}"
            )
            return ToolOutcome.failure(
                f"tool '{call.name}' is not available in this configuration"
            )
        _, specs = load_tool_block()
        try:
            specs[call.name].check_arguments(call.arguments)
            outcome = getattr(self, 'run_' + call.name)(**call.arguments)
        except exceptions.ToolArgumentError as e:
            outcome = ToolOutcome.failure(f"invalid arguments: {e}")
        except exceptions.SandboxViolationError as e:
            self.logger.warning(f"Sandbox refusal: {e}")
            outcome = ToolOutcome.failure(f"refused: {e}")
        self.logger.debug(
            f"{call.name} -> ok={outcome.ok} ({len(outcome.payload)} chars)"
        )
        return outcome

    def run_lean_write_file(self, path: str, content: str) -> ToolOutcome:
        try:
            size = self.workspace.write(path, content)
        except (OSError, UnicodeError) as e:
            return ToolOutcome.failure(f"could not write {path}: {e}")
        return ToolOutcome(
            ok=True, payload=canonical_json({'path': path, 'bytes': size})
        )

    def run_lean4_repl_runner(
            self, path: Optional[str] = None, code: Optional[str] = None
            ) -> ToolOutcome:
        if path is None and code is None:
            path = self.workspace.last_written
        if path is not None:
            try:
                code = self.workspace.read(path)
            except FileNotFoundError:
                return ToolOutcome.failure(f"file {path} does not exist")
            except (OSError, UnicodeError) as e:
                return ToolOutcome.failure(f"could not read {path}: {e}")
        if code is None:
            return ToolOutcome.failure("no Lean file has been written yet")
        try:
            code.encode('utf-8')
        except UnicodeError as e:
            return ToolOutcome.failure(f"code is not valid UTF-8: {e}")
        self.last_report = self.backend.compile(code)
        return self.last_report.to_outcome()

    def run_lean_inspect_name(
            self, name: str, imports: Optional[list] = None,
            include_print: bool = False
            ) -> ToolOutcome:
        if not name.strip():
            raise exceptions.ToolArgumentError("empty name", cause='name')
        result = self.backend.inspect(name.strip(), imports, include_print)
        return ToolOutcome(ok=True, payload=canonical_json(result))

    def run_lean_resolve_name(
            self, token: str, namespace_hints: Optional[list] = None,
            imports: Optional[list] = None,
            top_k: int = settings.RESOLVE_TOP_K
            ) -> ToolOutcome:
        candidates = self.backend.resolve(token, namespace_hints, imports, top_k)
        return ToolOutcome(
            ok=True, payload=canonical_json({'candidates': candidates})
        )

    def run_lean4_translator(self, statement: str) -> ToolOutcome:
        try:
            draft = self.backend.translate(statement)
        except (requests.RequestException, exceptions.DecodeError) as e:
            self.logger.warning(f"Drafter unavailable: {e}")
            return ToolOutcome(
                ok=False, payload='drafter unavailable',
                diagnostics=[Diagnostic('error', f"connectivity: {e}")]
            )
        return ToolOutcome(ok=True, payload=draft)

    def run_search_online(self, query: str) -> ToolOutcome:
        if not query.strip():
            raise exceptions.ToolArgumentError("empty query", cause='query')
        try:
            results = self.backend.search(query)
        except requests.RequestException as e:
            self.logger.warning(f"Search provider error: {e}")
            return ToolOutcome(
                ok=False, payload='search provider error',
                diagnostics=[Diagnostic('error', f"provider: {e}")]
            )
        return ToolOutcome(
            ok=True, payload=canonical_json({'results': results})
        )
