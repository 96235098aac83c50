"""
Compilation and symbol lookup against the pinned library snapshot

`StubChecker` is a miniature validator for offline runs, `LeanCompiler`
drives the real toolchain through a subprocess. Both return CompilerReport,
so `CompilerPool` and the toolbelt never need to know which one is in use.
"""
import hashlib
import json
import os
import re
import subprocess
import tempfile
import threading
from collections import OrderedDict
from typing import Optional

from configs import settings
from utils.decorators import rangetest
from utils.dt import Stopwatch
from utils.text import similarity
from . import exceptions
from .records import CompilerReport, Diagnostic


__all__ = [
    'StubChecker', 'LeanCompiler', 'CompilerPool', 'SymbolIndex',
    'load_stub_symbols'
]


THEOREM_RE = re.compile(r"^\s*(?:theorem|lemma)\s+([^\s:(\[{]+)", re.MULTILINE)
IDENTIFIER_RE = re.compile(r"(?<![\w.'])([A-Z][\w']*(?:\.[\w']+)*)")
LINE_COMMENT_RE = re.compile(r"--[^\n]*")
IMPORT_LINE_RE = re.compile(r"^[ \t]*import[^\n]*", re.MULTILINE)
BLOCK_COMMENT_RE = re.compile(r"/-.*?-/", re.DOTALL)
DIAGNOSTIC_RE = re.compile(
    r"^(?P<file>[^\n]*?):(?P<line>\d+):(?P<column>\d+): "
    r"(?P<severity>error|warning|info|information): ?(?P<message>.*)$"
)
BINDER_RE = re.compile(r"[(\{\[⦃]\s*([^:()\[\]{}⦃⦄]+?)\s*:")
QUANTIFIER_RE = re.compile(r"[∀∃λ]\s*([^,:]+?)\s*[,:]")
BUILTIN_SYMBOLS = frozenset({'Prop', 'Type', 'Sort'})
SORRY_WARNING = "declaration uses 'sorry'"


def load_stub_symbols(path: Optional[str] = None) -> dict:
    """name -> type signature"""
    with open(path or settings.STUB_SYMBOLS_PATH, 'r', encoding='utf-8') as f:
        return json.load(f)['symbols']


def _blank(match) -> str:
    # keep newlines so reported positions stay valid
    return re.sub(r"[^\n]", ' ', match.group(0))


def _blank_comments(content: str) -> str:
    return LINE_COMMENT_RE.sub(_blank, BLOCK_COMMENT_RE.sub(_blank, content))


class StubChecker(object):
    """
    Miniature statement validator

    Rules:
        1. the first non-empty line is `import Mathlib`
        2. exactly one theorem, and the file ends with `:= by sorry`
        3. every capitalised (possibly qualified) identifier is in the
           symbol table

    :attributes:
        symbols(dict[str, str]): name -> type signature
        snapshot_id(str)=settings.MATHLIB_SNAPSHOT
    """

    def __init__(
            self, symbols: Optional[dict] = None, *,
            snapshot_id: str = settings.MATHLIB_SNAPSHOT
            ):
        self.symbols = load_stub_symbols() if symbols is None else symbols
        self.snapshot_id = snapshot_id

    def compile(self, content: str) -> CompilerReport:
        with Stopwatch() as watch:
            messages = self._check(content)
        success = not any(d.severity == 'error' for d in messages)
        return CompilerReport(
            success=success, messages=messages, elapsed_ms=watch.elapsed_ms,
            snapshot_id=self.snapshot_id
        )

    def _check(self, content: str) -> list:
        lines = content.splitlines()
        nonempty = [(i, x) for i, x in enumerate(lines, start=1) if x.strip()]
        if not nonempty:
            return [Diagnostic('error', 'empty file: nothing to elaborate', 1, 0)]
        errors = []
        first_no, first = nonempty[0]
        if first.strip() != settings.REQUIRED_IMPORT:
            errors.append(Diagnostic(
                'error',
                f"file must begin with '{settings.REQUIRED_IMPORT}'",
                first_no, 0
            ))
        code = _blank_comments(content)
        theorems = list(THEOREM_RE.finditer(code))
        if len(theorems) != 1:
            errors.append(Diagnostic(
                'error',
                f"expected exactly one theorem, found {len(theorems)}", 1, 0
            ))
        if not code.rstrip().endswith(settings.STATEMENT_TERMINATOR):
            errors.append(Diagnostic(
                'error',
                f"statement must end with '{settings.STATEMENT_TERMINATOR}'",
                len(lines), 0
            ))
        own_names = {m.group(1) for m in theorems}
        for match in (*BINDER_RE.finditer(code), *QUANTIFIER_RE.finditer(code)):
            own_names.update(match.group(1).split())
        reported = set()
        for match in IDENTIFIER_RE.finditer(IMPORT_LINE_RE.sub(_blank, code)):
            name = match.group(1)
            if name in own_names or name in BUILTIN_SYMBOLS \
                    or name in reported or self.exists(name):
                continue
            reported.add(name)
            line = code.count('\n', 0, match.start()) + 1
            column = match.start() - (code.rfind('\n', 0, match.start()) + 1)
            errors.append(Diagnostic(
                'error', f"unknown identifier '{name}'", line, column
            ))
        if errors:
            return errors
        theorem_line = code.count('\n', 0, theorems[0].start()) + 1
        return [Diagnostic('warning', SORRY_WARNING, theorem_line, 0)]

    def exists(self, name: str) -> bool:
        return name in self.symbols

    def inspect(self, name: str, include_print: bool = False) -> dict:
        signature = self.symbols.get(name)
        result = {
            'name': name, 'exists': signature is not None,
            'type': signature
        }
        if include_print:
            result['definition'] = (
                f"{name} : {signature}" if signature is not None else None
            )
        return result


class LeanCompiler(object):
    """
    Elaborate files with the configured toolchain command

    :attributes:
        project_dir(str): Lean project pinned to `snapshot_id`
        command(list[str])=["lake", "env", "lean"]: file path is appended
        timeout(int)=settings.COMPILE_TIMEOUT: seconds
    """

    def __init__(
            self, project_dir: str, command: Optional[list] = None, *,
            timeout: int = settings.COMPILE_TIMEOUT,
            snapshot_id: str = settings.MATHLIB_SNAPSHOT
            ):
        self.project_dir = project_dir
        self.command = list(command or ['lake', 'env', 'lean'])
        self.timeout = timeout
        self.snapshot_id = snapshot_id
        if not os.path.isdir(project_dir):
            raise exceptions.ToolchainConfigurationError(
                f"Lean project directory {project_dir} does not exist",
                cause='lean'
            )

    def compile(self, content: str) -> CompilerReport:
        """
        :raise:
            exceptions.ToolchainConfigurationError: toolchain not installed
        :return:
            report(CompilerReport): a timeout is a failed report
        """
        fd, path = tempfile.mkstemp(
            dir=self.project_dir, prefix='probe_',
            suffix=settings.LEAN_FILE_SUFFIX
        )
        try:
            with os.fdopen(fd, 'w', encoding='utf-8') as f:
                f.write(content)
            with Stopwatch() as watch:
                try:
                    completed = subprocess.run(
                        self.command + [path], cwd=self.project_dir,
                        capture_output=True, timeout=self.timeout
                    )
                except FileNotFoundError:
                    raise exceptions.ToolchainConfigurationError(
                        f"toolchain command {self.command[0]!r} not found; "
                        f"install elan/lake or switch to the stub backend",
                        cause='lean'
                    ) from None
                except subprocess.TimeoutExpired:
                    completed = None
        finally:
            if os.path.exists(path):
                os.remove(path)
        if completed is None:
            return CompilerReport(
                success=False, messages=[Diagnostic(
                    'error', f"compilation timed out after {self.timeout}s"
                )], elapsed_ms=watch.elapsed_ms, snapshot_id=self.snapshot_id
            )
        output = (
            completed.stdout.decode('utf-8', 'replace') + '\n'
            + completed.stderr.decode('utf-8', 'replace')
        )
        messages = self.parse_output(output)
        success = completed.returncode == 0 \
            and not any(d.severity == 'error' for d in messages)
        if not success and not any(d.severity == 'error' for d in messages):
            messages.append(Diagnostic(
                'error', output.strip() or
                f"lean exited with code {completed.returncode}"
            ))
        return CompilerReport(
            success=success, messages=messages,
            elapsed_ms=watch.elapsed_ms, snapshot_id=self.snapshot_id
        )

    @staticmethod
    def parse_output(output: str) -> list:
        """Group `file:line:col: severity: message` blocks into diagnostics"""
        messages = []
        for raw in output.splitlines():
            match = DIAGNOSTIC_RE.match(raw)
            if match:
                severity = match.group('severity')
                messages.append(Diagnostic(
                    'info' if severity == 'information' else severity,
                    match.group('message'),
                    int(match.group('line')), int(match.group('column'))
                ))
            elif messages and raw.strip():
                messages[-1].message += '\n' + raw
        return messages

    def inspect(self, name: str, include_print: bool = False) -> dict:
        probe = f"{settings.REQUIRED_IMPORT}\n#check @{name}\n"
        if include_print:
            probe += f"#print {name}\n"
        report = self.compile(probe)
        infos = [d.message for d in report.messages if d.severity == 'info']
        signature = None
        if report.success and infos:
            signature = infos[0].split(' : ', 1)[-1].strip()
        result = {
            'name': name, 'exists': report.success, 'type': signature
        }
        if include_print:
            result['definition'] = infos[1] if len(infos) > 1 else None
        return result


class CompilerPool(object):
    """
    Bounded set of compiler sessions plus a report cache

    A cached report is reused only when both the snapshot id and the
    content hash match. At most `cache_size` reports are kept.
    """

    def __init__(self, compiler, sessions: int = settings.COMPILER_SESSIONS,
                 cache_size: int = settings.COMPILE_CACHE_SIZE):
        assert sessions >= 1, 'at least one compiler session is required'
        assert cache_size >= 1, 'cache must hold at least one report'
        self.cache_size = cache_size
        self.compiler = compiler
        self.sessions = sessions
        self._slots = threading.BoundedSemaphore(sessions)
        self._cache_lock = threading.Lock()
        self._cache = OrderedDict()
        self.hits = 0

    @property
    def snapshot_id(self) -> str:
        return self.compiler.snapshot_id

    def compile(self, content: str) -> CompilerReport:
        key = (
            self.snapshot_id,
            hashlib.sha256(content.encode('utf-8')).hexdigest()
        )
        with self._cache_lock:
            if key in self._cache:
                self.hits += 1
                self._cache.move_to_end(key)
                return self._cache[key]
        with self._slots:
            report = self.compiler.compile(content)
        with self._cache_lock:
            report = self._cache.setdefault(key, report)
            self._cache.move_to_end(key)
            while len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        return report

    def inspect(self, name: str, include_print: bool = False) -> dict:
        with self._slots:
            return self.compiler.inspect(name, include_print)


class SymbolIndex(object):
    """
    Searchable list of (name, type) pairs

    Ranking: similarity of the token against every dot-suffix of a name
    (`Polynomial.natDegree` is matched as itself and as `natDegree`),
    plus a bonus when the name lies in one of the hinted namespaces.
    Exact matches always rank first; ties break by name.
    """
    EXACT_SCORE = 2.0

    def __init__(self, entries: dict):
        self.entries = dict(entries)

    @classmethod
    def from_jsonl(cls, path: str) -> 'SymbolIndex':
        """One {"name": ..., "type": ...} object per line"""
        entries = {}
        try:
            with open(path, 'r', encoding='utf-8') as f:
                for line in f:
                    if line.strip():
                        data = json.loads(line)
                        entries[data['name']] = data.get('type')
        except FileNotFoundError:
            raise exceptions.ToolchainConfigurationError(
                f"symbol index {path} does not exist", cause='index'
            ) from None
        return cls(entries)

    @staticmethod
    def score(token: str, name: str, hints: tuple = ()) -> float:
        parts = name.split('.')
        suffixes = ['.'.join(parts[i:]) for i in range(len(parts))]
        if token in suffixes:
            base = SymbolIndex.EXACT_SCORE
        else:
            base = max(similarity(token, s) for s in suffixes)
        if any(name.startswith(hint.rstrip('.') + '.') for hint in hints):
            base += settings.NAMESPACE_HINT_BONUS
        return base

    @rangetest(
        strict_range=False, exception=exceptions.ToolArgumentError,
        top_k=(1, float('inf'))
    )
    def resolve(
            self, token: str, namespace_hints: Optional[list] = None,
            top_k: int = settings.RESOLVE_TOP_K
            ) -> list:
        """
        :raise:
            exceptions.ToolArgumentError: empty token or top_k < 1
            exceptions.ToolchainConfigurationError: empty index
        :return:
            candidates(list[dict]): name, type, score; best first
        """
        if not token or not token.strip():
            raise exceptions.ToolArgumentError("empty token", cause='token')
        if not self.entries:
            raise exceptions.ToolchainConfigurationError(
                "symbol index is empty", cause='index'
            )
        hints = tuple(namespace_hints or ())
        scored = sorted(
            (
                (-self.score(token, name, hints), name)
                for name in self.entries
            )
        )
        return [
            {
                'name': name, 'type': self.entries[name],
                'score': round(-neg, 4)
            }
            for neg, name in scored[:top_k]
        ]
