import abc
import hashlib
import json
import os
import tempfile
import threading
from typing import Optional

from configs import settings
from utils import canonical_json
from . import exceptions
from .records import EpisodeTranscript, RunRecord, ToolConfig, record_key


__all__ = ['StoreHandlerBase', 'RunStore']


class StoreHandlerBase(abc.ABC):
    def __init__(self, root: Optional[str] = None):
        self.root = root or settings.STORE_ROOT
        self._lock = threading.Lock()
        self.setup_db()

    @abc.abstractmethod
    def setup_db(self):
        pass


class RunStore(StoreHandlerBase):
    """
    Append-only store of one experiment

    Layout:
        <root>/<experiment_id>/runs.jsonl
            one RunRecord per line, later lines win for the same key
        <root>/<experiment_id>/transcripts/<sha256>.json
            EpisodeTranscript, keyed by content hash

    :attributes:
        experiment_id(str): sub-directory of `root`
        root(str)=settings.STORE_ROOT: base directory of all experiments
    """

    def __init__(self, experiment_id: str, root: Optional[str] = None):
        if not experiment_id or os.sep in experiment_id \
                or experiment_id in ('.', '..'):
            raise exceptions.UsageError(
                f"invalid experiment id {experiment_id!r}", cause='experiment'
            )
        self.experiment_id = experiment_id
        super().__init__(root)

    @property
    def path(self) -> str:
        return os.path.join(self.root, self.experiment_id)

    @property
    def runs_path(self) -> str:
        return os.path.join(self.path, settings.RUNS_FILENAME)

    @property
    def transcripts_path(self) -> str:
        return os.path.join(self.path, settings.TRANSCRIPTS_DIRNAME)

    def setup_db(self):
        try:
            os.makedirs(self.transcripts_path, exist_ok=True)
            if not os.path.exists(self.runs_path):
                open(self.runs_path, 'a', encoding='utf-8').close()
        except OSError as e:
            raise self._storage_error('initialize', e) from None

    def _storage_error(self, action: str, e: OSError):
        return exceptions.StorageError(
            f"could not {action} store at {self.path}: {e}; check free space "
            f"and permissions, then rerun the command (stored runs are kept "
            f"and will be skipped)", cause='io'
        )

    def store_run(
            self, record: RunRecord, transcript: EpisodeTranscript, *,
            overwrite: bool = False
            ) -> str:
        """
        Persist a record and its transcript

        :arguments:
            record(RunRecord): checked against its invariants
            transcript(EpisodeTranscript): stored under its content hash
        :keyword arguments:
            overwrite(bool)=False: replace an existing record with the same key
        :raise:
            exceptions.InvariantViolationError: invalid record
            exceptions.StoreConflictError: key exists and not `overwrite`
            exceptions.StorageError: the write failed
        :return:
            key(str): "<theorem_id>|<config>|<orchestrator_id>"
        """
        record.check_invariants()
        ref = transcript.content_hash()
        if record.transcript_ref != ref:
            raise exceptions.InvariantViolationError(
                f"transcript_ref {record.transcript_ref} does not match "
                f"transcript hash {ref}", cause='transcript_ref'
            )
        line = canonical_json(record.to_dict()) + '\n'
        with self._lock:
            if not overwrite and record.key in self._read_index():
                raise exceptions.StoreConflictError(
                    f"run {record.key} already stored, pass overwrite to "
                    f"replace it", cause='key'
                )
            try:
                self._write_transcript(ref, transcript)
            except OSError as e:
                raise self._storage_error('write a transcript to', e) \
                    from None
            self._append(line)
        return record.key

    def update_run(self, record: RunRecord) -> str:
        """Append a new version of an already stored record (e.g. verdicts)"""
        record.check_invariants()
        if not os.path.exists(self._transcript_file(record.transcript_ref)):
            raise exceptions.InvariantViolationError(
                f"transcript {record.transcript_ref} is not stored",
                cause='transcript_ref'
            )
        line = canonical_json(record.to_dict()) + '\n'
        with self._lock:
            self._append(line)
        return record.key

    def _append(self, line: str) -> None:
        """Append one record line; caller holds the lock"""
        try:
            with open(self.runs_path, 'ab') as f:
                # a crash may have left a torn last line; close it so the
                # new record starts on its own line
                if f.tell() > 0:
                    with open(self.runs_path, 'rb') as tail:
                        tail.seek(-1, os.SEEK_END)
                        if tail.read(1) != b'\n':
                            f.write(b'\n')
                f.write(line.encode('utf-8'))
                f.flush()
                os.fsync(f.fileno())
        except OSError as e:
            raise self._storage_error('append to', e) from None

    def _transcript_file(self, ref: str) -> str:
        return os.path.join(self.transcripts_path, ref + '.json')

    def _write_transcript(self, ref: str, transcript: EpisodeTranscript):
        target = self._transcript_file(ref)
        if os.path.exists(target):
            return
        fd, tmp = tempfile.mkstemp(dir=self.transcripts_path, suffix='.tmp')
        try:
            with os.fdopen(fd, 'w', encoding='utf-8') as f:
                f.write(canonical_json(transcript.to_dict()))
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, target)
        finally:
            if os.path.exists(tmp):
                os.remove(tmp)

    def _read_index(self) -> dict:
        """key -> record dict, last complete line wins"""
        index = {}
        try:
            with open(self.runs_path, 'r', encoding='utf-8') as f:
                for line in f:
                    # a concurrent writer may have left a partial last line
                    if not line.endswith('\n'):
                        break
                    try:
                        data = json.loads(line)
                        key = record_key(
                            data['theorem_id'], data['config'],
                            data['orchestrator_id']
                        )
                    except (ValueError, KeyError, TypeError):
                        settings.logger.warning(
                            f"Skipping unreadable line in {self.runs_path}"
                        )
                        continue
                    index[key] = data
        except FileNotFoundError:
            return {}
        except OSError as e:
            raise self._storage_error('read', e) from None
        return index

    def all_runs(self) -> list:
        return self.query_runs()

    def query_runs(
            self, config=None, domain: Optional[str] = None,
            orchestrator_id: Optional[str] = None
            ) -> list:
        """
        :arguments:
            config(ToolConfig | str | None): filter by configuration
            domain(str | None): filter by domain
            orchestrator_id(str | None): filter by orchestrator
        :return:
            runs(list[RunRecord]): ordered by (theorem_id, config, orchestrator)
        """
        if config is not None and not isinstance(config, ToolConfig):
            config = ToolConfig.from_code(config)
        runs = []
        for data in self._read_index().values():
            if config is not None and data['config'] != config.code():
                continue
            if domain is not None and data['domain'] != str(domain):
                continue
            if orchestrator_id is not None \
                    and data['orchestrator_id'] != orchestrator_id:
                continue
            runs.append(RunRecord.from_dict(data))
        return sorted(
            runs,
            key=lambda r: (r.theorem_id, r.config.code(), r.orchestrator_id)
        )

    def has_run(self, theorem_id: str, config, orchestrator_id: str) -> bool:
        return record_key(theorem_id, config, orchestrator_id) \
            in self._read_index()

    def completed_ids(self, config, orchestrator_id: str) -> set:
        return {
            r.theorem_id
            for r in self.query_runs(config, orchestrator_id=orchestrator_id)
        }

    def load_transcript(self, ref: str) -> EpisodeTranscript:
        """
        :raise:
            exceptions.InvariantViolationError: unknown reference
        """
        try:
            with open(self._transcript_file(ref), 'r', encoding='utf-8') as f:
                return EpisodeTranscript.from_dict(json.load(f))
        except FileNotFoundError:
            raise exceptions.InvariantViolationError(
                f"transcript {ref} is not stored", cause='transcript_ref'
            ) from None

    def store_hash(self) -> str:
        """sha256 of the run file, for report manifests"""
        sha = hashlib.sha256()
        with self._lock:
            with open(self.runs_path, 'rb') as f:
                for chunk in iter(lambda: f.read(1 << 16), b''):
                    sha.update(chunk)
        return sha.hexdigest()

    def __len__(self):
        return len(self._read_index())
