import enum
import json
import re
from collections import Counter
from dataclasses import dataclass

from configs import settings
from . import exceptions


__all__ = ['Domain', 'TheoremItem', 'load_corpus', 'corpus_counts']


class Domain(str, enum.Enum):
    REAL_ANALYSIS = 'RealAnalysis'
    COMPLEX_ANALYSIS = 'ComplexAnalysis'
    TOPOLOGY = 'Topology'
    ALGEBRA = 'Algebra'

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class TheoremItem:
    """
    One natural-language statement, the unit of evaluation

    :attributes:
        id(str): unique within a corpus, e.g. "jirilebl_ca_ca_17658"
        domain(Domain): one of the four benchmark domains
        statement_text(str): the informal theorem
        source_ref(str): free-text provenance
    """
    id: str
    domain: Domain
    statement_text: str
    source_ref: str = ''

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id.strip():
            raise exceptions.CorpusError("empty theorem id", cause='id')
        if not re.fullmatch(settings.THEOREM_ID_PATTERN, self.id):
            raise exceptions.CorpusError(
                f"theorem id {self.id!r} is not a safe file name", cause='id'
            )
        if not isinstance(self.domain, Domain):
            try:
                object.__setattr__(self, 'domain', Domain(self.domain))
            except ValueError:
                raise exceptions.CorpusError(
                    f"unknown domain {self.domain!r}", cause='domain'
                ) from None
        if not isinstance(self.statement_text, str) \
                or not self.statement_text.strip():
            raise exceptions.CorpusError(
                f"empty statement for {self.id}", cause='statement'
            )

    @property
    def lean_filename(self) -> str:
        return self.id + settings.LEAN_FILE_SUFFIX

    def to_dict(self) -> dict:
        return {
            'id': self.id, 'domain': self.domain.value,
            'statement': self.statement_text, 'source': self.source_ref
        }


def load_corpus(path: str) -> list:
    """
    Load a line-delimited JSON corpus

    :arguments:
        path(str): file with one {"id", "domain", "statement", "source"}
            object per line; blank lines are ignored
    :raise:
        exceptions.CorpusError: missing file, malformed line (line number),
            unknown domain (line number) or empty corpus
        exceptions.DuplicateIdError: an id occurs twice (names the id)
    :return:
        items(list[TheoremItem]): in file order
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            lines = f.read().splitlines()
    except FileNotFoundError:
        raise exceptions.CorpusError(
            f"corpus file {path} does not exist", cause='path'
        ) from None
    except UnicodeDecodeError as e:
        raise exceptions.CorpusError(
            f"corpus file {path} is not UTF-8: {e.reason}", cause='path'
        ) from None
    except OSError as e:
        raise exceptions.CorpusError(
            f"cannot read corpus file {path}: {e}", cause='path'
        ) from None
    items, seen = [], {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except ValueError as e:
            raise exceptions.CorpusError(
                f"malformed record on line {lineno}: {e}", cause='line'
            ) from None
        if not isinstance(record, dict) or \
                any(k not in record for k in ('id', 'domain', 'statement')):
            raise exceptions.CorpusError(
                f"malformed record on line {lineno}: expected keys "
                f"{', '.join(settings.CORPUS_FIELDS)}", cause='line'
            )
        if not isinstance(record['id'], str):
            raise exceptions.CorpusError(
                f"theorem id on line {lineno} must be a string", cause='id'
            )
        if record['domain'] not in settings.DOMAINS:
            raise exceptions.CorpusError(
                f"unknown domain {record['domain']!r} on line {lineno}",
                cause='domain'
            )
        if record['id'] in seen:
            raise exceptions.DuplicateIdError(
                f"duplicate theorem id {record['id']!r} on lines "
                f"{seen[record['id']]} and {lineno}", cause='id'
            )
        try:
            item = TheoremItem(
                id=record['id'], domain=Domain(record['domain']),
                statement_text=record['statement'],
                source_ref=record.get('source') or ''
            )
        except exceptions.CorpusError as e:
            raise exceptions.CorpusError(
                f"invalid record on line {lineno}: {e}", cause=e.cause
            ) from None
        seen[item.id] = lineno
        items.append(item)
    if not items:
        raise exceptions.CorpusError("empty corpus", cause='path')
    counts = corpus_counts(items)
    settings.logger.info(
        f"Loaded {counts['total']} theorems from {path} (" + ', '.join(
            f"{domain}: {counts[domain]}" for domain in settings.DOMAINS
        ) + ")"
    )
    return items


def corpus_counts(items: list) -> dict:
    """Total and per-domain counts; per-domain counts sum to the total"""
    counter = Counter(item.domain.value for item in items)
    return {
        'total': len(items),
        **{domain: counter.get(domain, 0) for domain in settings.DOMAINS}
    }
