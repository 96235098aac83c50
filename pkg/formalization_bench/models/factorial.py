"""
Factorial analysis of the eight tool configurations

All point estimates are exact rationals in percentage points; rendering to
decimals happens at the edge (`utils.prettify_float`). Missing cells exclude
the theorem (complete-case analysis) with a warning.
"""
import itertools
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from configs import settings
from utils.decorators import rangetest
from . import exceptions
from .records import EpisodeTranscript, ToolConfig


__all__ = [
    'METRICS', 'OutcomeTable', 'EffectEstimate', 'UsageSummary',
    'build_outcome_table', 'main_effect', 'factor_levels', 'simple_effect',
    'interaction', 'gain_vs_baseline', 'bootstrap_ci', 'efficiency_curve',
    'domain_breakdown', 'domain_effects', 'usage_summary', 'reduction',
    'multi_orchestrator_summary', 'all_effects'
]


METRICS = ('faithful_consensus', 'faithful_primary', 'compile')
FACTORS = ('T', 'F', 'S')
PAIRS = ('FxS', 'FxT', 'SxT')
CONFIG_CODES = [c.code() for c in ToolConfig.all()]
MISSING = -1


def metric_value(run, metric_id: str) -> int:
    if metric_id == 'compile':
        return int(run.compile_pass)
    return int(getattr(run, metric_id))


@dataclass
class OutcomeTable:
    """
    Binary outcomes, one row per theorem, one column per config code

    :attributes:
        theorems(list[str]): row ids
        matrix(np.ndarray): int8 of shape (len(theorems), 8); MISSING marks
            an absent cell; columns follow CONFIG_CODES
        metric_id(str): one of METRICS
        domains(dict[str, str]): theorem id -> domain
    """
    theorems: list
    matrix: np.ndarray
    metric_id: str = 'faithful_consensus'
    domains: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.metric_id not in METRICS:
            raise exceptions.UsageError(
                f"unknown metric {self.metric_id!r}", cause='metric'
            )
        self.matrix = np.asarray(self.matrix, dtype=np.int8)
        if self.matrix.shape != (len(self.theorems), len(CONFIG_CODES)):
            raise exceptions.InvariantViolationError(
                f"matrix shape {self.matrix.shape} does not match "
                f"{len(self.theorems)} theorems x 8 configs", cause='shape'
            )
        if not np.isin(self.matrix, (MISSING, 0, 1)).all():
            raise exceptions.InvariantViolationError(
                "cells must be 0, 1 or missing", cause='cells'
            )

    @classmethod
    def from_columns(
            cls, columns: dict, *, metric_id: str = 'faithful_consensus',
            prefix: str = 't'
            ) -> 'OutcomeTable':
        """
        Build a table from column vectors of equal length

        :arguments:
            columns(dict[str, list[int]]): config code -> outcome per theorem
        """
        n = len(next(iter(columns.values())))
        matrix = np.full((n, len(CONFIG_CODES)), MISSING, dtype=np.int8)
        for code, values in columns.items():
            matrix[:, CONFIG_CODES.index(code)] = values
        return cls(
            [f"{prefix}{i}" for i in range(n)], matrix, metric_id
        )

    @classmethod
    def from_counts(
            cls, counts: dict, n: int, *,
            metric_id: str = 'faithful_consensus'
            ) -> 'OutcomeTable':
        """Columns whose first `counts[code]` theorems succeed"""
        return cls.from_columns(
            {code: [1] * k + [0] * (n - k) for code, k in counts.items()},
            metric_id=metric_id
        )

    def missing(self) -> list:
        rows, cols = np.nonzero(self.matrix == MISSING)
        return [(self.theorems[r], CONFIG_CODES[c]) for r, c in zip(rows, cols)]

    def column(self, code: str) -> np.ndarray:
        return self.matrix[:, CONFIG_CODES.index(code)]

    def complete_rows(self, codes: Optional[list] = None) -> np.ndarray:
        """
        Rows with every cell of `codes` present

        :raise:
            exceptions.MissingCellError: some column has no data at all
        """
        codes = codes or CONFIG_CODES
        index = [CONFIG_CODES.index(code) for code in codes]
        empty = [
            code for code, i in zip(codes, index)
            if (self.matrix[:, i] == MISSING).all()
        ]
        if empty or not self.theorems:
            raise exceptions.MissingCellError(
                f"missing config columns: {', '.join(empty) or 'all'}",
                cause='column'
            )
        sub = self.matrix[:, index]
        complete = (sub != MISSING).all(axis=1)
        dropped = len(self.theorems) - int(complete.sum())
        if dropped:
            settings.logger.warning(
                f"{dropped} theorems excluded for missing cells"
            )
        if not complete.any():
            raise exceptions.MissingCellError(
                "no theorem has all required cells", cause='rows'
            )
        return sub[complete]

    def populated_codes(self) -> list:
        """Config codes with at least one present cell"""
        return [
            code for code in CONFIG_CODES
            if (self.column(code) != MISSING).any()
        ]

    def column_means(self, codes: Optional[list] = None) -> dict:
        """
        code -> rate in percentage points

        Rows must be complete in every populated column, not only in
        `codes`, so that every estimator sees the same theorems.
        """
        codes = codes or CONFIG_CODES
        wanted = set(codes) | set(self.populated_codes())
        union = [code for code in CONFIG_CODES if code in wanted]
        rows = self.complete_rows(union)
        return {
            code: Fraction(
                100 * int(rows[:, union.index(code)].sum()), rows.shape[0]
            )
            for code in codes
        }

    def subset(self, theorem_ids) -> 'OutcomeTable':
        wanted = set(theorem_ids)
        index = [i for i, t in enumerate(self.theorems) if t in wanted]
        return OutcomeTable(
            [self.theorems[i] for i in index], self.matrix[index],
            self.metric_id,
            {self.theorems[i]: self.domains.get(self.theorems[i])
             for i in index}
        )

    def by_domain(self) -> dict:
        groups = defaultdict(list)
        for theorem in self.theorems:
            groups[self.domains.get(theorem)].append(theorem)
        return {
            domain: self.subset(groups[domain])
            for domain in settings.DOMAINS if domain in groups
        }


@dataclass
class EffectEstimate:
    label: str
    point: Fraction
    ci_low: Optional[Fraction] = None
    ci_high: Optional[Fraction] = None
    resamples: int = 0
    method: str = ''

    def __post_init__(self):
        if self.ci_low is not None and not \
                self.ci_low <= self.point <= self.ci_high:
            raise exceptions.InvariantViolationError(
                f"{self.label}: interval [{self.ci_low}, {self.ci_high}] "
                f"does not contain {self.point}", cause='ci'
            )


def build_outcome_table(
        runs: list, metric_id: str = 'faithful_consensus', *,
        theorems: Optional[list] = None
        ) -> OutcomeTable:
    """
    :arguments:
        runs(list[RunRecord]): at most one per (theorem, config)
        theorems(list[str] | None): row ids, default every theorem in `runs`
    :raise:
        exceptions.DuplicateCellError: a (theorem, config) cell twice
    """
    ids = sorted(theorems or {r.theorem_id for r in runs})
    row_of = {t: i for i, t in enumerate(ids)}
    matrix = np.full((len(ids), len(CONFIG_CODES)), MISSING, dtype=np.int8)
    domains = {}
    for run in runs:
        if run.theorem_id not in row_of:
            continue
        r, c = row_of[run.theorem_id], CONFIG_CODES.index(run.config.code())
        if matrix[r, c] != MISSING:
            raise exceptions.DuplicateCellError(
                f"duplicate cell ({run.theorem_id}, {run.config})",
                cause='cell'
            )
        matrix[r, c] = metric_value(run, metric_id)
        domains[run.theorem_id] = run.domain
    table = OutcomeTable(ids, matrix, metric_id, domains)
    if missing := table.missing():
        settings.logger.warning(f"Outcome table has {len(missing)} missing cells")
    return table


def _codes(**levels) -> list:
    """Config codes matching fixed factor levels, e.g. _codes(F=1)"""
    return [
        c.code() for c in ToolConfig.all()
        if all(c.level(f) == v for f, v in levels.items())
    ]


def _check_factor(factor: str) -> str:
    factor = factor.upper()
    if factor not in FACTORS:
        raise exceptions.UsageError(
            f"unknown factor {factor!r}, expected T, F or S", cause='factor'
        )
    return factor


def factor_levels(table: OutcomeTable, factor: str) -> tuple:
    """(mean at X=1, mean at X=0) averaged uniformly over the other factors"""
    factor = _check_factor(factor)
    means = table.column_means()
    high = sum(means[c] for c in _codes(**{factor: 1})) / 4
    low = sum(means[c] for c in _codes(**{factor: 0})) / 4
    return high, low


def main_effect(table: OutcomeTable, factor: str) -> EffectEstimate:
    """
    :raise:
        exceptions.MissingCellError: a config column is missing
    """
    high, low = factor_levels(table, factor)
    return EffectEstimate(factor.upper(), high - low)


def simple_effect(
        table: OutcomeTable, factor: str, conditioned_on: str = 'F',
        level: int = 0
        ) -> Fraction:
    """Effect of `factor` with `conditioned_on` fixed at `level`"""
    factor, cond = _check_factor(factor), _check_factor(conditioned_on)
    if factor == cond:
        raise exceptions.UsageError(
            "a factor cannot be conditioned on itself", cause='factor'
        )
    codes = _codes(**{cond: level})
    means = table.column_means(codes)
    high = [means[c] for c in _codes(**{cond: level, factor: 1})]
    low = [means[c] for c in _codes(**{cond: level, factor: 0})]
    return (sum(high) - sum(low)) / 2


def interaction(table: OutcomeTable, pair: str) -> Fraction:
    """
    Difference-in-differences: for "FxS", S's simple effect at F=1 minus
    its simple effect at F=0
    """
    pair = pair.upper().replace('×', 'X')
    if len(pair) != 3 or pair[1] != 'X':
        raise exceptions.UsageError(
            f"interaction must look like 'FxS', got {pair!r}", cause='pair'
        )
    cond, factor = _check_factor(pair[0]), _check_factor(pair[2])
    return (
        simple_effect(table, factor, cond, 1)
        - simple_effect(table, factor, cond, 0)
    )


def gain_vs_baseline(table: OutcomeTable) -> dict:
    means = table.column_means()
    return {
        code: means[code] - means['000'] for code in CONFIG_CODES[1:]
    }


@rangetest(
    strict_range=False, exception=exceptions.UsageError,
    resamples=(1, float('inf'))
)
def bootstrap_ci(
        table: OutcomeTable, factor: str,
        resamples: int = settings.BOOTSTRAP_RESAMPLES,
        seed: int = settings.BOOTSTRAP_SEED
        ) -> EffectEstimate:
    """
    Percentile bootstrap interval of a main effect

    Theorem rows are resampled with replacement, keeping a theorem's eight
    outcomes together. Per row the contrast is an integer (sum of the four
    high cells minus the four low cells), so constant columns produce a
    zero-width interval exactly.
    """
    factor = _check_factor(factor)
    rows = table.complete_rows().astype(np.int64)
    high = [CONFIG_CODES.index(c) for c in _codes(**{factor: 1})]
    low = [CONFIG_CODES.index(c) for c in _codes(**{factor: 0})]
    contrasts = rows[:, high].sum(axis=1) - rows[:, low].sum(axis=1)
    n = contrasts.shape[0]
    scale = Fraction(100, 4 * n)
    point = int(contrasts.sum()) * scale

    rng = np.random.default_rng(seed)
    sums = np.empty(resamples, dtype=np.int64)
    chunk = max(1, 4_000_000 // max(n, 1))
    for start in range(0, resamples, chunk):
        stop = min(start + chunk, resamples)
        index = rng.integers(0, n, size=(stop - start, n))
        sums[start:stop] = contrasts[index].sum(axis=1)
    low_sum, high_sum = np.percentile(sums, settings.CI_PERCENTILES)
    ci_low = Fraction(float(low_sum)) * scale
    ci_high = Fraction(float(high_sum)) * scale
    if not ci_low <= point <= ci_high:
        settings.logger.warning(
            f"Bootstrap interval for {factor} widened to contain the point"
        )
        ci_low, ci_high = min(ci_low, point), max(ci_high, point)
    return EffectEstimate(
        factor, point, ci_low, ci_high, resamples, 'percentile'
    )


def efficiency_curve(
        runs: list, budgets: Optional[list] = None,
        metric_id: str = 'faithful_consensus'
        ) -> dict:
    """
    Cumulative success rate by step budget

    :return:
        curve(dict[int, Fraction | None]): share of runs that succeed
            within `budget` steps; None for an empty run list
    """
    budgets = settings.EFFICIENCY_BUDGETS if budgets is None else budgets
    if not runs:
        return {b: None for b in budgets}
    steps = sorted(r.steps_used for r in runs if metric_value(r, metric_id))
    total = len(runs)
    return {
        b: Fraction(sum(s <= b for s in steps), total) for b in budgets
    }


def _median(values: list) -> Fraction:
    ordered = sorted(values)
    mid = len(ordered) // 2
    if len(ordered) % 2:
        return Fraction(ordered[mid])
    return Fraction(ordered[mid - 1] + ordered[mid], 2)


def domain_breakdown(runs: list,
                     metric_id: str = 'faithful_consensus') -> dict:
    """
    Per-domain rates and step statistics of one config's runs

    :return:
        rows(dict[str, dict]): n, compile, faithful, conditional,
            mean_steps, median_steps (Fractions) and `empty`
    """
    groups = defaultdict(list)
    for run in runs:
        groups[run.domain].append(run)
    rows = {}
    for domain in settings.DOMAINS:
        group = groups.get(domain, [])
        if not group:
            rows[domain] = {'n': 0, 'empty': True}
            continue
        n = len(group)
        compiled = sum(r.compile_pass for r in group)
        good = sum(metric_value(r, metric_id) for r in group)
        steps = [r.steps_used for r in group]
        rows[domain] = {
            'n': n, 'empty': False,
            'compile': Fraction(compiled, n),
            'faithful': Fraction(good, n),
            'conditional': Fraction(good, compiled) if compiled else None,
            'mean_steps': Fraction(sum(steps), n),
            'median_steps': _median(steps),
        }
    return rows


def domain_effects(
        tables, factor: str, conditioned_on: Optional[tuple] = None
        ) -> dict:
    """
    Per-domain low/high means and their difference

    :arguments:
        tables(OutcomeTable | dict[str, OutcomeTable]): split by domain
            when a single table is given
        factor(str): T, F or S
        conditioned_on(tuple[str, int] | None): e.g. ("F", 1)
    :return:
        effects(dict): rows {domain: {low, high, delta}} and mean_delta
    """
    if isinstance(tables, OutcomeTable):
        tables = tables.by_domain()
    factor = _check_factor(factor)
    rows = {}
    for domain, table in tables.items():
        if conditioned_on is None:
            high, low = factor_levels(table, factor)
        else:
            cond, level = _check_factor(conditioned_on[0]), conditioned_on[1]
            means = table.column_means(_codes(**{cond: level}))
            high = sum(
                means[c] for c in _codes(**{cond: level, factor: 1})
            ) / 2
            low = sum(
                means[c] for c in _codes(**{cond: level, factor: 0})
            ) / 2
        rows[domain] = {'low': low, 'high': high, 'delta': high - low}
    return {
        'rows': rows,
        'mean_delta': (
            sum((r['delta'] for r in rows.values()), Fraction(0)) / len(rows)
            if rows else None
        )
    }


USAGE_GROUPS = {
    'lean4_translator': 'translator',
    'lean4_repl_runner': 'repl',
    'lean_inspect_name': 'inspect',
    'lean_resolve_name': 'resolve',
    'search_online': 'search_online',
    'lean_write_file': 'write',
}


@dataclass
class UsageSummary:
    """
    :attributes:
        counts(dict[str, Counter]): config code -> tool group counts;
            s_total = search_online + inspect + resolve
        transcripts(dict[str, int]): transcripts counted per config
        unknown(set[str]): tool names counted under "other"
    """
    counts: dict = field(default_factory=dict)
    transcripts: dict = field(default_factory=dict)
    unknown: set = field(default_factory=set)

    def get(self, code: str, group: str) -> int:
        return self.counts.get(code, Counter())[group]

    def coverage(self, expected: int) -> dict:
        return {code: Fraction(n, expected) for code, n in self.transcripts.items()}


def _call_names(transcript) -> list:
    if isinstance(transcript, EpisodeTranscript):
        return transcript.tool_call_names()
    return list(transcript)


def usage_summary(transcripts_by_config: dict) -> UsageSummary:
    """
    Count tool calls per config

    :arguments:
        transcripts_by_config(dict[str, list]): config code -> transcripts
            (EpisodeTranscript or plain lists of tool names)
    """
    summary = UsageSummary()
    for code in sorted(transcripts_by_config):
        counter = Counter()
        transcripts = transcripts_by_config[code]
        for transcript in transcripts:
            for name in _call_names(transcript):
                group = USAGE_GROUPS.get(name)
                if group is None:
                    summary.unknown.add(name)
                    group = 'other'
                counter[group] += 1
        counter['s_total'] = (
            counter['search_online'] + counter['inspect'] + counter['resolve']
        )
        summary.counts[code] = counter
        summary.transcripts[code] = len(transcripts)
    if summary.unknown:
        settings.logger.warning(
            "Unknown tool names counted as other: "
            + ', '.join(sorted(summary.unknown))
        )
    return summary


def reduction(a: int, b: int) -> Optional[Fraction]:
    """(a - b) / a in percent, None when a is zero"""
    if a == 0:
        return None
    return Fraction(100 * (a - b), a)


def multi_orchestrator_summary(
        runs: list, metric_id: str = 'faithful_consensus',
        config: str = '111'
        ) -> dict:
    """
    Per orchestrator: success under `config` and uplift over its own
    one-shot baseline, in percentage points
    """
    groups = defaultdict(lambda: defaultdict(list))
    for run in runs:
        groups[run.orchestrator_id][run.config.code()].append(run)
    summary = {}
    for orchestrator in sorted(groups):
        rate = lambda rs: (
            Fraction(100 * sum(metric_value(r, metric_id) for r in rs),
                     len(rs)) if rs else None
        )
        full = groups[orchestrator].get(config, [])
        base = groups[orchestrator].get('000', [])
        full_rate, base_rate = rate(full), rate(base)
        summary[orchestrator] = {
            'n': len(full),
            'count': sum(metric_value(r, metric_id) for r in full),
            'rate': full_rate,
            'baseline_rate': base_rate,
            'uplift': (
                full_rate - base_rate
                if full_rate is not None and base_rate is not None else None
            )
        }
    return summary


def all_effects(table: OutcomeTable) -> dict:
    """Main, simple and interaction effects of one table"""
    return {
        'main': {f: main_effect(table, f).point for f in ('F', 'S', 'T')},
        'simple': {
            f"{x}|F={level}": simple_effect(table, x, 'F', level)
            for x, level in itertools.product(('S', 'T'), (0, 1))
        },
        'interaction': {p: interaction(table, p) for p in PAIRS},
    }
