import csv
import json
import random
from collections import defaultdict
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional

from configs import settings
from utils.decorators import rangetest
from . import exceptions
from .controller import load_template
from .gateway import ChatModel, ChatTurnRequest
from .records import JudgeVerdict, Message, RunRecord


__all__ = [
    'compile_gate', 'parse_verdict', 'judge', 'faithful', 'apply_verdicts',
    'ConsensusSummary', 'consensus_summary', 'mean_consensus_rate',
    'containment_report', 'grade_by_domain', 'export_audit',
    'audit_agreement'
]


AUDIT_COLUMNS = [
    'run_key', 'theorem_id', 'domain', 'code', 'llm_grade', 'human_grade'
]


def compile_gate(final_code: Optional[str], compiler) -> bool:
    """
    :arguments:
        final_code(str | None): absent code fails without compiling
        compiler: anything with compile(content) -> CompilerReport
    :raise:
        exceptions.ToolchainConfigurationError: toolchain not usable
    """
    if final_code is None or not final_code.strip():
        return False
    return compiler.compile(final_code).success


def parse_verdict(text: Optional[str], compile_pass: bool,
                  judge_id: str) -> JudgeVerdict:
    """
    Strict reading of the judge output contract

    :raise:
        exceptions.JudgeParseError: not a single JSON object, wrong keys,
            wrong types, grade outside 0..10, or a non-compiling run that
            is called faithful or graded above 3
    """
    try:
        data = json.loads((text or '').strip())
    except ValueError:
        raise exceptions.JudgeParseError(
            "judge output is not valid JSON", cause='json'
        ) from None
    if not isinstance(data, dict) or set(data) != set(settings.JUDGE_KEYS):
        raise exceptions.JudgeParseError(
            f"judge output must have exactly the keys "
            f"{', '.join(settings.JUDGE_KEYS)}", cause='keys'
        )
    grade, is_faithful = data['grade'], data['faithful']
    if not isinstance(is_faithful, bool):
        raise exceptions.JudgeParseError("faithful must be boolean",
                                         cause='faithful')
    if isinstance(grade, bool) or not isinstance(grade, int) \
            or not 0 <= grade <= 10:
        raise exceptions.JudgeParseError(
            f"grade {grade!r} is not an integer in 0..10", cause='grade'
        )
    if not isinstance(data['thought'], str):
        raise exceptions.JudgeParseError("thought must be a string",
                                         cause='thought')
    if not compile_pass and (
            is_faithful or grade > settings.COMPILE_FAIL_MAX_GRADE):
        raise exceptions.JudgeParseError(
            f"non-compiling code judged faithful={is_faithful} "
            f"grade={grade}", cause='compile_rule'
        )
    return JudgeVerdict(judge_id, is_faithful, grade, data['thought'])


def judge_request(statement: str, code: Optional[str], compile_pass: bool,
                  model_id: str) -> ChatTurnRequest:
    return ChatTurnRequest([
        Message('system', load_template('judge_prompt.txt').rstrip('\n')),
        Message('user', load_template('judge_input.txt').format(
            statement=statement, code=code or '',
            compile_pass=bool(compile_pass)
        ))
    ], [], model_id)


def judge(
        statement: str, code: Optional[str], compile_pass: bool,
        judge_model: ChatModel, *, retry_cap: int = settings.JUDGE_RETRY_CAP
        ) -> JudgeVerdict:
    """
    Ask one judge, re-querying on contract violations

    Verdicts are never clamped into range.

    :raise:
        exceptions.JudgeInvalidError: no valid verdict within `retry_cap`
        exceptions.FixtureMissError: replay fixture missing
    """
    request = judge_request(statement, code, compile_pass,
                            judge_model.model_id)
    problems = []
    for attempt in range(1, retry_cap + 1):
        try:
            response = judge_model.complete(request)
            return parse_verdict(
                response.message.content, compile_pass, judge_model.model_id
            )
        except (exceptions.JudgeParseError, exceptions.GatewayError) as e:
            problems.append(str(e))
            settings.logger.warning(
                f"Judge {judge_model.model_id} attempt {attempt}/{retry_cap} "
                f"rejected: {e}"
            )
    raise exceptions.JudgeInvalidError(
        f"judge {judge_model.model_id} gave no valid verdict: "
        + '; '.join(problems), cause='judge'
    )


@rangetest(strict_range=False, exception=ValueError, grade=(0, 10))
def faithful(compile_pass: bool, grade: int) -> bool:
    """Compiles AND grade >= FAITHFUL_THRESHOLD"""
    return bool(compile_pass) and grade >= settings.FAITHFUL_THRESHOLD


def apply_verdicts(
        record: RunRecord, verdicts: dict, invalid: list,
        primary_judge: str, secondary_judge: str
        ) -> RunRecord:
    """Copy of `record` with verdicts attached and faithful flags derived"""
    verdicts = {**record.verdicts, **verdicts}
    invalid = sorted(
        (set(record.judge_invalid) - set(verdicts)) | set(invalid)
    )
    flag = lambda judge_id: judge_id in verdicts and faithful(
        record.compile_pass, verdicts[judge_id].grade
    )
    primary = flag(primary_judge)
    return replace(
        record, verdicts=verdicts, judge_invalid=invalid,
        faithful_primary=primary,
        faithful_consensus=primary and flag(secondary_judge)
    )


@dataclass
class ConsensusSummary:
    """
    :attributes:
        pass_primary, pass_secondary, pass_consensus(int): faithful counts
        judged(int): runs with both verdicts
        missing(int): runs excluded for a missing verdict
        judge_invalid(int): runs excluded because a judge was invalid
    """
    system: str
    pass_primary: int
    pass_secondary: int
    pass_consensus: int
    judged: int = 0
    missing: int = 0
    judge_invalid: int = 0

    def __post_init__(self):
        if self.pass_consensus > min(self.pass_primary, self.pass_secondary):
            raise exceptions.InvariantViolationError(
                f"{self.system}: consensus count exceeds a judge's count",
                cause='consensus'
            )

    @property
    def consensus_rate(self) -> Optional[Fraction]:
        """None when the primary judge passed nothing"""
        if self.pass_primary == 0:
            return None
        return Fraction(self.pass_consensus, self.pass_primary)


def consensus_summary(
        runs: list, primary_judge: str = settings.PRIMARY_JUDGE,
        secondary_judge: str = settings.SECONDARY_JUDGE, *,
        system: str = ''
        ) -> ConsensusSummary:
    """
    Count faithful runs under each judge and under both

    Runs with a judge-invalid flag or a missing verdict are excluded and
    counted separately.
    """
    counts = {'primary': 0, 'secondary': 0, 'consensus': 0}
    judged = missing = invalid = 0
    for run in runs:
        if {primary_judge, secondary_judge} & set(run.judge_invalid):
            invalid += 1
            continue
        if primary_judge not in run.verdicts \
                or secondary_judge not in run.verdicts:
            missing += 1
            continue
        judged += 1
        p = faithful(run.compile_pass, run.verdicts[primary_judge].grade)
        s = faithful(run.compile_pass, run.verdicts[secondary_judge].grade)
        counts['primary'] += p
        counts['secondary'] += s
        counts['consensus'] += p and s
    if missing:
        settings.logger.warning(
            f"{system or 'consensus'}: {missing} runs excluded for a "
            f"missing verdict"
        )
    return ConsensusSummary(
        system, counts['primary'], counts['secondary'], counts['consensus'],
        judged, missing, invalid
    )


def mean_consensus_rate(summaries: list) -> Optional[Fraction]:
    """Unweighted mean of the defined consensus rates"""
    rates = [s.consensus_rate for s in summaries if s.consensus_rate is not None]
    if not rates:
        return None
    return sum(rates, Fraction(0)) / len(rates)


def containment_report(
        runs: list, primary_judge: str = settings.PRIMARY_JUDGE,
        secondary_judge: str = settings.SECONDARY_JUDGE, *,
        system_of=lambda run: f"{run.orchestrator_id}/{run.config}"
        ) -> dict:
    """
    Where the two judges' faithful sets differ

    :return:
        report(dict):
            systems: {system: {primary_only, secondary_only, both, judged}}
            domains: {domain: disagreements across all systems}
    """
    systems = defaultdict(
        lambda: {'primary_only': 0, 'secondary_only': 0, 'both': 0,
                 'judged': 0}
    )
    domains = defaultdict(int)
    for run in runs:
        if primary_judge not in run.verdicts \
                or secondary_judge not in run.verdicts:
            continue
        p = faithful(run.compile_pass, run.verdicts[primary_judge].grade)
        s = faithful(run.compile_pass, run.verdicts[secondary_judge].grade)
        row = systems[system_of(run)]
        row['judged'] += 1
        row['both'] += p and s
        row['primary_only'] += p and not s
        row['secondary_only'] += s and not p
        domains[run.domain] += p != s
    return {
        'systems': {k: systems[k] for k in sorted(systems)},
        'domains': {d: domains.get(d, 0) for d in settings.DOMAINS}
    }


def grade_by_domain(runs: list, judge_id: str = settings.PRIMARY_JUDGE) -> dict:
    """{domain: {config code: mean grade as Fraction}}"""
    grades = defaultdict(lambda: defaultdict(list))
    for run in runs:
        if judge_id in run.verdicts:
            grades[run.domain][run.config.code()].append(
                run.verdicts[judge_id].grade
            )
    return {
        domain: {
            code: Fraction(sum(values), len(values))
            for code, values in sorted(grades[domain].items())
        }
        for domain in settings.DOMAINS if domain in grades
    }


def export_audit(
        runs: list, path: str, sample_size: int = settings.AUDIT_SAMPLE_SIZE,
        seed: int = settings.BOOTSTRAP_SEED, *,
        primary_judge: str = settings.PRIMARY_JUDGE
        ) -> int:
    """
    Write a review sheet of sampled consensus-faithful runs

    :return:
        count(int): rows written
    """
    pool = sorted(
        (r for r in runs if r.faithful_consensus), key=lambda r: r.key
    )
    sample = sorted(
        random.Random(seed).sample(pool, min(sample_size, len(pool))),
        key=lambda r: r.key
    )
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(AUDIT_COLUMNS)
        for run in sample:
            writer.writerow([
                run.key, run.theorem_id, run.domain, run.final_code or '',
                run.verdicts[primary_judge].grade, ''
            ])
    settings.logger.info(f"Exported {len(sample)} runs for audit to {path}")
    return len(sample)


def _sheet_grade(row: dict, column: str, rowno: int, path: str) -> int:
    value = (row.get(column) or '').strip()
    try:
        grade = int(value)
    except ValueError:
        grade = None
    if grade is None or not 0 <= grade <= 10:
        raise exceptions.UsageError(
            f"{path} row {rowno}: {column} must be an integer from 0 to "
            f"10, got {value!r}", cause='audit'
        )
    return grade


def audit_agreement(
        path: str, runs: Optional[list] = None, *,
        primary_judge: str = settings.PRIMARY_JUDGE
        ) -> dict:
    """
    Compare human grades with the primary judge

    The sheet needs run_key and human_grade; the judge grade comes from
    `runs` when given, otherwise from the sheet's llm_grade column.

    :return:
        agreement(dict): counts and percentages (Fraction) of exact
            matches, one-point differences inside the faithful band,
            threshold crossings and other disagreements, plus the binary
            faithful agreement
    """
    by_key = {r.key: r for r in runs or []}
    counts = {'exact': 0, 'within_one': 0, 'crossing': 0, 'other': 0}
    with open(path, 'r', encoding='utf-8', newline='') as f:
        for rowno, row in enumerate(csv.DictReader(f), start=1):
            if not (row.get('human_grade') or '').strip():
                continue
            human = _sheet_grade(row, 'human_grade', rowno, path)
            run = by_key.get(row.get('run_key'))
            if run is not None and primary_judge in run.verdicts:
                llm = run.verdicts[primary_judge].grade
            else:
                llm = _sheet_grade(row, 'llm_grade', rowno, path)
            threshold = settings.FAITHFUL_THRESHOLD
            if human == llm:
                counts['exact'] += 1
            elif (human >= threshold) != (llm >= threshold):
                counts['crossing'] += 1
            elif abs(human - llm) == 1 and human >= threshold:
                counts['within_one'] += 1
            else:
                counts['other'] += 1
    total = sum(counts.values())
    if total == 0:
        raise exceptions.UsageError(
            f"no graded rows in {path}", cause='audit'
        )
    percent = lambda n: Fraction(100 * n, total)
    return {
        'total': total, **counts,
        **{f"{k}_pct": percent(v) for k, v in counts.items()},
        'binary_agreement_pct': percent(total - counts['crossing'])
    }
