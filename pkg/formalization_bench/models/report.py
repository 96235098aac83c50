"""
Report bundle of one experiment store

`analyze_store` computes every table from store queries; `emit_report`
writes them as CSV files plus static plots and a manifest. CSV output is
byte-stable for a fixed store.
"""
import csv
import json
import os
from collections import Counter, defaultdict
from fractions import Fraction
from typing import Optional

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from configs import settings  # noqa: E402
from utils import format_table, prettify_float, prettify_points  # noqa: E402
from utils.dt import get_timestamp  # noqa: E402
from . import exceptions, factorial, verdict  # noqa: E402
from .factorial import CONFIG_CODES, MISSING  # noqa: E402


__all__ = ['analyze_store', 'emit_report', 'render_console']


FXS_NOTE = (
    "FxS is the change in S's simple effect between F=0 and F=1, without "
    "a 1/2 factor. A -11.6 figure quoted for this interaction does not "
    "follow from the per-config rates, which give -11.1; it is not "
    "reproduced."
)
REPL_REDUCTIONS = [('010', '011'), ('110', '111')]
USAGE_COLUMNS = [
    'translator', 'repl', 'write', 'inspect', 'resolve', 'search_online',
    'other', 's_total'
]


def _column_rates(table: factorial.OutcomeTable) -> dict:
    """code -> percent over the cells present in that column, or None"""
    rates = {}
    for code in CONFIG_CODES:
        column = table.column(code)
        present = column[column != MISSING]
        rates[code] = (
            Fraction(100 * int(present.sum()), present.size)
            if present.size else None
        )
    return rates


def _pick_orchestrator(runs: list) -> Optional[str]:
    counts = Counter(r.orchestrator_id for r in runs)
    if not counts:
        return None
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]


def _guarded(section: str, notes: list, func, *args, **kwargs):
    """Run an estimator; a missing cell becomes a note instead of a crash"""
    try:
        return func(*args, **kwargs)
    except exceptions.MissingCellError as e:
        notes.append(f"{section}: {e}")
        settings.logger.warning(f"Report section {section} skipped: {e}")
        return None


def analyze_store(
        store, *, corpus: Optional[list] = None,
        orchestrator_id: Optional[str] = None,
        metric_id: str = 'faithful_consensus',
        resamples: int = settings.BOOTSTRAP_RESAMPLES,
        seed: int = settings.BOOTSTRAP_SEED,
        primary_judge: str = settings.PRIMARY_JUDGE,
        secondary_judge: str = settings.SECONDARY_JUDGE,
        detail_config: str = settings.DEFAULT_CONFIG_CODE
        ) -> dict:
    """
    Compute every report section from the runs of `store`

    :arguments:
        store(RunStore): experiment store
    :keyword arguments:
        corpus(list[TheoremItem] | None): fixes the table rows; without it
            the rows are the theorems present in the store
        orchestrator_id(str | None): factorial analysis subject, default the
            orchestrator with the most runs
        detail_config(str)="111": config of the domain and step tables
    :return:
        sections(dict): raw values (Fractions) keyed by section name
    """
    all_runs = store.all_runs()
    orchestrator_id = orchestrator_id or _pick_orchestrator(all_runs)
    runs = [r for r in all_runs if r.orchestrator_id == orchestrator_id]
    theorems = [item.id for item in corpus] if corpus else None
    notes = []

    table = factorial.build_outcome_table(runs, metric_id, theorems=theorems)
    compile_table = factorial.build_outcome_table(
        runs, 'compile', theorems=theorems
    )
    rates = _column_rates(table)
    compile_rates = _column_rates(compile_table)
    missing = table.missing()
    missing_by_config = Counter(code for _, code in missing)

    main = {}
    for factor in ('F', 'S', 'T'):
        estimate = _guarded(
            f"effect {factor}", notes, factorial.bootstrap_ci, table, factor,
            resamples, seed
        )
        levels = _guarded(
            f"levels {factor}", notes, factorial.factor_levels, table, factor
        )
        main[factor] = {'estimate': estimate, 'levels': levels}
    effects = _guarded('effects', notes, factorial.all_effects, table)

    by_config = defaultdict(list)
    for run in runs:
        by_config[run.config.code()].append(run)

    consensus = []
    for orchestrator in sorted({r.orchestrator_id for r in all_runs}):
        for code in CONFIG_CODES:
            group = [
                r for r in all_runs
                if r.orchestrator_id == orchestrator
                and r.config.code() == code
            ]
            if group:
                consensus.append(verdict.consensus_summary(
                    group, primary_judge, secondary_judge,
                    system=f"{orchestrator}/{code}"
                ))

    curves = {
        code: factorial.efficiency_curve(by_config[code], metric_id=metric_id)
        for code in CONFIG_CODES if by_config[code]
    }

    domain_effects = {
        'F': _guarded(
            'domain effect F', notes, factorial.domain_effects, table, 'F'
        ),
        'S|F=0': _guarded(
            'domain effect S|F=0', notes, factorial.domain_effects, table,
            'S', ('F', 0)
        ),
        'S|F=1': _guarded(
            'domain effect S|F=1', notes, factorial.domain_effects, table,
            'S', ('F', 1)
        ),
    }
    domain_rates = {
        domain: _column_rates(sub)
        for domain, sub in table.by_domain().items()
    }

    transcripts = {}
    for code in CONFIG_CODES:
        if code == '000' or not by_config[code]:
            continue
        loaded = []
        for run in by_config[code]:
            try:
                loaded.append(store.load_transcript(run.transcript_ref))
            except (exceptions.StorageError,
                    exceptions.InvariantViolationError) as e:
                settings.logger.warning(f"Transcript skipped: {e}")
        transcripts[code] = loaded
    usage = factorial.usage_summary(transcripts)
    expected = len(theorems) if theorems else len(table.theorems)

    if missing:
        notes.append(
            f"{len(missing)} missing cells: " + ', '.join(
                f"{code}={count}"
                for code, count in sorted(missing_by_config.items())
            )
        )
    return {
        'experiment_id': store.experiment_id,
        'orchestrator_id': orchestrator_id,
        'metric_id': metric_id,
        'theorems': len(table.theorems),
        'runs': len(runs),
        'rates': rates,
        'compile_rates': compile_rates,
        'missing': missing,
        'missing_by_config': dict(sorted(missing_by_config.items())),
        'main': main,
        'effects': effects,
        'consensus': consensus,
        'mean_consensus_rate': verdict.mean_consensus_rate(consensus),
        'containment': verdict.containment_report(
            all_runs, primary_judge, secondary_judge
        ),
        'curves': curves,
        'detail_config': detail_config,
        'domains': factorial.domain_breakdown(
            by_config[detail_config], metric_id
        ),
        'domain_effects': domain_effects,
        'domain_rates': domain_rates,
        'usage': usage,
        'usage_expected': expected,
        'grades': verdict.grade_by_domain(all_runs, primary_judge),
        'orchestrators': factorial.multi_orchestrator_summary(
            all_runs, metric_id, detail_config
        ),
        'resamples': resamples,
        'seed': seed,
        'notes': notes,
    }


def _cell(value, digits: int = settings.PRECISION_NUMBER) -> str:
    if value is None:
        return ''
    if isinstance(value, (Fraction, float)):
        return prettify_float(value, digits)
    return str(value)


def _write_csv(path: str, headers: list, rows: list) -> str:
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(headers)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return os.path.basename(path)


def _factorial_rows(sections: dict) -> list:
    rates, base = sections['rates'], sections['rates']['000']
    rows = []
    for code in CONFIG_CODES:
        rate = rates[code]
        gain = None
        if code != '000' and rate is not None and base is not None:
            gain = rate - base
        rows.append([
            code, *code, sections['missing_by_config'].get(code, 0),
            rate, sections['compile_rates'][code], gain
        ])
    return rows


def _effect_rows(sections: dict) -> list:
    rows = []
    for factor, entry in sections['main'].items():
        estimate, levels = entry['estimate'], entry['levels']
        high, low = levels if levels else (None, None)
        if estimate is None:
            rows.append([factor, low, high, None, None, None, 0, ''])
            continue
        rows.append([
            factor, low, high, estimate.point, estimate.ci_low,
            estimate.ci_high, estimate.resamples, estimate.method
        ])
    return rows


def _usage_rows(sections: dict) -> list:
    usage, expected = sections['usage'], sections['usage_expected']
    coverage = usage.coverage(expected) if expected else {}
    return [
        [code, usage.transcripts[code], coverage.get(code),
         *(usage.get(code, group) for group in USAGE_COLUMNS)]
        for code in sorted(usage.counts)
    ]


def _reduction_rows(sections: dict) -> list:
    usage, rows = sections['usage'], []
    for a, b in REPL_REDUCTIONS:
        if a in usage.counts and b in usage.counts:
            before, after = usage.get(a, 'repl'), usage.get(b, 'repl')
            rows.append(
                [a, b, 'repl', before, after,
                 factorial.reduction(before, after)]
            )
    return rows


def _domain_effect_rows(sections: dict) -> list:
    rows = []
    for label, effects in sections['domain_effects'].items():
        if effects is None:
            continue
        for domain, row in effects['rows'].items():
            rows.append([label, domain, row['low'], row['high'], row['delta']])
        rows.append([label, 'mean', None, None, effects['mean_delta']])
    return rows


def plot_efficiency(curves: dict, path: str) -> str:
    fig, ax = plt.subplots(figsize=(6, 4))
    for code, curve in curves.items():
        budgets = sorted(b for b, v in curve.items() if v is not None)
        if budgets:
            ax.step(
                budgets, [float(curve[b]) * 100 for b in budgets],
                where='post', label=code
            )
    ax.set_xlabel('step budget')
    ax.set_ylabel('cumulative faithful rate (%)')
    ax.set_ylim(0, 100)
    ax.grid(alpha=0.3)
    if curves:
        ax.legend(title='TFS', fontsize='small')
    fig.savefig(path, dpi=150, bbox_inches='tight', metadata={'Software': None})
    plt.close(fig)
    return os.path.basename(path)


def plot_heatmap(domain_rates: dict, path: str) -> str:
    domains = list(domain_rates)
    grid = np.full((len(domains), len(CONFIG_CODES)), np.nan)
    for i, domain in enumerate(domains):
        for j, code in enumerate(CONFIG_CODES):
            if domain_rates[domain][code] is not None:
                grid[i, j] = float(domain_rates[domain][code])
    fig, ax = plt.subplots(figsize=(8, 1 + 0.6 * max(len(domains), 1)))
    image = ax.imshow(
        np.ma.masked_invalid(grid), cmap='viridis', vmin=0, vmax=100,
        aspect='auto'
    )
    ax.set_xticks(range(len(CONFIG_CODES)), CONFIG_CODES)
    ax.set_yticks(range(len(domains)), domains)
    for (i, j), value in np.ndenumerate(grid):
        if not np.isnan(value):
            ax.text(j, i, f"{value:.0f}", ha='center', va='center',
                    color='white' if value < 60 else 'black', fontsize=8)
    fig.colorbar(image, ax=ax, label='faithful rate (%)')
    fig.savefig(path, dpi=150, bbox_inches='tight', metadata={'Software': None})
    plt.close(fig)
    return os.path.basename(path)


def plot_main_effects(main: dict, path: str) -> str:
    labels, points, errors = [], [], [[], []]
    for factor, entry in main.items():
        estimate = entry['estimate']
        if estimate is None:
            continue
        labels.append(factor)
        points.append(float(estimate.point))
        errors[0].append(float(estimate.point - estimate.ci_low))
        errors[1].append(float(estimate.ci_high - estimate.point))
    fig, ax = plt.subplots(figsize=(4, 4))
    if labels:
        ax.bar(labels, points, yerr=errors, capsize=4, color='tab:blue')
    ax.axhline(0, color='black', linewidth=0.8)
    ax.set_ylabel('main effect (points)')
    fig.savefig(path, dpi=150, bbox_inches='tight', metadata={'Software': None})
    plt.close(fig)
    return os.path.basename(path)


def emit_report(
        store, out_dir: Optional[str] = None, *, plots: bool = True,
        **kwargs
        ) -> dict:
    """
    Write the report bundle of `store`

    :arguments:
        store(RunStore): experiment store
        out_dir(str | None): default `<store>/report`
    :keyword arguments:
        plots(bool)=True: also render PNG figures
        **kwargs: passed to `analyze_store`
    :return:
        manifest(dict): also written to manifest.json
    """
    sections = analyze_store(store, **kwargs)
    out_dir = out_dir or os.path.join(store.path, settings.REPORT_DIRNAME)
    os.makedirs(out_dir, exist_ok=True)
    path = lambda name: os.path.join(out_dir, name)
    files = [
        _write_csv(
            path('factorial.csv'),
            ['config', 'T', 'F', 'S', 'missing', 'faithful_pct',
             'compile_pct', 'gain_pts'],
            _factorial_rows(sections)
        ),
        _write_csv(
            path('effects.csv'),
            ['factor', 'low_pct', 'high_pct', 'effect_pts', 'ci_low',
             'ci_high', 'resamples', 'method'],
            _effect_rows(sections)
        ),
    ]
    effects = sections['effects'] or {}
    files.append(_write_csv(
        path('interactions.csv'), ['term', 'points'],
        [[f"simple {k}", v] for k, v in effects.get('simple', {}).items()]
        + [[k, v] for k, v in effects.get('interaction', {}).items()]
    ))
    files.append(_write_csv(
        path('consensus.csv'),
        ['system', 'pass_primary', 'pass_secondary', 'pass_consensus',
         'consensus_rate', 'judged', 'missing', 'judge_invalid'],
        [[s.system, s.pass_primary, s.pass_secondary, s.pass_consensus,
          s.consensus_rate, s.judged, s.missing, s.judge_invalid]
         for s in sections['consensus']]
        + [['mean', None, None, None, sections['mean_consensus_rate'],
            None, None, None]]
    ))
    containment = sections['containment']
    files.append(_write_csv(
        path('containment.csv'),
        ['system', 'primary_only', 'secondary_only', 'both', 'judged'],
        [[system, *row.values()]
         for system, row in containment['systems'].items()]
    ))
    files.append(_write_csv(
        path('disagreement_by_domain.csv'), ['domain', 'disagreements'],
        list(containment['domains'].items())
    ))
    curves = sections['curves']
    files.append(_write_csv(
        path('efficiency.csv'), ['budget', *curves],
        [[b, *(curves[code][b] for code in curves)]
         for b in settings.EFFICIENCY_BUDGETS]
    ))
    files.append(_write_csv(
        path('domains.csv'),
        ['domain', 'n', 'compile', 'faithful', 'conditional', 'mean_steps',
         'median_steps', 'empty'],
        [[domain, row['n'], row.get('compile'), row.get('faithful'),
          row.get('conditional'), row.get('mean_steps'),
          row.get('median_steps'), row['empty']]
         for domain, row in sections['domains'].items()]
    ))
    files.append(_write_csv(
        path('domain_effects.csv'),
        ['effect', 'domain', 'low_pct', 'high_pct', 'delta_pts'],
        _domain_effect_rows(sections)
    ))
    files.append(_write_csv(
        path('usage.csv'),
        ['config', 'transcripts', 'coverage', *USAGE_COLUMNS],
        _usage_rows(sections)
    ))
    files.append(_write_csv(
        path('usage_reductions.csv'),
        ['from', 'to', 'tool', 'before', 'after', 'reduction_pct'],
        _reduction_rows(sections)
    ))
    files.append(_write_csv(
        path('grades_by_domain.csv'), ['domain', *CONFIG_CODES],
        [[domain, *(row.get(code) for code in CONFIG_CODES)]
         for domain, row in sections['grades'].items()]
    ))
    files.append(_write_csv(
        path('orchestrators.csv'),
        ['orchestrator', 'n', 'count', 'rate', 'baseline_rate', 'uplift'],
        [[name, *row.values()]
         for name, row in sections['orchestrators'].items()]
    ))
    if plots:
        files.append(plot_efficiency(curves, path('efficiency.png')))
        files.append(plot_heatmap(
            sections['domain_rates'], path('heatmap.png')
        ))
        files.append(plot_main_effects(
            sections['main'], path('main_effects.png')
        ))

    usage = sections['usage']
    manifest = {
        'experiment_id': sections['experiment_id'],
        'store_hash': store.store_hash(),
        'generated_at': get_timestamp(),
        'orchestrator_id': sections['orchestrator_id'],
        'metric_id': sections['metric_id'],
        'theorems': sections['theorems'],
        'runs': sections['runs'],
        'missing_cells': len(sections['missing']),
        'missing_by_config': sections['missing_by_config'],
        'bootstrap': {
            'method': 'percentile', 'resamples': sections['resamples'],
            'seed': sections['seed'],
            'percentiles': list(settings.CI_PERCENTILES),
        },
        'usage_coverage': {
            code: f"{n}/{sections['usage_expected']}"
            for code, n in sorted(usage.transcripts.items())
        },
        'usage_unknown_tools': sorted(usage.unknown),
        'notes': [FXS_NOTE, *sections['notes']],
        'files': sorted(files),
    }
    with open(path('manifest.json'), 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write('\n')
    settings.logger.info(
        f"Report for {store.experiment_id} written to {out_dir}"
    )
    return manifest


def render_console(sections: dict) -> str:
    """Plain-text tables of the headline numbers"""
    blocks = [
        f"Experiment {sections['experiment_id']}, orchestrator "
        f"{sections['orchestrator_id']}, metric {sections['metric_id']}, "
        f"{sections['theorems']} theorems"
    ]
    blocks.append(format_table(
        ['TFS', 'Faith.%', 'Compile%', 'Gain'],
        [[code, _cell(rate, 1), _cell(compile_rate, 1),
          prettify_points(gain) if gain is not None else '']
         for code, _, _, _, _, rate, compile_rate, gain
         in _factorial_rows(sections)]
    ))
    blocks.append(format_table(
        ['Factor', 'X=0', 'X=1', 'Effect', '95% CI'],
        [[factor, _cell(low, 1), _cell(high, 1),
          prettify_points(point) if point is not None else 'missing',
          f"[{_cell(ci_low, 1)}, {_cell(ci_high, 1)}]"
          if ci_low is not None else '']
         for factor, low, high, point, ci_low, ci_high, _, _
         in _effect_rows(sections)]
    ))
    if sections['effects']:
        effects = sections['effects']
        blocks.append(format_table(
            ['Term', 'Points'],
            [[f"simple {k}", prettify_points(v)]
             for k, v in effects['simple'].items()]
            + [[k, prettify_points(v)]
               for k, v in effects['interaction'].items()]
        ))
    blocks.extend(f"NOTE: {note}" for note in sections['notes'])
    return '\n\n'.join(blocks)
