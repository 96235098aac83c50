import argparse
import os
import sys

from configs import settings
from models import exceptions
from models.corpus import load_corpus
from models.logger import Logger, cprint
from models.experiment import ExperimentConfig, run_experiment, run_judging
from models.report import analyze_store, emit_report, render_console
from models.store import RunStore
from models.verdict import audit_agreement, export_audit
from utils import prettify_float


def is_valid_file(parser, arg, *, ext: str = None, check_exists: bool = True):
    if check_exists and not os.path.exists(arg):
        parser.error(f"The file {arg} does not exist!")
    elif ext and os.path.splitext(arg)[1] != ext:
        parser.error(f"The file {arg} has wrong extension!")
    else:
        return arg


def load_experiment(namespace) -> ExperimentConfig:
    overrides = {
        'experimentId': namespace.id,
        'corpus': getattr(namespace, 'corpus', None),
        'config': getattr(namespace, 'config', None),
        'orchestrator': getattr(namespace, 'orchestrator', None),
        'tMax': getattr(namespace, 't_max', None),
        'backend': getattr(namespace, 'backend', None),
        'parallelism': getattr(namespace, 'parallelism', None),
        'fixtures': getattr(namespace, 'fixtures', None),
        'storeRoot': getattr(namespace, 'store_root', None),
    }
    return ExperimentConfig.load(namespace.experiment, overrides)


def existing_store(experiment: ExperimentConfig) -> RunStore:
    if not os.path.isdir(
            os.path.join(experiment.store_root, experiment.experiment_id)):
        raise exceptions.UsageError(
            f"experiment {experiment.experiment_id} has no store under "
            f"{experiment.store_root}", cause='experiment'
        )
    return RunStore(experiment.experiment_id, experiment.store_root)


def cmd_run(namespace):
    experiment = load_experiment(namespace)
    summary = run_experiment(experiment, overwrite=namespace.overwrite)
    color = 'yellow' if summary['interrupted'] else 'green'
    status = 'INTERRUPTED' if summary['interrupted'] else 'SUCCESS'
    cprint(
        "{}: experiment {} config {}: {} episodes stored, {} skipped, "
        "{} compile".format(
            status, summary['experiment_id'], summary['config'],
            summary['completed'], summary['skipped'],
            summary['compile_pass']
        ),
        color
    )


def cmd_judge(namespace):
    experiment = load_experiment(namespace)
    existing_store(experiment)
    coverage = run_judging(experiment, rejudge=namespace.rejudge)
    color = 'green' if coverage['judged'] == coverage['total'] else 'yellow'
    cprint(
        "SUCCESS: {}/{} runs judged, {} judge-invalid".format(
            coverage['judged'], coverage['total'], coverage['judge_invalid']
        ),
        color
    )


def _report_kwargs(namespace, experiment: ExperimentConfig) -> dict:
    return {
        'corpus': load_corpus(experiment.corpus) if experiment.corpus
        else None,
        'orchestrator_id': namespace.orchestrator,
        'metric_id': namespace.metric,
        'resamples': namespace.resamples,
        'seed': experiment.seed,
        'primary_judge': experiment.primary_judge,
        'secondary_judge': experiment.secondary_judge,
    }


def cmd_analyze(namespace):
    experiment = load_experiment(namespace)
    store = existing_store(experiment)
    kwargs = _report_kwargs(namespace, experiment)
    print(render_console(analyze_store(store, **kwargs)))
    manifest = emit_report(store, namespace.out, **kwargs)
    cprint(
        f"SUCCESS: report with {len(manifest['files'])} files, "
        f"{manifest['missing_cells']} missing cells",
        'yellow' if manifest['missing_cells'] else 'green'
    )


def cmd_report(namespace):
    experiment = load_experiment(namespace)
    store = existing_store(experiment)
    manifest = emit_report(
        store, namespace.out, plots=not namespace.no_plots,
        **_report_kwargs(namespace, experiment)
    )
    for name in manifest['files']:
        print(name)
    cprint(
        f"SUCCESS: report of {experiment.experiment_id} written, "
        f"{manifest['missing_cells']} missing cells",
        'yellow' if manifest['missing_cells'] else 'green'
    )


def cmd_export_audit(namespace):
    experiment = load_experiment(namespace)
    store = existing_store(experiment)
    count = export_audit(
        store.all_runs(), namespace.out, namespace.sample_size,
        experiment.seed, primary_judge=experiment.primary_judge
    )
    cprint(f"SUCCESS: {count} runs exported to {namespace.out}", 'green')


def cmd_audit_agreement(namespace):
    runs = None
    if namespace.id or namespace.experiment:
        runs = existing_store(load_experiment(namespace)).all_runs()
    agreement = audit_agreement(namespace.sheet, runs)
    for key in ('exact', 'within_one', 'crossing', 'other'):
        print(
            f"{key}: {agreement[key]}/{agreement['total']} "
            f"({prettify_float(agreement[key + '_pct'], 1)}%)"
        )
    cprint(
        "SUCCESS: binary agreement {}%".format(
            prettify_float(agreement['binary_agreement_pct'], 1)
        ),
        'green'
    )


EXIT_CODES = [
    (exceptions.FixtureMissError, settings.EXIT_FIXTURE_MISS),
    (exceptions.ToolchainConfigurationError, settings.EXIT_CONFIGURATION),
    (exceptions.UsageError, settings.EXIT_USAGE),
    (exceptions.CorpusError, settings.EXIT_USAGE),
]


def dispatch(command, namespace) -> int:
    settings.logger.set_level(namespace.level)
    try:
        command(namespace)
    except tuple(e for e, _ in EXIT_CODES) as e:
        code = next(c for cls, c in EXIT_CODES if isinstance(e, cls))
        key = f" (key {e.key})" if isinstance(e, exceptions.FixtureMissError) \
            else ''
        cprint(f"FAILURE: {e}{key}", 'red')
        return code
    return settings.EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Tool-ablation harness for statement autoformalization"
    )
    subparsers = parser.add_subparsers(help="command", dest='command')

    def add_common(sub):
        sub.add_argument(
            "-l", "--level", default="info",
            help="set logger level", type=str,
            choices=list(Logger.LOG_LEVELS)
        )
        sub.add_argument(
            '-e', '--experiment', help="experiment JSON file", default=None,
            type=lambda x: is_valid_file(sub, x, ext='.json')
        )
        sub.add_argument(
            '--id', help="experiment id", default=None,
            required=False
        )
        sub.add_argument('--store-root', default=None, help="store directory")
        sub.add_argument('--corpus', default=None, help="corpus JSONL file")
        sub.add_argument(
            '--backend', default=None, choices=settings.BACKENDS,
            help="tool and model backend"
        )
        sub.add_argument('--fixtures', default=None,
                         help="fixture directory for replay and record")
        sub.add_argument('--parallelism', type=int, default=None)

    parser_run = subparsers.add_parser('run', help="run episodes")
    add_common(parser_run)
    parser_run.add_argument('-c', '--config', default=None,
                            help="tool configuration code, e.g. 110")
    parser_run.add_argument('--orchestrator', default=None, help="model id")
    parser_run.add_argument('--t-max', type=int, default=None,
                            help=f"step budget, default {settings.T_MAX}")
    parser_run.add_argument('--overwrite', action='store_true',
                            help="rerun theorems that are already stored")

    parser_judge = subparsers.add_parser('judge', help="judge stored runs")
    add_common(parser_judge)
    parser_judge.add_argument('--rejudge', action='store_true',
                              help="replace existing verdicts")

    for name, help_text in (('analyze', "print effects and write report"),
                            ('report', "write the report bundle")):
        sub = subparsers.add_parser(name, help=help_text)
        add_common(sub)
        sub.add_argument('--orchestrator', default=None,
                         help="orchestrator of the factorial tables")
        sub.add_argument(
            '-m', '--metric', default='faithful_consensus',
            choices=['faithful_consensus', 'faithful_primary', 'compile']
        )
        sub.add_argument('--resamples', type=int,
                         default=settings.BOOTSTRAP_RESAMPLES)
        sub.add_argument('-o', '--out', default=None,
                         help="report directory, default <store>/report")
        if name == 'report':
            sub.add_argument('--no-plots', action='store_true')

    parser_export = subparsers.add_parser(
        'export-audit', help="sample faithful runs for human review"
    )
    add_common(parser_export)
    parser_export.add_argument('-o', '--out', required=True,
                               help="CSV review sheet")
    parser_export.add_argument('--sample-size', type=int,
                               default=settings.AUDIT_SAMPLE_SIZE)

    parser_agreement = subparsers.add_parser(
        'audit-agreement', help="compare human grades with the judge"
    )
    add_common(parser_agreement)
    parser_agreement.add_argument(
        'sheet', type=lambda x: is_valid_file(parser_agreement, x, ext='.csv')
    )
    return parser


COMMANDS = {
    'run': cmd_run,
    'judge': cmd_judge,
    'analyze': cmd_analyze,
    'report': cmd_report,
    'export-audit': cmd_export_audit,
    'audit-agreement': cmd_audit_agreement,
}


def main(argv=None) -> int:
    parser = build_parser()
    namespace = parser.parse_args(argv)
    if not namespace.command:
        parser.print_help()
        return settings.EXIT_USAGE
    return dispatch(COMMANDS[namespace.command], namespace)


if __name__ == '__main__':
    sys.exit(main())
