"""
Experiment orchestration: configuration, episode workers and judging
"""
import json
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from typing import Optional

from configs import settings
from utils import get_json_config, merge_dicts
from utils.dt import Stopwatch
from . import exceptions
from .corpus import TheoremItem, load_corpus
from .controller import run_episode
from .gateway import CannedJudgeModel, CannedPolicyModel, ChatModel, get_model
from .records import RunRecord, ToolConfig
from .store import RunStore
from .toolbelt import (
    Backend, LiveBackend, RecordingBackend, ReplayBackend, StubBackend,
    Toolbelt, Workspace
)
from .verdict import apply_verdicts, compile_gate, judge


__all__ = [
    'ExperimentConfig', 'make_backend', 'make_orchestrator', 'make_judge',
    'run_experiment', 'run_judging'
]


# experiment file key -> ExperimentConfig field
FILE_KEYS = {
    'experimentId': 'experiment_id',
    'corpus': 'corpus',
    'config': 'config',
    'orchestrator': 'orchestrator',
    'tMax': 't_max',
    'backend': 'backend',
    'parallelism': 'parallelism',
    'seed': 'seed',
    'primaryJudge': 'primary_judge',
    'secondaryJudge': 'secondary_judge',
    'storeRoot': 'store_root',
    'fixtures': 'fixtures',
    'stub': 'stub',
}


@dataclass
class ExperimentConfig:
    """
    Everything needed to rebuild one experiment

    :attributes:
        experiment_id(str): store sub-directory
        corpus(str | None): corpus path, required to run episodes
        config(str): tool configuration code
        orchestrator(str): model id of the agent
        backend(str): stub | replay | live | record
        fixtures(str | None): fixture directory of replay and record
        stub(dict): offline data of the stub backend; keys answers
            (theorem id -> candidate files), grades (code -> grade),
            drafts (statement -> draft), search (query -> results),
            symbols (name -> type)
    """
    experiment_id: str
    corpus: Optional[str] = None
    config: str = settings.DEFAULT_CONFIG_CODE
    orchestrator: str = settings.DEFAULT_ORCHESTRATOR
    t_max: int = settings.T_MAX
    backend: str = 'stub'
    parallelism: int = settings.COMPILER_SESSIONS
    seed: int = settings.BOOTSTRAP_SEED
    primary_judge: str = settings.PRIMARY_JUDGE
    secondary_judge: str = settings.SECONDARY_JUDGE
    store_root: str = settings.STORE_ROOT
    fixtures: Optional[str] = None
    stub: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """
        :raise:
            exceptions.UsageError: bad code, backend, budget or parallelism
        """
        if not self.experiment_id:
            raise exceptions.UsageError(
                "experiment id is required", cause='experiment_id'
            )
        ToolConfig.from_code(self.config)
        if self.backend not in settings.BACKENDS:
            raise exceptions.UsageError(
                f"unknown backend {self.backend!r}, expected one of "
                f"{', '.join(settings.BACKENDS)}", cause='backend'
            )
        if self.backend in ('replay', 'record') and not self.fixtures:
            raise exceptions.UsageError(
                f"backend {self.backend} needs a fixtures directory",
                cause='fixtures'
            )
        if not isinstance(self.t_max, int) or self.t_max < 1:
            raise exceptions.UsageError(
                f"t_max must be a positive integer, got {self.t_max!r}",
                cause='t_max'
            )
        if not isinstance(self.parallelism, int) or self.parallelism < 1:
            raise exceptions.UsageError(
                f"parallelism must be a positive integer, got "
                f"{self.parallelism!r}", cause='parallelism'
            )

    @property
    def tool_config(self) -> ToolConfig:
        return ToolConfig.from_code(self.config)

    @classmethod
    def load(cls, path: Optional[str] = None,
             overrides: Optional[dict] = None) -> 'ExperimentConfig':
        """
        Merge config.json defaults, an experiment file and CLI overrides

        Later sources win; None values never override.

        :arguments:
            path(str | None): experiment JSON file
            overrides(dict | None): camelCase keys as in the file
        :raise:
            exceptions.UsageError: unreadable file, unknown key or invalid
                value
        """
        defaults = get_json_config().get('experiment', {})
        document = {}
        if path:
            try:
                with open(path, 'r', encoding='utf-8') as f:
                    document = json.load(f)
            except (OSError, ValueError) as e:
                raise exceptions.UsageError(
                    f"cannot read experiment file {path}: {e}", cause='file'
                ) from None
            # relative paths in the file are relative to the file
            base = os.path.dirname(os.path.abspath(path))
            for key in ('corpus', 'fixtures', 'storeRoot'):
                if document.get(key) and not os.path.isabs(document[key]):
                    document[key] = os.path.join(base, document[key])
        merged = merge_dicts(defaults, document, overrides or {})
        unknown = set(merged) - set(FILE_KEYS)
        if unknown:
            raise exceptions.UsageError(
                f"unknown experiment keys: {', '.join(sorted(unknown))}",
                cause='keys'
            )
        if not merged.get('experimentId'):
            raise exceptions.UsageError(
                "experiment id is required, pass --id or set experimentId",
                cause='experiment_id'
            )
        return cls(**{FILE_KEYS[k]: v for k, v in merged.items()})

    def to_dict(self) -> dict:
        names = {v: k for k, v in FILE_KEYS.items()}
        return {names[k]: v for k, v in asdict(self).items()}


def make_backend(experiment: ExperimentConfig) -> Backend:
    stub = experiment.stub
    if experiment.backend == 'stub':
        return StubBackend(
            symbols=stub.get('symbols'), drafts=stub.get('drafts'),
            search_results=stub.get('search'),
            sessions=experiment.parallelism
        )
    if experiment.backend == 'replay':
        return ReplayBackend(experiment.fixtures)
    live = LiveBackend(sessions=experiment.parallelism)
    if experiment.backend == 'record':
        return RecordingBackend(live, experiment.fixtures)
    return live


def make_orchestrator(experiment: ExperimentConfig) -> ChatModel:
    if experiment.backend == 'stub':
        return CannedPolicyModel(
            experiment.stub.get('answers', {}), experiment.orchestrator
        )
    return get_model(
        experiment.orchestrator, experiment.backend,
        fixtures_dir=experiment.fixtures
    )


def make_judge(experiment: ExperimentConfig, judge_id: str) -> ChatModel:
    if experiment.backend == 'stub':
        return CannedJudgeModel(experiment.stub.get('grades', {}), judge_id)
    return get_model(
        judge_id, experiment.backend, fixtures_dir=experiment.fixtures
    )


class DomainProgress(object):
    """Per-domain done/total counters logged as episodes finish"""

    def __init__(self, items: list, done: set):
        self.total = Counter(item.domain.value for item in items)
        self.done = Counter(
            item.domain.value for item in items if item.id in done
        )

    def update(self, item: TheoremItem) -> str:
        self.done[item.domain.value] += 1
        return ', '.join(
            f"{domain} {self.done[domain]}/{self.total[domain]}"
            for domain in settings.DOMAINS if self.total[domain]
        )


def run_one(
        item: TheoremItem, config: ToolConfig, gateway: ChatModel,
        backend: Backend, store: RunStore, t_max: int, *,
        overwrite: bool = False
        ) -> RunRecord:
    """Run, gate and store one episode in its own workspace"""
    logger = settings.logger.bind(f"{item.id}/{config}")
    workspace = Workspace(os.path.join(
        store.path, settings.WORKSPACES_DIRNAME, item.id, config.code()
    ))
    toolbelt = None if config.is_baseline else Toolbelt(
        config, backend, workspace, logger=logger
    )
    with Stopwatch() as watch:
        result = run_episode(
            item, config, gateway, toolbelt, t_max, logger=logger
        )
        # failed episodes endorse no answer; their last file is kept only
        compile_pass = result.succeeded and compile_gate(
            result.final_code, backend
        )
    transcript = result.transcript
    record = RunRecord(
        theorem_id=item.id, domain=item.domain.value, config=config,
        orchestrator_id=gateway.model_id, steps_used=result.steps_used,
        final_code=result.final_code, compile_pass=compile_pass,
        transcript_ref=transcript.content_hash(),
        wall_time_ms=watch.elapsed_ms, t_max=t_max,
        annotations=list(result.annotations)
    )
    store.store_run(record, transcript, overwrite=overwrite)
    return record


def run_experiment(
        experiment: ExperimentConfig, *, items: Optional[list] = None,
        gateway: Optional[ChatModel] = None,
        backend: Optional[Backend] = None, overwrite: bool = False
        ) -> dict:
    """
    Run every theorem not yet stored for (config, orchestrator)

    Episodes run on a bounded thread pool. Ctrl-C cancels queued episodes
    and lets running ones finish and persist. A replay miss or a toolchain
    configuration error stops the run after in-flight episodes drain.

    :keyword arguments:
        items(list[TheoremItem] | None): default loaded from the corpus
        gateway, backend: default built from `experiment`
        overwrite(bool)=False: rerun stored theorems too
    :raise:
        exceptions.FixtureMissError, exceptions.ToolchainConfigurationError
    :return:
        summary(dict): experiment_id, config, scheduled, completed,
            skipped, compile_pass, interrupted
    """
    if items is None:
        if not experiment.corpus:
            raise exceptions.UsageError(
                "a corpus path is required to run episodes", cause='corpus'
            )
        items = load_corpus(experiment.corpus)
    config = experiment.tool_config
    gateway = gateway or make_orchestrator(experiment)
    backend = backend or make_backend(experiment)
    store = RunStore(experiment.experiment_id, experiment.store_root)

    done = set() if overwrite else store.completed_ids(
        config, gateway.model_id
    )
    pending = [item for item in items if item.id not in done]
    progress = DomainProgress(items, done)
    summary = {
        'experiment_id': experiment.experiment_id, 'config': config.code(),
        'scheduled': len(pending), 'completed': 0,
        'skipped': len(items) - len(pending), 'compile_pass': 0,
        'interrupted': False
    }
    if summary['skipped']:
        settings.logger.info(
            f"Resuming: {summary['skipped']} theorems already stored for "
            f"{config}/{gateway.model_id}"
        )
    pool = ThreadPoolExecutor(max_workers=experiment.parallelism)
    futures = {
        pool.submit(
            run_one, item, config, gateway, backend, store,
            experiment.t_max, overwrite=overwrite
        ): item
        for item in pending
    }
    try:
        for future in as_completed(futures):
            item = futures[future]
            record = future.result()
            summary['completed'] += 1
            summary['compile_pass'] += record.compile_pass
            settings.logger.info(
                f"{item.id} done in {record.steps_used} steps, "
                f"compile={record.compile_pass} [{progress.update(item)}]"
            )
    except KeyboardInterrupt:
        settings.logger.warning(
            "Interrupted: cancelling queued episodes, waiting for running ones"
        )
        summary['interrupted'] = True
    except (exceptions.FixtureMissError,
            exceptions.ToolchainConfigurationError) as e:
        settings.logger.error(f"Stopping experiment: {e}")
        raise
    finally:
        pool.shutdown(wait=True, cancel_futures=True)
    if summary['interrupted']:
        summary['completed'] = len(
            store.completed_ids(config, gateway.model_id) - done
        )
    settings.logger.info(
        f"Experiment {experiment.experiment_id} config {config}: "
        f"{summary['completed']}/{summary['scheduled']} episodes stored"
    )
    return summary


def judge_run(
        record: RunRecord, statement: str, judges: dict,
        primary_judge: str, secondary_judge: str
        ) -> RunRecord:
    verdicts, invalid = {}, []
    for judge_id, model in judges.items():
        try:
            verdicts[judge_id] = judge(
                statement, record.final_code, record.compile_pass, model
            )
        except exceptions.JudgeInvalidError as e:
            settings.logger.warning(f"{record.key}: {e}")
            invalid.append(judge_id)
    return apply_verdicts(
        record, verdicts, invalid, primary_judge, secondary_judge
    )


def run_judging(
        experiment: ExperimentConfig, *, items: Optional[list] = None,
        judges: Optional[dict] = None, rejudge: bool = False
        ) -> dict:
    """
    Attach both judges' verdicts to every stored run

    Runs that already carry both verdicts are skipped unless `rejudge`.

    :keyword arguments:
        items(list[TheoremItem] | None): statements, default from the corpus
        judges(dict[str, ChatModel] | None): judge id -> model
    :return:
        coverage(dict): total, judged, judge_invalid, newly_judged
    """
    if items is None:
        items = load_corpus(experiment.corpus) if experiment.corpus else []
    statements = {item.id: item.statement_text for item in items}
    primary, secondary = experiment.primary_judge, experiment.secondary_judge
    judges = judges or {
        judge_id: make_judge(experiment, judge_id)
        for judge_id in (primary, secondary)
    }
    store = RunStore(experiment.experiment_id, experiment.store_root)
    runs = store.all_runs()
    todo = [
        r for r in runs
        if rejudge or not {primary, secondary} <= set(r.verdicts)
    ]
    unknown = [r.theorem_id for r in todo if r.theorem_id not in statements]
    if unknown:
        raise exceptions.UsageError(
            f"no statement for {len(unknown)} stored theorems, e.g. "
            f"{unknown[0]}; pass the corpus", cause='corpus'
        )
    with ThreadPoolExecutor(max_workers=experiment.parallelism) as pool:
        futures = [
            pool.submit(
                judge_run, run, statements[run.theorem_id], judges,
                primary, secondary
            )
            for run in todo
        ]
        for future in as_completed(futures):
            store.update_run(future.result())
    runs = store.all_runs()
    coverage = {
        'total': len(runs),
        'judged': sum(
            {primary, secondary} <= set(r.verdicts) for r in runs
        ),
        'judge_invalid': sum(bool(r.judge_invalid) for r in runs),
        'newly_judged': len(todo),
    }
    settings.logger.info(
        f"Judged {coverage['judged']}/{coverage['total']} runs of "
        f"{experiment.experiment_id} ({coverage['judge_invalid']} "
        f"judge-invalid)"
    )
    return coverage
