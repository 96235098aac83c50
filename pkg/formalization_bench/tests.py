import csv
import itertools
import json
import os
import random
import shutil
import tempfile
import unittest
from dataclasses import replace
from fractions import Fraction
from unittest import mock

import numpy as np
import requests

import manage
from configs import settings
from models import (
    clients, controller, corpus, exceptions, experiment, factorial, fixtures,
    gateway, lean, records, report, store, toolbelt, verdict
)
from models.logger import Logger
from utils import merge_dicts, prettify_float, text


BAD_CODE = (
    "import Mathlib\n\ntheorem t (p : Polynomial ℝ) "
    "(h : Polynomial.IsConstant p) : p.natDegree = 0 := by sorry"
)
GOOD_CODE = (
    "import Mathlib\n\ntheorem t (p : Polynomial ℝ) (h : p.natDegree = 0) : "
    "∃ c : ℝ, p = Polynomial.C c := by sorry"
)
STATEMENT = "A polynomial of degree zero is constant."

# faithful counts out of 400 per config, GPT-5.2 orchestrator
FACTORIAL_COUNTS = {
    '000': 79, '100': 98, '001': 132, '101': 144,
    '110': 235, '111': 242, '010': 245, '011': 248,
}


def make_item(theorem_id='t1', domain='Algebra', statement=STATEMENT):
    return corpus.TheoremItem(theorem_id, corpus.Domain(domain), statement)


def make_items(n):
    return [
        make_item(f"thm_{i:02d}", settings.DOMAINS[i % 4], f"Statement {i}")
        for i in range(n)
    ]


def make_run(theorem_id, code='111', *, domain='Algebra', steps=3,
             compile_pass=True, faithful=False, orchestrator='gpt-5.2',
             verdicts=None):
    return records.RunRecord(
        theorem_id=theorem_id, domain=domain,
        config=records.ToolConfig.from_code(code),
        orchestrator_id=orchestrator, steps_used=steps,
        final_code=GOOD_CODE, compile_pass=compile_pass, transcript_ref='ref',
        verdicts=verdicts or {}, faithful_primary=faithful,
        faithful_consensus=faithful
    )


def make_transcript(text_='done'):
    transcript = records.EpisodeTranscript()
    transcript.append(records.Message('system', 'system prompt'))
    transcript.append(records.Message('user', 'user prompt'))
    transcript.append(records.Message('assistant', text_))
    return transcript


def make_response(status, body=''):
    response = requests.Response()
    response.status_code = status
    response._content = body.encode('utf-8')
    response.encoding = 'utf-8'
    return response


def stub_data():
    return {
        'answers': {},
        'grades': {GOOD_CODE: 10, BAD_CODE: 2},
    }


def stub_experiment(root, items, **kwargs):
    stub = stub_data()
    stub['answers'] = {item.id: [BAD_CODE, GOOD_CODE] for item in items}
    return experiment.ExperimentConfig(
        experiment_id='smoke', store_root=root, parallelism=2, stub=stub,
        **kwargs
    )


def write_corpus(path, rows):
    with open(path, 'w', encoding='utf-8') as f:
        for row in rows:
            f.write((row if isinstance(row, str) else json.dumps(row)) + '\n')
    return path


class BasicTestCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.mkdtemp(prefix='fbench_')

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)

    def path(self, *parts):
        return os.path.join(self.tmp, *parts)


class CorpusTestCase(BasicTestCase):
    def test_load_corpus_keeps_order_and_counts(self):
        rows = [
            {'id': f"id_{i}", 'domain': settings.DOMAINS[i % 4],
             'statement': f"statement {i}", 'source': 'book'}
            for i in range(10)
        ]
        path = write_corpus(self.path('corpus.jsonl'), rows)
        items = corpus.load_corpus(path)
        self.assertEqual([x.id for x in items], [r['id'] for r in rows])
        self.assertEqual(items, corpus.load_corpus(path))
        counts = corpus.corpus_counts(items)
        self.assertEqual(counts['total'], 10)
        self.assertEqual(
            sum(counts[d] for d in settings.DOMAINS), counts['total']
        )
        self.assertEqual(counts['RealAnalysis'], 3)
        self.assertEqual(items[0].lean_filename, 'id_0.lean')

    def test_load_corpus_errors(self):
        with self.assertRaises(exceptions.CorpusError):
            corpus.load_corpus(write_corpus(self.path('empty.jsonl'), []))
        with self.assertRaises(exceptions.CorpusError):
            corpus.load_corpus(self.path('missing.jsonl'))
        row = {'id': 'same', 'domain': 'Algebra', 'statement': 's'}
        with self.assertRaises(exceptions.DuplicateIdError) as cm:
            corpus.load_corpus(write_corpus(self.path('dup.jsonl'), [row, row]))
        self.assertIn("'same'", str(cm.exception))
        with self.assertRaises(exceptions.CorpusError) as cm:
            corpus.load_corpus(write_corpus(self.path('domain.jsonl'), [
                row, {'id': 'x', 'domain': 'NumberTheory', 'statement': 's'}
            ]))
        self.assertIn('line 2', str(cm.exception))
        with self.assertRaises(exceptions.CorpusError) as cm:
            corpus.load_corpus(
                write_corpus(self.path('bad.jsonl'), ['{"id": "x",'])
            )
        self.assertIn('line 1', str(cm.exception))

    def test_load_corpus_rejects_unsafe_input(self):
        for bad_id in (['a', 'b'], 7, '../escape', 'a/b', 'x|y'):
            path = write_corpus(self.path('ids.jsonl'), [
                {'id': bad_id, 'domain': 'Algebra', 'statement': 's'}
            ])
            with self.assertRaises(exceptions.CorpusError) as cm:
                corpus.load_corpus(path)
            self.assertIn('line 1', str(cm.exception))
        path = self.path('latin.jsonl')
        with open(path, 'wb') as f:
            f.write(
                '{"id": "x", "domain": "Algebra", "statement": "é"}\n'
                .encode('latin-1')
            )
        with self.assertRaises(exceptions.CorpusError) as cm:
            corpus.load_corpus(path)
        self.assertIn('not UTF-8', str(cm.exception))
        with self.assertRaises(exceptions.CorpusError):
            corpus.load_corpus(self.tmp)

    def test_theorem_item_validation(self):
        with self.assertRaises(exceptions.CorpusError):
            corpus.TheoremItem('', corpus.Domain.ALGEBRA, 's')
        with self.assertRaises(exceptions.CorpusError):
            corpus.TheoremItem('x', 'Geometry', 's')
        self.assertEqual(
            corpus.TheoremItem('x', 'Topology', 's').domain,
            corpus.Domain.TOPOLOGY
        )


class StoreTestCase(BasicTestCase):
    def setUp(self):
        super().setUp()
        self.store = store.RunStore('exp', self.tmp)
        self.transcript = make_transcript()

    def record(self, theorem_id='t1', code='111', **kwargs):
        data = dict(
            theorem_id=theorem_id, domain='Algebra',
            config=records.ToolConfig.from_code(code),
            orchestrator_id='gpt-5.2', steps_used=3, final_code=GOOD_CODE,
            compile_pass=True,
            transcript_ref=self.transcript.content_hash()
        )
        data.update(kwargs)
        return records.RunRecord(**data)

    def test_round_trip(self):
        record = self.record(verdicts={
            'gpt-5.2': records.JudgeVerdict('gpt-5.2', True, 10, 'fine')
        }, faithful_primary=True, annotations=['embedded_success_declaration'])
        key = self.store.store_run(record, self.transcript)
        self.assertEqual(key, 't1|111|gpt-5.2')
        self.assertEqual(self.store.all_runs(), [record])
        self.assertEqual(
            self.store.load_transcript(record.transcript_ref).to_dict(),
            self.transcript.to_dict()
        )
        reopened = store.RunStore('exp', self.tmp)
        self.assertEqual(reopened.all_runs(), [record])

    def test_invalid_record_rejected(self):
        with self.assertRaises(exceptions.InvariantViolationError):
            self.store.store_run(
                self.record(compile_pass=False, faithful_primary=True),
                self.transcript
            )
        with self.assertRaises(exceptions.InvariantViolationError):
            self.store.store_run(self.record(steps_used=30), self.transcript)
        with self.assertRaises(exceptions.InvariantViolationError):
            self.store.store_run(
                self.record(transcript_ref='0' * 64), self.transcript
            )
        self.assertEqual(len(self.store), 0)

    def test_conflict_and_overwrite(self):
        self.store.store_run(self.record(), self.transcript)
        with self.assertRaises(exceptions.StoreConflictError):
            self.store.store_run(self.record(steps_used=5), self.transcript)
        self.store.store_run(
            self.record(steps_used=5), self.transcript, overwrite=True
        )
        self.assertEqual(len(self.store), 1)
        self.assertEqual(self.store.all_runs()[0].steps_used, 5)

    def test_query_order_and_filters(self):
        self.assertEqual(self.store.all_runs(), [])
        self.store.store_run(self.record('t2', '111'), self.transcript)
        self.store.store_run(self.record('t1', '000'), self.transcript)
        self.store.store_run(
            self.record('t1', '111', domain='Topology'), self.transcript
        )
        self.assertEqual(
            [r.key for r in self.store.all_runs()],
            ['t1|000|gpt-5.2', 't1|111|gpt-5.2', 't2|111|gpt-5.2']
        )
        self.assertEqual(len(self.store.query_runs(config='111')), 2)
        self.assertEqual(len(self.store.query_runs(domain='Topology')), 1)
        self.assertEqual(self.store.query_runs(orchestrator_id='other'), [])
        self.assertEqual(
            self.store.completed_ids('111', 'gpt-5.2'), {'t1', 't2'}
        )
        self.assertTrue(self.store.has_run('t1', '000', 'gpt-5.2'))

    def test_partial_last_line_is_ignored(self):
        self.store.store_run(self.record(), self.transcript)
        with open(self.store.runs_path, 'a', encoding='utf-8') as f:
            f.write('{"theorem_id": "t9", "config"')
        self.assertEqual(len(self.store), 1)

    def test_append_after_torn_line(self):
        with open(self.store.runs_path, 'a', encoding='utf-8') as f:
            f.write('{"theorem_id": "t0", "conf')
        key = self.store.store_run(self.record(), self.transcript)
        self.assertEqual([r.key for r in self.store.all_runs()], [key])
        self.store.update_run(self.record(steps_used=4))
        self.assertEqual(self.store.all_runs()[0].steps_used, 4)
        with open(self.store.runs_path, 'r', encoding='utf-8') as f:
            lines = f.read().split('\n')
        self.assertEqual(lines[0], '{"theorem_id": "t0", "conf')
        self.assertEqual(len(lines), 4)

    def test_unknown_transcript(self):
        with self.assertRaises(exceptions.InvariantViolationError):
            self.store.load_transcript('f' * 64)

    def test_invalid_experiment_id(self):
        with self.assertRaises(exceptions.UsageError):
            store.RunStore('..', self.tmp)


class PromptTestCase(unittest.TestCase):
    def test_configs(self):
        codes = [c.code() for c in records.ToolConfig.all()]
        self.assertEqual(
            codes, ['000', '001', '010', '011', '100', '101', '110', '111']
        )
        self.assertEqual(records.ToolConfig.from_code('000').active_tools(), [])
        self.assertEqual(
            records.ToolConfig.from_code('111').active_tools(),
            settings.TOOL_NAMES
        )
        drafter_and_search = records.ToolConfig.from_code('101')
        self.assertEqual(
            (drafter_and_search.t, drafter_and_search.f, drafter_and_search.s),
            (True, False, True)
        )
        tools = drafter_and_search.active_tools()
        self.assertIn('lean4_translator', tools)
        self.assertIn('search_online', tools)
        self.assertNotIn('lean4_repl_runner', tools)
        for bad in ('12', '1111', 'abc', '2x0'):
            with self.assertRaises(exceptions.UsageError):
                records.ToolConfig.from_code(bad)

    def test_prefix_identical_across_configs(self):
        prefix = controller.base_prompt() + controller.PROMPT_SEPARATOR
        for config in records.ToolConfig.all():
            prompt = controller.assemble_prompt(config)
            self.assertTrue(prompt.startswith(prefix))
            self.assertEqual(
                prompt[len(prefix):], controller.render_tool_block(config)
            )

    def test_tool_blocks(self):
        full = controller.render_tool_block(records.ToolConfig(True, True, True))
        self.assertTrue(full.startswith('AVAILABLE TOOLS'))
        for name in settings.TOOL_NAMES:
            self.assertIn(name + '(', full)
        self.assertEqual(controller.render_tool_block(records.ToolConfig()), '')
        block = controller.render_tool_block(
            records.ToolConfig.from_code('010')
        )
        for name in settings.TOOL_NAMES:
            if name in ('lean_write_file', 'lean4_repl_runner'):
                self.assertIn(name + '(', block)
            else:
                self.assertNotIn(name, block)

    def test_user_message(self):
        message = controller.user_message(make_item())
        self.assertIn('Theorem id: t1', message)
        self.assertIn('Target file: t1.lean', message)
        self.assertTrue(message.endswith(STATEMENT))


class ControllerTestCase(BasicTestCase):
    def setUp(self):
        super().setUp()
        self.item = make_item()
        self.backend = toolbelt.StubBackend()

    def toolbelt(self, code, backend=None, name='ws'):
        return toolbelt.Toolbelt(
            records.ToolConfig.from_code(code), backend or self.backend,
            toolbelt.Workspace(self.path(name))
        )

    def episode(self, code, script, t_max=settings.T_MAX):
        model = script if isinstance(script, gateway.ChatModel) \
            else gateway.ScriptedModel(script)
        result = controller.run_episode(
            self.item, records.ToolConfig.from_code(code), model,
            self.toolbelt(code), t_max
        )
        result.transcript.check_integrity()
        return result, model

    def test_write_and_compile_in_one_turn(self):
        message = records.Message('assistant', None, [
            records.ToolCall('', 'lean_write_file',
                             {'path': 't1.lean', 'content': GOOD_CODE}),
            records.ToolCall('', 'lean4_repl_runner', {'path': 't1.lean'}),
        ])
        result, _ = self.episode('010', [
            message, gateway.ScriptedModel.say('{"status": "success"}')
        ])
        self.assertEqual(result.status, records.SUCCESS)
        self.assertEqual(result.steps_used, 2)
        self.assertEqual(result.final_code, GOOD_CODE)
        self.assertEqual(len(result.transcript.tool_outcomes), 2)

    def test_three_step_episode(self):
        result, _ = self.episode('010', [
            gateway.ScriptedModel.call(
                'lean_write_file', path='t1.lean', content=GOOD_CODE
            ),
            gateway.ScriptedModel.call('lean4_repl_runner', path='t1.lean'),
            gateway.ScriptedModel.say('{"status": "success"}'),
        ])
        self.assertTrue(result.succeeded)
        self.assertEqual(result.steps_used, 3)
        self.assertEqual(result.transcript.steps, 3)
        self.assertEqual(result.annotations, [])

    def test_tool_error_does_not_end_episode(self):
        result, _ = self.episode('010', [
            gateway.ScriptedModel.call(
                'lean_write_file', path='sub/t1.lean', content=GOOD_CODE
            ),
            gateway.ScriptedModel.call('lean4_repl_runner', path='sub'),
            gateway.ScriptedModel.call(
                'lean4_repl_runner', path='sub/t1.lean'
            ),
            gateway.ScriptedModel.say('{"status": "success"}'),
        ])
        self.assertEqual(result.status, records.SUCCESS)
        self.assertEqual(result.steps_used, 4)
        outcomes = [o for _, o in result.transcript.tool_outcomes]
        self.assertEqual([o.ok for o in outcomes], [True, False, True])
        self.assertIn('could not read sub', outcomes[1].payload)

    def test_budget_exhausted(self):
        result, model = self.episode(
            '010', [gateway.ScriptedModel.say('still thinking')] * 30
        )
        self.assertEqual(result.status, records.FAILURE)
        self.assertEqual(result.steps_used, 24)
        self.assertEqual(model.position, 24)
        self.assertIn('budget_exhausted', result.annotations)

    def test_budget_is_validated(self):
        model = gateway.ScriptedModel(['{"status": "success"}'])
        with self.assertRaises(exceptions.UsageError):
            controller.run_episode(
                self.item, records.ToolConfig.from_code('010'), model,
                self.toolbelt('010'), 0
            )

    def test_toolbelt_must_match_config(self):
        model = gateway.ScriptedModel(['{"status": "success"}'])
        with self.assertRaises(exceptions.InvariantViolationError):
            controller.run_episode(
                self.item, records.ToolConfig.from_code('011'), model,
                self.toolbelt('010')
            )

    def test_inactive_tool_is_an_error_message(self):
        result, _ = self.episode('010', [
            gateway.ScriptedModel.call('search_online', query='polynomial'),
            gateway.ScriptedModel.call(
                'lean_write_file', path='t1.lean', content=GOOD_CODE
            ),
            gateway.ScriptedModel.call('lean4_repl_runner', path='t1.lean'),
            gateway.ScriptedModel.say('{"status": "success"}'),
        ])
        self.assertTrue(result.succeeded)
        first = result.transcript.tool_outcomes[0][1]
        self.assertFalse(first.ok)
        self.assertIn('not available', first.payload)

    def test_malformed_arguments(self):
        result, _ = self.episode('010', [
            gateway.ScriptedModel.call('lean_write_file', path='t1.lean'),
            gateway.ScriptedModel.say('{"status": "success"}'),
        ])
        outcome = result.transcript.tool_outcomes[0][1]
        self.assertFalse(outcome.ok)
        self.assertIn('invalid arguments', outcome.payload)
        self.assertIsNone(result.final_code)

    def test_success_needs_passing_compile_with_feedback(self):
        result, _ = self.episode('010', [
            gateway.ScriptedModel.call(
                'lean_write_file', path='t1.lean', content=BAD_CODE
            ),
            gateway.ScriptedModel.call('lean4_repl_runner', path='t1.lean'),
            gateway.ScriptedModel.say('{"status": "success"}'),
        ])
        self.assertEqual(result.status, records.FAILURE)
        self.assertIn('unverified_success', result.annotations)
        self.assertEqual(result.final_code, BAD_CODE)

        result, _ = self.episode('010', [
            gateway.ScriptedModel.call(
                'lean_write_file', path='t1.lean', content=GOOD_CODE
            ),
            gateway.ScriptedModel.say('{"status": "success"}'),
        ])
        self.assertIn('unverified_success', result.annotations)

    def test_success_without_feedback_is_accepted(self):
        result, _ = self.episode('001', [
            gateway.ScriptedModel.call(
                'lean_write_file', path='t1.lean', content=BAD_CODE
            ),
            gateway.ScriptedModel.say('{"status": "success"}'),
        ])
        self.assertTrue(result.succeeded)
        self.assertEqual(result.final_code, BAD_CODE)

    def test_embedded_declaration(self):
        result, _ = self.episode('010', [
            gateway.ScriptedModel.call(
                'lean_write_file', path='t1.lean', content=GOOD_CODE
            ),
            gateway.ScriptedModel.call('lean4_repl_runner'),
            gateway.ScriptedModel.say('All done: {"status": "success"}'),
        ])
        self.assertTrue(result.succeeded)
        self.assertIn('embedded_success_declaration', result.annotations)

    def test_gateway_failure(self):
        class DownModel(gateway.ChatModel):
            def complete(self, request):
                raise exceptions.GatewayError('provider down')

        result, _ = self.episode('111', DownModel('down'))
        self.assertEqual(result.status, records.FAILURE)
        self.assertEqual(result.steps_used, 0)
        self.assertEqual(result.annotations, ['gateway_failure'])

    def test_one_shot(self):
        model = gateway.ScriptedModel([f"Here:\n```lean\n{GOOD_CODE}\n```"])
        result = controller.run_episode(
            self.item, records.ToolConfig(), model, None
        )
        self.assertTrue(result.succeeded)
        self.assertEqual(result.steps_used, 1)
        self.assertEqual(result.final_code.strip(), GOOD_CODE)
        self.assertEqual(model.requests[0].tool_specs, [])

        result = controller.one_shot(
            self.item, gateway.ScriptedModel(['I cannot formalize this.'])
        )
        self.assertEqual(result.status, records.FAILURE)
        self.assertIsNone(result.final_code)
        self.assertEqual(result.annotations, ['no_code_emitted'])

    def repair_script(self):
        call = gateway.ScriptedModel.call
        return [
            call('lean_write_file', path='t1.lean', content=BAD_CODE),
            call('lean4_repl_runner', path='t1.lean'),
            call('lean_inspect_name', name='Polynomial.IsConstant'),
            call('lean_resolve_name', token='IsConstant'),
            call('lean_inspect_name', name='Polynomial.natDegree'),
            call('lean_inspect_name', name='Polynomial.C'),
            call('lean_write_file', path='t1.lean', content=GOOD_CODE),
            call('lean4_repl_runner', path='t1.lean'),
            gateway.ScriptedModel.say('{"status": "success"}'),
        ]

    def test_repair_trace_records_and_replays(self):
        config = records.ToolConfig.from_code('011')
        fixture_dir = self.path('fixtures')
        recorded = controller.run_episode(
            self.item, config,
            gateway.RecordingModel(
                gateway.ScriptedModel(self.repair_script()), fixture_dir
            ),
            toolbelt.Toolbelt(
                config, toolbelt.RecordingBackend(self.backend, fixture_dir),
                toolbelt.Workspace(self.path('ws_record'))
            )
        )
        self.assertTrue(recorded.succeeded)
        self.assertEqual(recorded.steps_used, 9)
        self.assertEqual(recorded.transcript.tool_call_names(), [
            'lean_write_file', 'lean4_repl_runner', 'lean_inspect_name',
            'lean_resolve_name', 'lean_inspect_name', 'lean_inspect_name',
            'lean_write_file', 'lean4_repl_runner'
        ])
        outcomes = [o for _, o in recorded.transcript.tool_outcomes]
        self.assertFalse(outcomes[1].ok)
        self.assertFalse(json.loads(outcomes[2].payload)['exists'])
        self.assertTrue(outcomes[-1].ok)

        with mock.patch.object(
                requests.Session, 'request',
                side_effect=AssertionError('network used in replay')):
            replayed = controller.run_episode(
                self.item, config,
                gateway.ReplayModel('scripted', fixture_dir),
                toolbelt.Toolbelt(
                    config, toolbelt.ReplayBackend(fixture_dir),
                    toolbelt.Workspace(self.path('ws_replay'))
                )
            )
        self.assertEqual(
            replayed.transcript.to_dict(), recorded.transcript.to_dict()
        )
        self.assertEqual(replayed.final_code, GOOD_CODE)

    def test_replay_miss_stops_the_episode(self):
        config = records.ToolConfig.from_code('011')
        with self.assertRaises(exceptions.FixtureMissError):
            controller.run_episode(
                self.item, config,
                gateway.ReplayModel('scripted', self.path('empty')),
                self.toolbelt('011')
            )


class ToolbeltTestCase(BasicTestCase):
    def setUp(self):
        super().setUp()
        self.backend = toolbelt.StubBackend(
            drafts={STATEMENT: GOOD_CODE},
            search_results={'constant polynomial': [
                {'title': 'Polynomial.C', 'snippet': 'constants', 'url': 'u'}
            ]}
        )
        self.belt = toolbelt.Toolbelt(
            records.ToolConfig(True, True, True), self.backend,
            toolbelt.Workspace(self.path('ws'))
        )

    def run_tool(self, name, /, **arguments):
        return self.belt.execute(records.ToolCall('c', name, arguments))

    def test_write_file(self):
        outcome = self.run_tool(
            'lean_write_file', path='sub/t1.lean', content=GOOD_CODE
        )
        self.assertTrue(outcome.ok)
        self.assertEqual(
            json.loads(outcome.payload),
            {'path': 'sub/t1.lean', 'bytes': len(GOOD_CODE.encode('utf-8'))}
        )
        with open(self.path('ws', 'sub', 't1.lean'), 'rb') as f:
            self.assertEqual(f.read(), GOOD_CODE.encode('utf-8'))

    def test_sandbox(self):
        outcome = self.run_tool(
            'lean_write_file', path='../x.lean', content=GOOD_CODE
        )
        self.assertFalse(outcome.ok)
        self.assertIn('outside workspace', outcome.payload)
        self.assertFalse(os.path.exists(self.path('x.lean')))
        with self.assertRaises(exceptions.SandboxViolationError):
            self.belt.workspace.resolve('/etc/passwd')

    def test_compile_reads_latest_write(self):
        self.run_tool('lean_write_file', path='t1.lean', content=BAD_CODE)
        failed = self.run_tool('lean4_repl_runner', path='t1.lean')
        self.assertFalse(failed.ok)
        self.assertIn(
            "unknown identifier 'Polynomial.IsConstant'", failed.payload
        )
        self.run_tool('lean_write_file', path='t1.lean', content=GOOD_CODE)
        passed = self.run_tool('lean4_repl_runner', path='t1.lean')
        self.assertTrue(passed.ok)
        self.assertEqual(
            json.loads(passed.payload)['snapshot_id'],
            settings.MATHLIB_SNAPSHOT
        )
        self.assertIs(self.belt.last_report.success, True)

    def test_compile_inline_and_missing(self):
        self.assertFalse(self.run_tool('lean4_repl_runner').ok)
        self.assertFalse(
            self.run_tool('lean4_repl_runner', path='nope.lean').ok
        )
        outcome = self.run_tool(
            'lean4_repl_runner',
            code="import Mathlib\n\ntheorem t : 1 = 1 := by sorry"
        )
        self.assertTrue(outcome.ok)
        self.assertIn(lean.SORRY_WARNING, outcome.payload)

    def test_io_errors_become_tool_messages(self):
        self.run_tool('lean_write_file', path='sub/t1.lean', content=GOOD_CODE)
        outcome = self.run_tool('lean4_repl_runner', path='sub')
        self.assertFalse(outcome.ok)
        self.assertIn('could not read sub', outcome.payload)

        with open(self.path('ws', 'latin.lean'), 'wb') as f:
            f.write('théorème'.encode('latin-1'))
        outcome = self.run_tool('lean4_repl_runner', path='latin.lean')
        self.assertFalse(outcome.ok)
        self.assertIn('could not read latin.lean', outcome.payload)

        outcome = self.run_tool(
            'lean_write_file', path='bad.lean', content='theorem \ud800'
        )
        self.assertFalse(outcome.ok)
        self.assertIn('could not write bad.lean', outcome.payload)
        self.assertEqual(self.belt.workspace.last_written, 'sub/t1.lean')

    def test_stub_checker(self):
        checker = lean.StubChecker()
        report_ = checker.compile(GOOD_CODE)
        self.assertTrue(report_.success)
        self.assertEqual([d.severity for d in report_.messages], ['warning'])
        self.assertFalse(checker.compile('').success)
        self.assertFalse(
            checker.compile("theorem t : 1 = 1 := by sorry").success
        )
        self.assertFalse(
            checker.compile("import Mathlib\n\ntheorem t : 1 = 1 := by simp")
            .success
        )
        two = GOOD_CODE + "\n\ntheorem u : 1 = 1 := by sorry"
        self.assertFalse(checker.compile(two).success)
        error = checker.compile(BAD_CODE).messages[0]
        self.assertEqual((error.severity, error.line), ('error', 3))

    def test_compile_cache(self):
        first = self.backend.compile(GOOD_CODE)
        second = self.backend.compile(GOOD_CODE)
        self.assertIs(first, second)
        self.assertEqual(self.backend.pool.hits, 1)

    def test_compile_cache_is_bounded(self):
        pool = lean.CompilerPool(lean.StubChecker(), 1, cache_size=2)
        inline = "import Mathlib\n\ntheorem t : 1 = 1 := by sorry"
        first = pool.compile(GOOD_CODE)
        pool.compile(BAD_CODE)
        self.assertIs(pool.compile(GOOD_CODE), first)
        pool.compile(inline)
        self.assertEqual(pool.hits, 1)
        self.assertIs(pool.compile(GOOD_CODE), first)
        pool.compile(BAD_CODE)
        self.assertEqual(pool.hits, 2)
        self.assertEqual(len(pool._cache), 2)

    def test_inspect(self):
        found = json.loads(
            self.run_tool('lean_inspect_name', name='Polynomial.natDegree')
            .payload
        )
        self.assertTrue(found['exists'])
        self.assertIn('→', found['type'])
        missing = self.run_tool('lean_inspect_name', name='Definitely.Absent')
        self.assertTrue(missing.ok)
        self.assertEqual(
            json.loads(missing.payload),
            {'name': 'Definitely.Absent', 'exists': False, 'type': None}
        )
        again = self.run_tool('lean_inspect_name', name='Definitely.Absent')
        self.assertEqual(again.payload, missing.payload)
        self.assertFalse(self.run_tool('lean_inspect_name', name='  ').ok)

    def test_resolve(self):
        exact = json.loads(
            self.run_tool('lean_resolve_name', token='natDegree').payload
        )['candidates']
        self.assertEqual(exact[0]['name'], 'Polynomial.natDegree')
        self.assertEqual(exact[0]['score'], lean.SymbolIndex.EXACT_SCORE)
        fuzzy = json.loads(
            self.run_tool('lean_resolve_name', token='natDegre', top_k=3)
            .payload
        )['candidates']
        self.assertEqual(len(fuzzy), 3)
        self.assertEqual(fuzzy[0]['name'], 'Polynomial.natDegree')
        self.assertEqual(
            [c['score'] for c in fuzzy],
            sorted((c['score'] for c in fuzzy), reverse=True)
        )
        outcome = self.run_tool('lean_resolve_name', token='natDegre', top_k=0)
        self.assertFalse(outcome.ok)
        with self.assertRaises(exceptions.ToolArgumentError):
            lean.SymbolIndex({'A': 'Type'}).resolve('A', top_k=0)
        with self.assertRaises(exceptions.ToolchainConfigurationError):
            lean.SymbolIndex({}).resolve('A')

    def test_namespace_hint(self):
        index = lean.SymbolIndex({'Real.exp': 'ℝ → ℝ', 'Complex.exp': 'ℂ → ℂ'})
        self.assertEqual(index.resolve('exp')[0]['name'], 'Complex.exp')
        self.assertEqual(
            index.resolve('exp', ['Real'])[0]['name'], 'Real.exp'
        )

    def test_translator(self):
        outcome = self.run_tool('lean4_translator', statement=STATEMENT)
        self.assertTrue(outcome.ok)
        self.assertEqual(outcome.payload, GOOD_CODE)
        outcome = self.run_tool('lean4_translator', statement='unknown')
        self.assertFalse(outcome.ok)
        self.assertEqual(outcome.payload, 'drafter unavailable')
        self.assertTrue(outcome.diagnostics[0].message.startswith('connectivity'))

    def test_search(self):
        outcome = self.run_tool('search_online', query='constant polynomial')
        self.assertEqual(
            json.loads(outcome.payload)['results'][0]['title'], 'Polynomial.C'
        )
        self.assertEqual(
            json.loads(self.run_tool('search_online', query='x').payload),
            {'results': []}
        )
        self.assertFalse(self.run_tool('search_online', query='   ').ok)

    def test_search_client(self):
        session = mock.Mock()
        session.request.return_value = make_response(200, json.dumps({
            'items': [{'title': '<b>Polynomial.C</b>',
                       'htmlSnippet': 'the <i>constant</i>  polynomial',
                       'link': 'https://example.org/c'}]
        }))
        client = clients.SearchClient({
            'url': 'http://search.invalid', 'credential': 'FB_TEST_SEARCH_KEY'
        }, session=session)
        with mock.patch.dict(os.environ, {'FB_TEST_SEARCH_KEY': 'k'}):
            results = client.search('constant polynomial')
        self.assertEqual(results, [{
            'title': 'Polynomial.C', 'snippet': 'the constant polynomial',
            'url': 'https://example.org/c'
        }])

    def test_search_provider_error(self):
        session = mock.Mock()
        session.request.return_value = make_response(503, 'unavailable')
        client = clients.SearchClient({
            'url': 'http://search.invalid', 'credential': 'FB_TEST_SEARCH_KEY'
        }, session=session)

        class SearchBackend(toolbelt.StubBackend):
            def search(self, query):
                return client.search(query)

        belt = toolbelt.Toolbelt(
            records.ToolConfig(False, False, True), SearchBackend(),
            toolbelt.Workspace(self.path('ws2'))
        )
        with mock.patch.dict(os.environ, {'FB_TEST_SEARCH_KEY': 'k'}):
            outcome = belt.execute(
                records.ToolCall('c', 'search_online', {'query': 'q'})
            )
        self.assertFalse(outcome.ok)
        self.assertEqual(outcome.payload, 'search provider error')
        self.assertEqual(session.request.call_count, settings.HTTP_RETRY_CAP)

    def test_replay_backend_miss(self):
        backend = toolbelt.ReplayBackend(self.path('fixtures'))
        with self.assertRaises(exceptions.FixtureMissError):
            backend.compile(GOOD_CODE)

    def test_lean_compiler_configuration(self):
        with self.assertRaises(exceptions.ToolchainConfigurationError):
            lean.LeanCompiler(self.path('no_project'))
        compiler = lean.LeanCompiler(
            self.tmp, ['fbench-no-such-lean-binary']
        )
        with self.assertRaises(exceptions.ToolchainConfigurationError):
            compiler.compile(GOOD_CODE)

    def test_parse_lean_output(self):
        messages = lean.LeanCompiler.parse_output(
            "probe.lean:3:8: error: unknown identifier 'Foo'\n"
            "  while elaborating\n"
            "probe.lean:3:0: warning: declaration uses 'sorry'\n"
        )
        self.assertEqual([m.severity for m in messages], ['error', 'warning'])
        self.assertEqual((messages[0].line, messages[0].column), (3, 8))
        self.assertIn('while elaborating', messages[0].message)


class GatewayTestCase(BasicTestCase):
    ENTRY = {
        'credential': 'FB_TEST_MODEL_KEY', 'baseUrl': 'http://llm.invalid/v1',
        'model': 'test-model'
    }

    def setUp(self):
        super().setUp()
        self.request = gateway.ChatTurnRequest(
            [records.Message('system', 's'), records.Message('user', 'u')],
            toolbelt.tool_specs(records.ToolConfig.from_code('010')), 'm'
        )

    def http_model(self, session):
        with mock.patch.dict(os.environ, {'FB_TEST_MODEL_KEY': 'k'}):
            return gateway.HttpChatModel(
                'm', self.ENTRY, session=session, sleep=lambda s: None
            )

    def test_retry_cap(self):
        session = mock.Mock()
        session.post.return_value = make_response(503, 'busy')
        with self.assertRaises(exceptions.GatewayError):
            self.http_model(session).complete(self.request)
        self.assertEqual(session.post.call_count, settings.GATEWAY_RETRY_CAP)

    def test_non_transient_status(self):
        session = mock.Mock()
        session.post.return_value = make_response(400, 'bad request')
        with self.assertRaises(exceptions.GatewayError):
            self.http_model(session).complete(self.request)
        self.assertEqual(session.post.call_count, 1)

    def test_decode(self):
        body = json.dumps({
            'id': 'r1', 'model': 'test-model',
            'choices': [{'message': {'content': None, 'tool_calls': [{
                'id': 'call_a', 'type': 'function',
                'function': {'name': 'lean4_repl_runner',
                             'arguments': '{"path": "t1.lean"}'}
            }]}}],
            'usage': {'prompt_tokens': 12, 'completion_tokens': 3}
        })
        session = mock.Mock()
        session.post.return_value = make_response(200, body)
        response = self.http_model(session).complete(self.request)
        call = response.message.tool_calls[0]
        self.assertEqual((call.call_id, call.name), ('call_a', 'lean4_repl_runner'))
        self.assertEqual(call.arguments, {'path': 't1.lean'})
        self.assertEqual(response.usage['prompt_tokens'], 12)
        payload = session.post.call_args.kwargs['json']
        self.assertEqual(
            [t['function']['name'] for t in payload['tools']],
            ['lean_write_file', 'lean4_repl_runner']
        )

    def test_decode_error_keeps_body(self):
        session = mock.Mock()
        session.post.return_value = make_response(200, 'not json')
        with self.assertRaises(exceptions.DecodeError) as cm:
            self.http_model(session).complete(self.request)
        self.assertEqual(cm.exception.raw_body, 'not json')

    def test_missing_credential(self):
        with mock.patch.dict(os.environ):
            os.environ.pop('FB_TEST_MODEL_KEY', None)
            with self.assertRaises(exceptions.ToolchainConfigurationError):
                gateway.HttpChatModel('m', self.ENTRY)
        with self.assertRaises(exceptions.ToolchainConfigurationError):
            gateway.HttpChatModel('no-such-model')

    def test_rate_limiter_per_credential(self):
        self.assertIs(
            gateway.RateLimiter.for_credential('FB_A'),
            gateway.RateLimiter.for_credential('FB_A')
        )
        self.assertIsNot(
            gateway.RateLimiter.for_credential('FB_A'),
            gateway.RateLimiter.for_credential('FB_B')
        )

    def test_record_then_replay(self):
        directory = self.path('fixtures')
        recorder = gateway.RecordingModel(
            gateway.ScriptedModel(['hello'], model_id='m'), directory
        )
        recorded = recorder.complete(self.request)
        with mock.patch.object(
                requests.Session, 'request',
                side_effect=AssertionError('network used in replay')):
            replayed = gateway.ReplayModel('m', directory).complete(self.request)
        self.assertEqual(replayed.to_dict(), recorded.to_dict())

    def test_replay_miss_names_key(self):
        with self.assertRaises(exceptions.FixtureMissError) as cm:
            gateway.ReplayModel('m', self.path('empty')).complete(self.request)
        key = fixtures.FixtureStore.key_for(self.request.fixture_payload())
        self.assertEqual(cm.exception.key, key)
        self.assertIn(key, str(cm.exception))

    def test_scripted_model(self):
        with self.assertRaises(exceptions.UsageError):
            gateway.ScriptedModel([])
        model = gateway.ScriptedModel([
            gateway.ScriptedModel.call('lean4_repl_runner'), 'done'
        ])
        first = model.complete(self.request)
        self.assertEqual(first.message.tool_calls[0].call_id, 'call_1_1')
        self.assertEqual(model.complete(self.request).message.content, 'done')
        with self.assertRaises(exceptions.ScriptExhaustedError):
            model.complete(self.request)
        self.assertEqual(len(model.requests), 2)

    def test_get_model(self):
        replay = gateway.get_model(
            'gpt-5.2', 'replay', fixtures_dir=self.path('fx')
        )
        self.assertIsInstance(replay, gateway.ReplayModel)
        with self.assertRaises(exceptions.UsageError):
            gateway.get_model('gpt-5.2', 'replay')


class VerdictTestCase(BasicTestCase):
    P, S = settings.PRIMARY_JUDGE, settings.SECONDARY_JUDGE

    def verdicts(self, primary, secondary):
        return {
            self.P: records.JudgeVerdict(self.P, primary >= 9, primary),
            self.S: records.JudgeVerdict(self.S, secondary >= 9, secondary),
        }

    def test_compile_gate(self):
        backend = toolbelt.StubBackend()
        self.assertTrue(verdict.compile_gate(GOOD_CODE, backend))
        self.assertFalse(verdict.compile_gate(BAD_CODE, backend))
        never = mock.Mock()
        never.compile.side_effect = AssertionError('compiled absent code')
        self.assertFalse(verdict.compile_gate(None, never))
        self.assertFalse(verdict.compile_gate('  ', never))

    def test_faithful(self):
        self.assertTrue(verdict.faithful(True, 9))
        self.assertTrue(verdict.faithful(True, 10))
        self.assertFalse(verdict.faithful(True, 8))
        self.assertFalse(verdict.faithful(False, 10))
        with self.assertRaises(ValueError):
            verdict.faithful(True, 11)

    def test_parse_verdict(self):
        parsed = verdict.parse_verdict(
            '{"faithful": true, "grade": 9, "thought": "ok"}', True, 'j'
        )
        self.assertEqual((parsed.faithful, parsed.grade), (True, 9))
        for text_ in (
                '{"faithful": true, "grade": 9, "thought": "ok", "x": 1}',
                '{"faithful": true, "grade": 9.5, "thought": "ok"}',
                '{"faithful": true, "grade": 12, "thought": "ok"}',
                'Grade: 9'):
            with self.assertRaises(exceptions.JudgeParseError):
                verdict.parse_verdict(text_, True, 'j')
        with self.assertRaises(exceptions.JudgeParseError):
            verdict.parse_verdict(
                '{"faithful": false, "grade": 5, "thought": "ok"}', False, 'j'
            )

    def test_parse_verdict_fuzz(self):
        rng = random.Random(7)
        faithful_values = [True, False, 'true', 1, None]
        grade_values = [0, 3, 4, 8, 9, 10, -1, 11, 9.0, '9', True, None]
        thought_values = ['ok', '', 3]

        def valid(data, compile_pass):
            if not isinstance(data, dict) \
                    or set(data) != {'faithful', 'grade', 'thought'}:
                return False
            grade, is_faithful = data['grade'], data['faithful']
            if not isinstance(is_faithful, bool) \
                    or isinstance(grade, bool) or not isinstance(grade, int) \
                    or not 0 <= grade <= 10 \
                    or not isinstance(data['thought'], str):
                return False
            return compile_pass or (not is_faithful and grade <= 3)

        accepted = 0
        for _ in range(1000):
            data = {
                'faithful': rng.choice(faithful_values),
                'grade': rng.choice(grade_values),
                'thought': rng.choice(thought_values),
            }
            if rng.random() < 0.15:
                del data[rng.choice(list(data))]
            if rng.random() < 0.15:
                data['score'] = 7
            compile_pass = rng.random() < 0.5
            shape = rng.random()
            if shape < 0.05:
                text_, data = 'Grade: 9', None
            elif shape < 0.1:
                text_, data = json.dumps([data]), [data]
            else:
                text_ = json.dumps(data)
            try:
                result = verdict.parse_verdict(text_, compile_pass, 'j')
            except exceptions.JudgeParseError:
                self.assertFalse(valid(data, compile_pass), text_)
                continue
            accepted += 1
            self.assertTrue(valid(data, compile_pass), text_)
            self.assertTrue(0 <= result.grade <= 10)
            if not compile_pass:
                self.assertFalse(result.faithful)
                self.assertLessEqual(result.grade, 3)
        self.assertGreater(accepted, 0)

    def test_judge_retries_then_gives_up(self):
        good = '{"faithful": true, "grade": 10, "thought": "ok"}'
        model = gateway.ScriptedModel(
            ['{"faithful": true, "grade": 10, "thought": "ok", "s": 1}', good],
            model_id='j'
        )
        result = verdict.judge(STATEMENT, GOOD_CODE, True, model)
        self.assertEqual(result.grade, 10)
        self.assertEqual(model.position, 2)

        model = gateway.ScriptedModel(['nope'] * 3, model_id='j')
        with self.assertRaises(exceptions.JudgeInvalidError):
            verdict.judge(STATEMENT, GOOD_CODE, True, model)
        self.assertEqual(model.position, settings.JUDGE_RETRY_CAP)

    def test_non_compiling_code_is_not_faithful(self):
        judge_model = gateway.CannedJudgeModel({GOOD_CODE: 10}, 'j')
        result = verdict.judge(STATEMENT, GOOD_CODE, False, judge_model)
        self.assertFalse(result.faithful)
        self.assertLessEqual(result.grade, 3)
        result = verdict.judge(STATEMENT, GOOD_CODE, True, judge_model)
        self.assertEqual((result.faithful, result.grade), (True, 10))

    def test_apply_verdicts(self):
        run = make_run('t1')
        judged = verdict.apply_verdicts(
            run, self.verdicts(10, 8), [], self.P, self.S
        )
        self.assertTrue(judged.faithful_primary)
        self.assertFalse(judged.faithful_consensus)
        judged = verdict.apply_verdicts(
            run, self.verdicts(10, 9), [], self.P, self.S
        )
        self.assertTrue(judged.faithful_consensus)
        judged.check_invariants()

    def test_consensus_rates(self):
        rate = verdict.ConsensusSummary('111', 248, 291, 242).consensus_rate
        self.assertEqual(rate, Fraction(242, 248))
        self.assertEqual(prettify_float(rate * 100, 1), '97.6')
        rate = verdict.ConsensusSummary('010', 250, 304, 245).consensus_rate
        self.assertEqual(prettify_float(rate * 100, 1), '98.0')
        with self.assertRaises(exceptions.InvariantViolationError):
            verdict.ConsensusSummary('x', 10, 5, 6)
        undefined = verdict.ConsensusSummary('x', 0, 3, 0)
        self.assertIsNone(undefined.consensus_rate)
        self.assertIsNone(verdict.mean_consensus_rate([undefined]))

    def test_mean_consensus_rate(self):
        # (primary, secondary, both) of the one-shot and GPT-5.2 systems
        table = [
            (43, 52, 43), (81, 90, 79), (116, 145, 114), (112, 122, 112),
            (98, 112, 98), (134, 160, 132), (146, 174, 144),
            (241, 282, 235), (248, 291, 242), (250, 304, 245),
            (251, 291, 248),
        ]
        summaries = [
            verdict.ConsensusSummary(str(i), p, s, c)
            for i, (p, s, c) in enumerate(table)
        ]
        for summary in summaries:
            self.assertGreater(summary.consensus_rate, Fraction(97, 100))
        mean = verdict.mean_consensus_rate(summaries) * 100
        self.assertLessEqual(abs(mean - Fraction(987, 10)), Fraction(3, 10))

    def test_consensus_summary_exclusions(self):
        runs = [
            make_run('t1', verdicts=self.verdicts(10, 10)),
            make_run('t2', verdicts=self.verdicts(10, 7)),
            make_run('t3', verdicts=self.verdicts(3, 3)),
            make_run('t4', verdicts={
                self.P: records.JudgeVerdict(self.P, True, 10)
            }),
            replace(make_run('t5'), judge_invalid=[self.S]),
        ]
        summary = verdict.consensus_summary(runs, self.P, self.S, system='x')
        self.assertEqual(
            (summary.pass_primary, summary.pass_secondary,
             summary.pass_consensus),
            (2, 1, 1)
        )
        self.assertEqual(
            (summary.judged, summary.missing, summary.judge_invalid),
            (3, 1, 1)
        )
        self.assertEqual(summary.consensus_rate, Fraction(1, 2))

    def test_containment(self):
        runs = [
            make_run('t1', verdicts=self.verdicts(10, 10)),
            make_run('t2', verdicts=self.verdicts(10, 5)),
            make_run('t3', domain='Topology', verdicts=self.verdicts(5, 9)),
        ]
        result = verdict.containment_report(runs, self.P, self.S)
        self.assertEqual(result['systems']['gpt-5.2/111'], {
            'primary_only': 1, 'secondary_only': 1, 'both': 1, 'judged': 3
        })
        self.assertEqual(result['domains']['Algebra'], 1)
        self.assertEqual(result['domains']['Topology'], 1)
        self.assertEqual(result['domains']['RealAnalysis'], 0)

    def test_grade_by_domain(self):
        runs = [
            make_run('t1', verdicts=self.verdicts(10, 10)),
            make_run('t2', verdicts=self.verdicts(7, 10)),
        ]
        self.assertEqual(
            verdict.grade_by_domain(runs, self.P),
            {'Algebra': {'111': Fraction(17, 2)}}
        )

    def test_export_audit(self):
        runs = [
            make_run(f"t{i}", faithful=True, verdicts=self.verdicts(10, 10))
            for i in range(5)
        ] + [make_run('t9', verdicts=self.verdicts(3, 3))]
        first, second = self.path('a.csv'), self.path('b.csv')
        self.assertEqual(verdict.export_audit(runs, first, 3, seed=1), 3)
        verdict.export_audit(runs, second, 3, seed=1)
        with open(first, 'rb') as f, open(second, 'rb') as g:
            self.assertEqual(f.read(), g.read())
        with open(first, encoding='utf-8') as f:
            rows = list(csv.DictReader(f))
        self.assertEqual(len(rows), 3)
        self.assertNotIn('t9', {row['theorem_id'] for row in rows})

    def test_audit_agreement_rejects_bad_grades(self):
        path = self.path('audit.csv')
        for human, llm in (('nine', '10'), ('11', '10'), ('10', '')):
            with open(path, 'w', encoding='utf-8', newline='') as f:
                writer = csv.writer(f)
                writer.writerow(verdict.AUDIT_COLUMNS)
                writer.writerow(['t0|111|gpt-5.2', 't0', 'Algebra',
                                 GOOD_CODE, 10, 10])
                writer.writerow(['t1|111|gpt-5.2', 't1', 'Algebra',
                                 GOOD_CODE, llm, human])
            with self.assertRaises(exceptions.UsageError) as cm:
                verdict.audit_agreement(path)
            self.assertIn('row 2', str(cm.exception))

    def test_audit_agreement(self):
        path = self.path('audit.csv')
        grades = [(10, 10)] * 115 + [(10, 9)] * 20 + [(9, 8)] * 3
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(verdict.AUDIT_COLUMNS)
            for i, (llm, human) in enumerate(grades):
                writer.writerow([f"t{i}|111|gpt-5.2", f"t{i}", 'Algebra',
                                 GOOD_CODE, llm, human])
            writer.writerow(['t_x|111|gpt-5.2', 't_x', 'Algebra', '', 10, ''])
        agreement = verdict.audit_agreement(path)
        self.assertEqual(agreement['total'], 138)
        self.assertEqual(
            (agreement['exact'], agreement['within_one'],
             agreement['crossing']),
            (115, 20, 3)
        )
        rendered = [
            prettify_float(agreement[k], 1) for k in (
                'exact_pct', 'within_one_pct', 'crossing_pct',
                'binary_agreement_pct'
            )
        ]
        self.assertEqual(rendered, ['83.3', '14.5', '2.2', '97.8'])


class FactorialTestCase(unittest.TestCase):
    def setUp(self):
        self.table = factorial.OutcomeTable.from_counts(FACTORIAL_COUNTS, 400)

    def test_main_effects(self):
        effects = factorial.all_effects(self.table)
        self.assertEqual(effects['main'], {
            'F': Fraction('32.3125'), 'S': Fraction('6.8125'),
            'T': Fraction('0.9375'),
        })
        self.assertEqual(
            prettify_float(effects['main']['F'], 1), '32.3'
        )

    def test_simple_effects_and_interactions(self):
        effects = factorial.all_effects(self.table)
        self.assertEqual(effects['simple'], {
            'S|F=0': Fraction('12.375'), 'S|F=1': Fraction('1.25'),
            'T|F=0': Fraction('3.875'), 'T|F=1': Fraction(-2),
        })
        self.assertEqual(effects['interaction'], {
            'FxS': Fraction('-11.125'), 'FxT': Fraction('-5.875'),
            'SxT': Fraction('-0.375'),
        })
        self.assertEqual(
            factorial.interaction(self.table, 'F×S'),
            effects['interaction']['FxS']
        )
        with self.assertRaises(exceptions.UsageError):
            factorial.simple_effect(self.table, 'F', 'F')
        with self.assertRaises(exceptions.UsageError):
            factorial.main_effect(self.table, 'Q')

    def test_gain_vs_baseline(self):
        gains = factorial.gain_vs_baseline(self.table)
        self.assertEqual(gains['111'], Fraction(100 * (242 - 79), 400))
        self.assertNotIn('000', gains)

    def test_identical_columns_have_no_effect(self):
        column = [1, 0, 1, 1, 0]
        table = factorial.OutcomeTable.from_columns(
            {code: column for code in factorial.CONFIG_CODES}
        )
        for factor in factorial.FACTORS:
            self.assertEqual(factorial.main_effect(table, factor).point, 0)
            estimate = factorial.bootstrap_ci(table, factor, 300, seed=3)
            self.assertEqual((estimate.ci_low, estimate.ci_high), (0, 0))

    def test_complement_negates_effects(self):
        flipped = factorial.OutcomeTable(
            self.table.theorems, 1 - self.table.matrix
        )
        for factor in factorial.FACTORS:
            self.assertEqual(
                factorial.main_effect(flipped, factor).point,
                -factorial.main_effect(self.table, factor).point
            )

    def test_brute_force_oracle(self):
        def oracle(rows, factor):
            position = 'TFS'.index(factor)
            high = [c for c in factorial.CONFIG_CODES if c[position] == '1']
            low = [c for c in factorial.CONFIG_CODES if c[position] == '0']
            mean = lambda code: Fraction(
                100 * sum(r[factorial.CONFIG_CODES.index(code)] for r in rows),
                len(rows)
            )
            return sum(map(mean, high)) / 4 - sum(map(mean, low)) / 4

        for bits in itertools.product((0, 1), repeat=8):
            table = factorial.OutcomeTable(['t0'], [list(bits)])
            for factor in factorial.FACTORS:
                self.assertEqual(
                    factorial.main_effect(table, factor).point,
                    oracle([bits], factor)
                )
        rng = random.Random(11)
        for _ in range(200):
            rows = [
                [rng.randint(0, 1) for _ in range(8)]
                for _ in range(rng.randint(2, 4))
            ]
            table = factorial.OutcomeTable(
                [f"t{i}" for i in range(len(rows))], rows
            )
            for factor in factorial.FACTORS:
                self.assertEqual(
                    factorial.main_effect(table, factor).point,
                    oracle(rows, factor)
                )

    def test_simple_effect_oracle_and_linearity(self):
        def mean(rows, code):
            column = factorial.CONFIG_CODES.index(code)
            return Fraction(100 * sum(r[column] for r in rows), len(rows))

        def oracle(rows, factor, cond, level):
            p, q = 'TFS'.index(factor), 'TFS'.index(cond)
            cells = [c for c in factorial.CONFIG_CODES if c[q] == str(level)]
            high = sum(mean(rows, c) for c in cells if c[p] == '1')
            low = sum(mean(rows, c) for c in cells if c[p] == '0')
            return (high - low) / 2

        rng = random.Random(17)
        for _ in range(100):
            rows = [
                [rng.randint(0, 1) for _ in range(8)]
                for _ in range(rng.randint(1, 5))
            ]
            table = factorial.OutcomeTable(
                [f"t{i}" for i in range(len(rows))], rows
            )
            for factor, cond in itertools.permutations(factorial.FACTORS, 2):
                low = factorial.simple_effect(table, factor, cond, 0)
                high = factorial.simple_effect(table, factor, cond, 1)
                self.assertEqual(low, oracle(rows, factor, cond, 0))
                self.assertEqual(high, oracle(rows, factor, cond, 1))
                self.assertEqual(
                    factorial.interaction(table, f"{cond}x{factor}"),
                    high - low
                )
                self.assertEqual(
                    factorial.main_effect(table, factor).point,
                    (low + high) / 2
                )

    def test_missing_cell_drops_theorem_from_every_estimate(self):
        runs = [
            make_run(f"t{i}", code,
                     faithful=(3 * i + int(code, 2)) % 5 < 2)
            for i in range(4) for code in factorial.CONFIG_CODES
        ]
        partial = factorial.build_outcome_table([
            r for r in runs if (r.theorem_id, r.config.code()) != ('t3', '111')
        ])
        complete = factorial.build_outcome_table(
            [r for r in runs if r.theorem_id != 't3']
        )
        self.assertEqual(
            factorial.all_effects(partial), factorial.all_effects(complete)
        )
        for factor in ('S', 'T'):
            self.assertEqual(
                factorial.main_effect(partial, factor).point,
                (factorial.simple_effect(partial, factor, 'F', 0)
                 + factorial.simple_effect(partial, factor, 'F', 1)) / 2
            )
        self.assertEqual(
            factorial.bootstrap_ci(partial, 'S', 200, seed=1).point,
            factorial.main_effect(complete, 'S').point
        )

    def test_row_order_does_not_matter(self):
        order = np.random.default_rng(5).permutation(400)
        shuffled = factorial.OutcomeTable(
            [self.table.theorems[i] for i in order], self.table.matrix[order]
        )
        self.assertEqual(
            factorial.all_effects(shuffled), factorial.all_effects(self.table)
        )

    def test_missing_cells(self):
        counts = {k: v for k, v in FACTORIAL_COUNTS.items() if k != '101'}
        table = factorial.OutcomeTable.from_counts(counts, 400)
        self.assertEqual(len(table.missing()), 400)
        with self.assertRaises(exceptions.MissingCellError):
            factorial.main_effect(table, 'F')

        runs = [
            make_run(f"t{i}", code, faithful=bool(i % 2))
            for i in range(4) for code in factorial.CONFIG_CODES
            if (i, code) != (3, '110')
        ]
        partial = factorial.build_outcome_table(runs)
        self.assertEqual(partial.missing(), [('t3', '110')])
        complete = factorial.build_outcome_table(
            [r for r in runs if r.theorem_id != 't3']
        )
        self.assertEqual(
            factorial.main_effect(partial, 'F').point,
            factorial.main_effect(complete, 'F').point
        )

    def test_duplicate_cell(self):
        with self.assertRaises(exceptions.DuplicateCellError):
            factorial.build_outcome_table([make_run('t1'), make_run('t1')])

    def test_bootstrap_is_deterministic(self):
        first = factorial.bootstrap_ci(self.table, 'F', 500, seed=9)
        second = factorial.bootstrap_ci(self.table, 'F', 500, seed=9)
        self.assertEqual(first, second)
        self.assertEqual(first.point, Fraction('32.3125'))
        self.assertLessEqual(first.ci_low, first.point)
        self.assertLessEqual(first.point, first.ci_high)
        self.assertEqual(first.method, 'percentile')
        with self.assertRaises(exceptions.UsageError):
            factorial.bootstrap_ci(self.table, 'F', 0)

    def test_bootstrap_coverage(self):
        # 4000 synthetic experiments keep the Monte Carlo error near 0.35 pts
        rates = np.array([0.2, 0.33, 0.6, 0.62, 0.25, 0.36, 0.59, 0.6])
        high = [factorial.CONFIG_CODES.index(c) for c in factorial._codes(F=1)]
        low = [factorial.CONFIG_CODES.index(c) for c in factorial._codes(F=0)]
        truth = Fraction(float(rates[high].sum() - rates[low].sum())) * 25
        rng = np.random.default_rng(2024)
        theorems = [f"t{i}" for i in range(400)]
        covered, trials = 0, 4000
        for trial in range(trials):
            matrix = (rng.random((400, 8)) < rates).astype(np.int8)
            estimate = factorial.bootstrap_ci(
                factorial.OutcomeTable(theorems, matrix), 'F', 1000,
                seed=trial
            )
            covered += estimate.ci_low <= truth <= estimate.ci_high
        self.assertGreaterEqual(covered / trials, 0.94)

    def test_efficiency_curve(self):
        runs = [make_run(f"t{i}", steps=s, faithful=True)
                for i, s in enumerate((3, 5, 9))]
        self.assertEqual(
            factorial.efficiency_curve(runs, [0, 4, 8, 9, 24]),
            {0: 0, 4: Fraction(1, 3), 8: Fraction(2, 3), 9: 1, 24: 1}
        )
        curve = factorial.efficiency_curve(runs + [make_run('t9', steps=2)])
        self.assertEqual(curve[24], Fraction(3, 4))
        self.assertEqual(len(curve), settings.T_MAX + 1)
        self.assertEqual(factorial.efficiency_curve([], [1]), {1: None})

    def test_domain_breakdown(self):
        steps = [4] * 40 + [5] * 20 + [10] * 28 + [12] * 8 + [13] * 4
        runs = [
            make_run(f"c{i}", domain='ComplexAnalysis', steps=s,
                     compile_pass=i < 95, faithful=i < 82)
            for i, s in enumerate(steps)
        ]
        rows = factorial.domain_breakdown(runs)
        row = rows['ComplexAnalysis']
        self.assertEqual(row['n'], 100)
        self.assertEqual(row['compile'], Fraction(95, 100))
        self.assertEqual(row['faithful'], Fraction(82, 100))
        self.assertEqual(prettify_float(row['conditional'], 2), '0.86')
        self.assertEqual(row['mean_steps'], Fraction(688, 100))
        self.assertEqual(row['median_steps'], 5)
        self.assertTrue(rows['Topology']['empty'])

    def test_domain_breakdown_all_domains(self):
        # domain -> (compiled, faithful, lower half, upper half of steps)
        shapes = {
            'RealAnalysis': (89, 49, [7] * 50, [24] * 14 + [18] + [8] * 35),
            'Algebra': (87, 56, [6] * 50, [24] * 19 + [17] + [7] * 30),
            'Topology': (87, 61, [6] * 50, [24] * 17 + [20] + [6] * 32),
        }
        runs = [
            make_run(f"{domain}_{i}", domain=domain, steps=s,
                     compile_pass=i < compiled, faithful=i < faithful)
            for domain, (compiled, faithful, low, high) in shapes.items()
            for i, s in enumerate(low + high)
        ]
        rows = factorial.domain_breakdown(runs)
        rendered = {
            domain: (
                prettify_float(rows[domain]['compile'], 2),
                prettify_float(rows[domain]['faithful'], 2),
                prettify_float(rows[domain]['conditional'], 2),
                prettify_float(rows[domain]['mean_steps'], 2),
                rows[domain]['median_steps'],
            )
            for domain in shapes
        }
        self.assertEqual(rendered, {
            'RealAnalysis': ('0.89', '0.49', '0.55', '9.84', Fraction(15, 2)),
            'Algebra': ('0.87', '0.56', '0.64', '9.83', Fraction(13, 2)),
            'Topology': ('0.87', '0.61', '0.70', '9.20', 6),
        })
        self.assertTrue(rows['ComplexAnalysis']['empty'])

    def test_domain_effects(self):
        complex_ = factorial.OutcomeTable.from_counts({
            '000': 25, '001': 25, '100': 31, '101': 31,
            '010': 81, '011': 81, '110': 81, '111': 81,
        }, 100)
        effect = factorial.domain_effects({'ComplexAnalysis': complex_}, 'F')
        self.assertEqual(effect['rows']['ComplexAnalysis']['delta'], 53)

        # (010, 110) -> (011, 111) per domain
        levels = {
            'Algebra': ((56, 57), (57, 57)),
            'ComplexAnalysis': ((81, 82), (81, 81)),
            'RealAnalysis': ((52, 53), (52, 53)),
            'Topology': ((55, 55), (59, 59)),
        }
        tables = {
            domain: factorial.OutcomeTable.from_counts({
                '010': s0[0], '110': s0[1], '011': s1[0], '111': s1[1]
            }, 100)
            for domain, (s0, s1) in levels.items()
        }
        effect = factorial.domain_effects(tables, 'S', ('F', 1))
        self.assertEqual(effect['mean_delta'], 1)
        self.assertEqual(effect['rows']['Topology']['delta'], 4)

    def test_domain_split(self):
        runs = [
            make_run(f"t{i}", code, domain=settings.DOMAINS[i % 2],
                     faithful=code[1] == '1')
            for i in range(4) for code in factorial.CONFIG_CODES
        ]
        table = factorial.build_outcome_table(runs)
        effects = factorial.domain_effects(table, 'F')
        self.assertEqual(
            set(effects['rows']), {'RealAnalysis', 'ComplexAnalysis'}
        )
        self.assertEqual(effects['mean_delta'], 100)

    def test_usage_summary(self):
        transcripts = {
            '010': [
                ['lean_write_file', 'lean4_repl_runner', 'lean4_repl_runner'],
                ['lean_write_file', 'lean4_repl_runner'],
            ],
            '011': [['lean_inspect_name', 'lean_resolve_name',
                     'search_online', 'lean4_repl_runner', 'mystery_tool']],
        }
        usage = factorial.usage_summary(transcripts)
        self.assertEqual(usage.get('010', 'repl'), 3)
        self.assertEqual(usage.get('010', 'write'), 2)
        self.assertEqual(usage.get('011', 's_total'), 3)
        self.assertEqual(usage.get('011', 'other'), 1)
        self.assertEqual(usage.unknown, {'mystery_tool'})
        self.assertEqual(usage.coverage(4), {
            '010': Fraction(1, 2), '011': Fraction(1, 4)
        })

    def test_usage_summary_reproduces_call_counts(self):
        # config -> (translator, repl, s_total)
        expected = {
            '010': (0, 1496, 0), '011': (0, 1050, 1726),
            '110': (257, 1374, 0), '111': (112, 1008, 1913),
        }
        transcripts = {}
        for code, (drafts, repl, search) in expected.items():
            names = (
                ['lean4_translator'] * drafts + ['lean4_repl_runner'] * repl
                + ['lean_inspect_name', 'lean_resolve_name',
                   'search_online'] * (search // 3)
                + ['search_online'] * (search % 3)
            )
            transcripts[code] = [names[i::4] for i in range(4)]
        usage = factorial.usage_summary(transcripts)
        for code, cells in expected.items():
            self.assertEqual(
                tuple(usage.get(code, group)
                      for group in ('translator', 'repl', 's_total')),
                cells
            )
        self.assertEqual(usage.unknown, set())
        for before, after, rendered in (('010', '011', '29.8'),
                                        ('110', '111', '26.6')):
            self.assertEqual(prettify_float(factorial.reduction(
                usage.get(before, 'repl'), usage.get(after, 'repl')
            ), 1), rendered)

    def test_reduction(self):
        self.assertEqual(prettify_float(factorial.reduction(1496, 1050), 1),
                         '29.8')
        self.assertEqual(prettify_float(factorial.reduction(1374, 1008), 1),
                         '26.6')
        self.assertIsNone(factorial.reduction(0, 3))

    def test_multi_orchestrator_summary(self):
        runs = [
            make_run('t1', '111', faithful=True, orchestrator='a'),
            make_run('t2', '111', faithful=False, orchestrator='a'),
            make_run('t1', '000', faithful=False, orchestrator='a'),
            make_run('t1', '111', faithful=True, orchestrator='b'),
        ]
        summary = factorial.multi_orchestrator_summary(runs)
        self.assertEqual(summary['a']['rate'], 50)
        self.assertEqual(summary['a']['uplift'], 50)
        self.assertIsNone(summary['b']['uplift'])


class ExperimentTestCase(BasicTestCase):
    def setUp(self):
        super().setUp()
        self.items = make_items(8)
        self.experiment = stub_experiment(self.tmp, self.items)

    def run_all(self, codes=None):
        for code in codes or factorial.CONFIG_CODES:
            experiment.run_experiment(
                replace(self.experiment, config=code), items=self.items
            )
        return experiment.run_judging(self.experiment, items=self.items)

    def test_config_validation(self):
        with self.assertRaises(exceptions.UsageError):
            replace(self.experiment, config='1x1')
        with self.assertRaises(exceptions.UsageError):
            replace(self.experiment, backend='replay')
        with self.assertRaises(exceptions.UsageError):
            replace(self.experiment, t_max=0)
        with self.assertRaises(exceptions.UsageError):
            replace(self.experiment, parallelism=0)

    def test_load_merges_sources(self):
        path = self.path('exp.json')
        with open(path, 'w', encoding='utf-8') as f:
            json.dump({'experimentId': 'e1', 'corpus': 'c.jsonl',
                       'config': '010'}, f)
        loaded = experiment.ExperimentConfig.load(path, {'config': '110',
                                                         'tMax': None})
        self.assertEqual(loaded.experiment_id, 'e1')
        self.assertEqual(loaded.config, '110')
        self.assertEqual(loaded.t_max, settings.T_MAX)
        self.assertEqual(loaded.corpus, self.path('c.jsonl'))
        self.assertEqual(
            experiment.ExperimentConfig.load(
                None, loaded.to_dict()
            ).to_dict(),
            loaded.to_dict()
        )
        with self.assertRaises(exceptions.UsageError):
            experiment.ExperimentConfig.load(path, {'colour': 'red'})
        with self.assertRaises(exceptions.UsageError):
            experiment.ExperimentConfig.load(None, {})

    def test_run_and_resume(self):
        summary = experiment.run_experiment(
            replace(self.experiment, config='010'), items=self.items
        )
        self.assertEqual(
            (summary['completed'], summary['skipped']), (8, 0)
        )
        self.assertEqual(summary['compile_pass'], 8)
        summary = experiment.run_experiment(
            replace(self.experiment, config='010'), items=self.items
        )
        self.assertEqual(
            (summary['completed'], summary['skipped']), (0, 8)
        )
        runs = store.RunStore('smoke', self.tmp).query_runs(config='010')
        self.assertEqual(len(runs), 8)
        self.assertTrue(all(r.steps_used == 5 for r in runs))
        self.assertTrue(all(r.final_code == GOOD_CODE for r in runs))

    def test_canned_policy_per_config(self):
        coverage = self.run_all()
        self.assertEqual(coverage['total'], 64)
        self.assertEqual(coverage['judged'], 64)
        self.assertEqual(coverage['judge_invalid'], 0)
        runs = store.RunStore('smoke', self.tmp).all_runs()
        passed = {
            code: sum(r.faithful_consensus for r in runs
                      if r.config.code() == code)
            for code in factorial.CONFIG_CODES
        }
        self.assertEqual(passed['000'], 0)
        self.assertEqual(passed['100'], 0)
        for code in ('001', '010', '011', '101', '110', '111'):
            self.assertEqual(passed[code], 8)
        coverage = experiment.run_judging(self.experiment, items=self.items)
        self.assertEqual(coverage['newly_judged'], 0)

    def test_judging_needs_statements(self):
        experiment.run_experiment(
            replace(self.experiment, config='000'), items=self.items
        )
        with self.assertRaises(exceptions.UsageError):
            experiment.run_judging(self.experiment, items=self.items[:2])

    def test_report(self):
        self.run_all()
        store_ = store.RunStore('smoke', self.tmp)
        manifest = report.emit_report(
            store_, self.path('out1'), resamples=200
        )
        self.assertEqual(manifest['missing_cells'], 0)
        self.assertEqual(manifest['runs'], 64)
        for name in ('factorial.csv', 'effects.csv', 'heatmap.png',
                     'efficiency.png', 'manifest.json'):
            self.assertTrue(os.path.exists(self.path('out1', name)), name)
        with open(self.path('out1', 'factorial.csv'), encoding='utf-8') as f:
            rows = list(csv.DictReader(f))
        self.assertEqual([r['config'] for r in rows], factorial.CONFIG_CODES)
        self.assertEqual(rows[-1]['faithful_pct'], '100.00')
        self.assertEqual(rows[0]['faithful_pct'], '0.00')
        self.assertEqual(manifest['bootstrap']['method'], 'percentile')
        self.assertEqual(manifest['usage_coverage']['111'], '8/8')

        report.emit_report(
            store_, self.path('out2'), plots=False, resamples=200
        )
        for name in os.listdir(self.path('out2')):
            if name.endswith('.csv'):
                with open(self.path('out1', name), 'rb') as f, \
                        open(self.path('out2', name), 'rb') as g:
                    self.assertEqual(f.read(), g.read(), name)

        sections = report.analyze_store(store_, resamples=200)
        self.assertIn('Experiment smoke', report.render_console(sections))

    def test_report_with_missing_config(self):
        codes = [c for c in factorial.CONFIG_CODES if c != '101']
        self.run_all(codes)
        manifest = report.emit_report(
            store.RunStore('smoke', self.tmp), self.path('out'),
            plots=False, resamples=100
        )
        self.assertEqual(manifest['missing_cells'], 8)
        self.assertEqual(manifest['missing_by_config'], {'101': 8})
        with open(self.path('out', 'factorial.csv'), encoding='utf-8') as f:
            rows = {r['config']: r for r in csv.DictReader(f)}
        self.assertEqual(rows['101']['missing'], '8')
        self.assertEqual(rows['101']['faithful_pct'], '')


class CLITestCase(BasicTestCase):
    def setUp(self):
        super().setUp()
        self.items = make_items(10)
        write_corpus(self.path('corpus.jsonl'), [
            {'id': x.id, 'domain': x.domain.value,
             'statement': x.statement_text}
            for x in self.items
        ])
        stub = stub_data()
        stub['answers'] = {x.id: [BAD_CODE, GOOD_CODE] for x in self.items}
        self.experiment_file = self.path('experiment.json')
        with open(self.experiment_file, 'w', encoding='utf-8') as f:
            json.dump({
                'experimentId': 'cli', 'corpus': 'corpus.jsonl',
                'storeRoot': 'store', 'parallelism': 2, 'stub': stub
            }, f)

    def main(self, *argv):
        return manage.main(list(argv))

    def test_common_options_on_every_command(self):
        sheet = self.path('sheet.csv')
        open(sheet, 'w').close()
        parser = manage.build_parser()
        for command in manage.COMMANDS:
            argv = [command, '-l', 'debug', '--id', 'x', '--backend',
                    'stub', '--parallelism', '3']
            if command == 'export-audit':
                argv += ['-o', self.path('audit.csv')]
            if command == 'audit-agreement':
                argv.append(sheet)
            namespace = parser.parse_args(argv)
            self.assertEqual(
                (namespace.level, namespace.id, namespace.backend,
                 namespace.parallelism),
                ('debug', 'x', 'stub', 3)
            )

    def test_invalid_config(self):
        code = self.main('run', '-e', self.experiment_file, '-c', '1x1')
        self.assertEqual(code, settings.EXIT_USAGE)

    def test_missing_store(self):
        code = self.main('judge', '-e', self.experiment_file)
        self.assertEqual(code, settings.EXIT_USAGE)

    def test_replay_miss(self):
        os.makedirs(self.path('fixtures'))
        code = self.main(
            'run', '-e', self.experiment_file, '--backend', 'replay',
            '--fixtures', self.path('fixtures'), '--parallelism', '1'
        )
        self.assertEqual(code, settings.EXIT_FIXTURE_MISS)

    def test_end_to_end(self):
        for config in factorial.CONFIG_CODES:
            self.assertEqual(
                self.main('run', '-e', self.experiment_file, '-c', config),
                settings.EXIT_OK
            )
        self.assertEqual(
            self.main('judge', '-e', self.experiment_file), settings.EXIT_OK
        )
        self.assertEqual(
            self.main('report', '-e', self.experiment_file,
                      '--resamples', '200', '--no-plots'),
            settings.EXIT_OK
        )
        with open(self.path('store', 'cli', 'report', 'manifest.json'),
                  encoding='utf-8') as f:
            manifest = json.load(f)
        self.assertEqual(manifest['missing_cells'], 0)
        self.assertEqual(manifest['theorems'], 10)

        sheet = self.path('audit.csv')
        self.assertEqual(
            self.main('export-audit', '-e', self.experiment_file,
                      '-o', sheet, '--sample-size', '5'),
            settings.EXIT_OK
        )
        with open(sheet, encoding='utf-8') as f:
            rows = list(csv.DictReader(f))
        self.assertEqual(len(rows), 5)
        for row in rows:
            row['human_grade'] = row['llm_grade']
        with open(sheet, 'w', encoding='utf-8', newline='') as f:
            writer = csv.DictWriter(f, fieldnames=verdict.AUDIT_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
        self.assertEqual(self.main('audit-agreement', sheet), settings.EXIT_OK)
        self.assertEqual(
            verdict.audit_agreement(sheet)['exact'], 5
        )
        rows[2]['human_grade'] = 'ten'
        with open(sheet, 'w', encoding='utf-8', newline='') as f:
            writer = csv.DictWriter(f, fieldnames=verdict.AUDIT_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
        self.assertEqual(
            self.main('audit-agreement', sheet), settings.EXIT_USAGE
        )


class LoggerTestCase(BasicTestCase):
    def setUp(self):
        super().setUp()
        self.logger = Logger(self.path('logs'), to_console=False)

    def tearDown(self):
        self.logger.logfile.close()
        super().tearDown()

    def read_log(self):
        self.logger.logfile.flush()
        with open(self.logger.logfile.name, encoding='utf-8') as f:
            return f.read()

    def test_levels_and_context(self):
        self.logger.set_level('warning')
        self.logger.info('hidden')
        self.logger.bind('t1/111').warning('shown')
        content = self.read_log()
        self.assertNotIn('hidden', content)
        self.assertIn('[WARNING] [t1/111] shown', content)

    def test_catch_error(self):
        @self.logger.catch_error
        def broken():
            raise ValueError('boom')

        self.assertIsNone(broken())
        self.assertIn('broken raised ValueError:boom', self.read_log())


class UtilsTestCase(unittest.TestCase):
    def test_prettify(self):
        self.assertEqual(prettify_float(Fraction(1, 8), 2), '0.13')
        self.assertEqual(prettify_float(Fraction(-1, 8), 2), '-0.13')
        self.assertEqual(prettify_float(Fraction(-1, 1000), 2), '0.00')
        self.assertEqual(prettify_float(5, 0), '5')

    def test_merge_dicts(self):
        self.assertEqual(
            merge_dicts({'a': 1, 'b': 2}, {'a': None, 'b': 3}, {'c': 4}),
            {'a': 1, 'b': 3, 'c': 4}
        )

    def test_text_helpers(self):
        self.assertEqual(
            text.extract_code_block("x\n```lean\nfoo\n```\n```\nbar\n```"),
            'foo\n'
        )
        self.assertIsNone(text.extract_code_block('no code'))
        self.assertEqual(
            text.find_success_declaration(' {"status": "success"} '),
            text.EXACT
        )
        self.assertEqual(
            text.find_success_declaration('ok {"status":"success"}'),
            text.EMBEDDED
        )
        self.assertIsNone(text.find_success_declaration('{"status": "fail"}'))
        self.assertEqual(text.levenshtein_distance('kitten', 'sitting'), 3)


if __name__ == '__main__':
    unittest.main()
