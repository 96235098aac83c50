import functools
import os
from typing import Optional

from configs import settings
from utils import canonical_json
from utils.decorators import rangetest
from utils.text import EMBEDDED, extract_code_block, find_success_declaration
from . import exceptions
from .corpus import TheoremItem
from .gateway import ChatModel, ChatTurnRequest
from .records import (
    FAILURE, SUCCESS, EpisodeResult, EpisodeTranscript, Message, ToolConfig,
    ToolOutcome
)
from .toolbelt import Toolbelt, load_tool_block, tool_specs


__all__ = [
    'load_template', 'base_prompt', 'render_tool_block', 'assemble_prompt',
    'user_message', 'render_outcome', 'run_episode', 'one_shot'
]


PROMPT_SEPARATOR = '\n\n'


@functools.lru_cache(maxsize=None)
def load_template(name: str) -> str:
    with open(
            os.path.join(settings.TEMPLATES_DIR, name), 'r',
            encoding='utf-8') as f:
        return f.read()


def base_prompt() -> str:
    return load_template('base_prompt.txt').rstrip('\n')


def render_tool_block(config: ToolConfig) -> str:
    """Empty for 000, otherwise the header followed by the active entries"""
    if config.is_baseline:
        return ''
    header, _ = load_tool_block()
    return header + PROMPT_SEPARATOR + PROMPT_SEPARATOR.join(
        spec.render() for spec in tool_specs(config)
    ) + '\n'


def assemble_prompt(config: ToolConfig) -> str:
    """
    System prompt of one configuration

    Everything before the tool block is the same bytes for all configs.
    """
    return base_prompt() + PROMPT_SEPARATOR + render_tool_block(config)


def user_message(item: TheoremItem) -> str:
    return load_template('user_message.txt').format(
        theorem_id=item.id, filename=item.lean_filename,
        statement=item.statement_text
    ).rstrip('\n')


def render_outcome(outcome: ToolOutcome) -> str:
    """Tool message content shown to the model"""
    return canonical_json({
        'ok': outcome.ok, 'payload': outcome.payload,
        'diagnostics': [str(d) for d in outcome.diagnostics]
    })


def _opening(item: TheoremItem, config: ToolConfig) -> EpisodeTranscript:
    transcript = EpisodeTranscript()
    transcript.append(Message('system', assemble_prompt(config)))
    transcript.append(Message('user', user_message(item)))
    return transcript


@rangetest(
    strict_range=False, exception=exceptions.UsageError,
    t_max=(1, float('inf'))
)
def run_episode(
        item: TheoremItem, config: ToolConfig, gateway: ChatModel,
        toolbelt: Optional[Toolbelt], t_max: int = settings.T_MAX, *,
        decoding: Optional[dict] = None, logger=None
        ) -> EpisodeResult:
    """
    Drive one agent episode

    A step is one call to the orchestrator; tool executions are free.
    Tool calls are executed in order and answered with tool messages.
    A turn without tool calls that declares {"status": "success"} ends the
    episode; with compiler feedback the last compile must have succeeded,
    otherwise the episode fails with the `unverified_success` annotation.

    :arguments:
        item(TheoremItem): statement to formalize
        config(ToolConfig): 000 goes through `one_shot`
        gateway(ChatModel): orchestrator
        toolbelt(Toolbelt | None): must expose exactly `config`'s tools
        t_max(int)=settings.T_MAX: step budget, >= 1
    :raise:
        exceptions.UsageError: t_max < 1
        exceptions.InvariantViolationError: toolbelt built for another config
        exceptions.FixtureMissError: replay fixture missing
        exceptions.ToolchainConfigurationError: compiler not usable
    :return:
        result(EpisodeResult)
    """
    logger = logger or settings.logger.bind(f"{item.id}/{config}")
    if config.is_baseline:
        return one_shot(item, gateway, decoding=decoding, logger=logger)
    if toolbelt is None or toolbelt.config != config:
        raise exceptions.InvariantViolationError(
            f"toolbelt does not match config {config}", cause='toolbelt'
        )
    transcript = _opening(item, config)
    specs = toolbelt.specs()
    annotations = []
    status, final_code = FAILURE, None
    while transcript.steps < t_max:
        request = ChatTurnRequest(
            list(transcript.messages), specs, gateway.model_id,
            dict(decoding or {})
        )
        try:
            response = gateway.complete(request)
        except exceptions.GatewayError as e:
            logger.error(f"Gateway failure at step {transcript.steps + 1}: {e}")
            annotations.append('gateway_failure')
            break
        message = response.message
        transcript.append(message)
        if message.tool_calls:
            for call in message.tool_calls:
                outcome = toolbelt.execute(call)
                transcript.tool_outcomes.append((call.call_id, outcome))
                transcript.append(Message(
                    'tool', render_outcome(outcome), in_reply_to=call.call_id
                ))
                if call.name == settings.WORKSPACE_TOOL and outcome.ok:
                    final_code = call.arguments['content']
            continue
        declaration = find_success_declaration(message.content)
        if declaration is None:
            continue
        if declaration == EMBEDDED:
            logger.warning("Success declaration embedded in prose")
            annotations.append('embedded_success_declaration')
        if config.f:
            last = transcript.last_compiler_outcome()
            if last is None or not last.ok:
                logger.warning(
                    "Success declared but the last compile did not succeed"
                )
                annotations.append('unverified_success')
                break
        status = SUCCESS
        break
    if status == FAILURE and transcript.steps >= t_max:
        annotations.append('budget_exhausted')
    logger.info(f"{status} after {transcript.steps} steps")
    return EpisodeResult(
        status, transcript, final_code, transcript.steps, annotations
    )


def one_shot(
        item: TheoremItem, gateway: ChatModel, *,
        decoding: Optional[dict] = None, logger=None
        ) -> EpisodeResult:
    """
    Zero-tool baseline: one call, code taken from the first fenced block

    :return:
        result(EpisodeResult): Failure with `no_code_emitted` if the
            response has no code block
    """
    logger = logger or settings.logger.bind(f"{item.id}/000")
    config = ToolConfig()
    transcript = _opening(item, config)
    request = ChatTurnRequest(
        list(transcript.messages), [], gateway.model_id, dict(decoding or {})
    )
    try:
        response = gateway.complete(request)
    except exceptions.GatewayError as e:
        logger.error(f"Gateway failure: {e}")
        return EpisodeResult(FAILURE, transcript, None, 0, ['gateway_failure'])
    transcript.append(response.message)
    code = extract_code_block(response.message.content)
    if code is None:
        logger.info("Failure: no code emitted")
        return EpisodeResult(
            FAILURE, transcript, None, 1, ['no_code_emitted']
        )
    return EpisodeResult(SUCCESS, transcript, code, 1, [])
