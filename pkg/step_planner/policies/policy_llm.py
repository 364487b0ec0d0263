"""Support for a chat completions backed decomposition policy."""
import logging
from typing import Optional

from ..completion import (
    CompletionClient,
    ExpectedForm,
    LLMSettings,
    PromptBundle,
    TransportError,
    parse_action_line,
    parse_subgoal,
    parse_verdict,
)
from ..const import DEFAULT_LLM_RETRIES
from ..decompose import (
    BackendUnavailable,
    ContextMode,
    DecomposerOutput,
    DecompositionContext,
    GrammarError,
    render_embodiment,
    render_observation,
)
from ..decompositionpolicy import DecompositionPolicy
from ..world import DEFAULT_EMBODIMENT, Observation, WorldState, observe

_LOGGER = logging.getLogger(__name__)

SUBGOAL_SYSTEM = (
    "You are the task planner of a single-arm household robot. You break "
    "the task into subgoals, one at a time, left to right. Primitive "
    "subgoals use exactly one of: walk to <object>, grasp <object>, put "
    "<object> on <surface>, put <object> in <container>, open <container>, "
    "close <container>. Answer with one line: SUBGOAL: <text>, or DONE when "
    "the task needs no further subgoals."
)
ACTION_SYSTEM = (
    "You control a single-arm household robot. Propose the next primitive "
    "action using exactly one of: walk to <object>, grasp <object>, put "
    "<object> on <surface>, put <object> in <container>, open <container>, "
    "close <container>. Answer with one line: ACTION: <text>, or DONE when "
    "the task is complete."
)
VERDICT_SYSTEM = (
    "You check plans of a household robot. Decide whether the proposed "
    "subgoal directly contributes to its parent task and follows sensibly "
    "from the previous step. Answer with one word: YES or NO."
)

_FORMS = {
    ExpectedForm.SUBGOAL_LINE: (SUBGOAL_SYSTEM, parse_subgoal),
    ExpectedForm.ACTION_LINE: (ACTION_SYSTEM, parse_action_line),
}


def render_context(ctx: DecompositionContext) -> str:
    """Render a decomposition context as the user prompt."""
    steps = [f"- {text}" for text in ctx.prior_steps] or ["- none"]
    return "\n".join(
        [f"Task: {ctx.focus_text}", "Completed steps:"]
        + steps
        + ["Observation:", ctx.observation_digest]
        + ["Embodiment:", ctx.embodiment_digest]
    )


def render_congruence(
    text: str,
    parent_text: str,
    left_text: Optional[str],
    observation: Observation,
) -> str:
    """Render the congruence question as the user prompt."""
    return "\n".join(
        [
            f"Parent task: {parent_text}",
            f"Previous step: {left_text or 'none'}",
            f"Proposed subgoal: {text}",
            "Observation:",
            render_observation(observation),
            "Embodiment:",
            render_embodiment(DEFAULT_EMBODIMENT),
        ]
    )


class PolicyLLM(DecompositionPolicy):
    """Provide a policy that asks a language model.

    Unparseable answers are re-asked with a format reminder, at most
    retries times.
    """

    name = "llm"

    def __init__(
        self,
        client: Optional[CompletionClient] = None,
        retries: int = DEFAULT_LLM_RETRIES,
    ):
        """Construct PolicyLLM.

        :param client: The completion client; built from the environment
            when omitted
        :type client: CompletionClient
        :param retries: Re-asks allowed after a grammar error
        :type retries: int
        """
        if client is None:
            client = CompletionClient(_LOGGER, "llm", LLMSettings.from_env())
        self.client = client
        self.retries = retries

    def _ask(self, bundle: PromptBundle, parse):
        """Return (parsed answer, retries spent).

        :raises GrammarError: once the retries are spent
        :raises BackendUnavailable: on transport failures
        """
        attempt = bundle
        for retries in range(self.retries + 1):
            try:
                raw = self.client.complete(attempt)
            except TransportError as error:
                raise BackendUnavailable(str(error), error.kind) from error
            try:
                return parse(raw), retries
            except GrammarError as error:
                _LOGGER.debug("Unparseable answer %r", error.raw)
                last = error
                attempt = bundle.with_reminder()
        raise GrammarError(last.raw, self.retries)

    def next_subgoal(self, ctx: DecompositionContext) -> DecomposerOutput:
        """Ask the model for the next subgoal, or action in flat mode."""
        form = (
            ExpectedForm.ACTION_LINE
            if ctx.mode is ContextMode.FLAT_BASELINE
            else ExpectedForm.SUBGOAL_LINE
        )
        system_text, parse = _FORMS[form]
        output, retries = self._ask(
            PromptBundle(system_text, render_context(ctx), form), parse
        )
        if output.end_of_siblings:
            return DecomposerOutput.end(retries)
        return DecomposerOutput.subgoal(output.text, retries)

    def judge_congruence(
        self,
        text: str,
        parent_text: str,
        left_text: Optional[str],
        state: WorldState,
        observation: Optional[Observation],
    ) -> tuple:
        """Ask the model whether text contributes to parent_text.

        :returns: (verdict, retries spent)
        :raises GrammarError: once the retries are spent
        """
        if observation is None:
            observation = observe(state)
        verdict, retries = self._ask(
            PromptBundle(
                VERDICT_SYSTEM,
                render_congruence(text, parent_text, left_text, observation),
                ExpectedForm.VERDICT_TOKEN,
            ),
            parse_verdict,
        )
        return verdict, retries

    def is_congruent(
        self,
        text: str,
        parent_text: str,
        left_text: Optional[str],
        state: WorldState,
        observation: Optional[Observation],
    ) -> bool:
        """Return the model's verdict alone."""
        return self.judge_congruence(
            text, parent_text, left_text, state, observation
        )[0]
