"""Provide DecompositionPolicy class."""
import importlib
from typing import Optional

from .decompose import DecomposerOutput, DecompositionContext
from .world import Observation, WorldState


class DecompositionPolicy:
    """Provide interface for the decomposition backends.

    The class provides a static method, get_instance, to get a policy
    instance. The non static methods allow this class to act as an
    "interface" for the policy classes. Policies must be safe to share
    between concurrently running episodes.
    """

    name = ""

    @staticmethod
    def get_class(backend: str):
        """Get the class of the requested backend."""
        policy_module_name = ".policies.policy_" + backend
        policy = "Policy" + backend.upper()
        try:
            module = importlib.import_module(policy_module_name, __package__)
            return getattr(module, policy)
        except ImportError:
            return None

    @staticmethod
    def get_instance(backend: str, *args):
        """Get an instance of the requested backend."""
        policy_cls = DecompositionPolicy.get_class(backend)
        if policy_cls is not None:
            return policy_cls(*args)
        return None

    def next_subgoal(self, ctx: DecompositionContext) -> DecomposerOutput:
        """Propose the next subgoal under ctx.focus_text.

        In the flat baseline mode the proposal is the next primitive action
        phrase.
        :param ctx the decomposition context
        :type ctx DecompositionContext
        :returns the next subgoal, or the end of siblings signal
        :rtype DecomposerOutput
        """

    def is_congruent(
        self,
        text: str,
        parent_text: str,
        left_text: Optional[str],
        state: WorldState,
        observation: Optional[Observation],
    ) -> bool:
        """Judge whether text contributes to parent_text.

        :param text the freshly generated subgoal
        :type text str
        :param parent_text the text of the parent node
        :type parent_text str
        :param left_text the text of the left sibling, if any
        :type left_text str
        :param state the true world state
        :type state WorldState
        :param observation the agent's current observation
        :type observation Observation
        :returns True if the subgoal is congruent with its parent
        :rtype bool
        """
        return True

    def judge_congruence(
        self,
        text: str,
        parent_text: str,
        left_text: Optional[str],
        state: WorldState,
        observation: Optional[Observation],
    ) -> tuple:
        """Judge congruence and report the retries the answer needed.

        :returns (congruent, retries)
        :rtype tuple
        :raises GrammarError: if the judgment cannot be parsed
        """
        return (
            self.is_congruent(text, parent_text, left_text, state, observation),
            0,
        )
