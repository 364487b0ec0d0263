"""Provide the subgoal decomposition model.

build_context gathers what a policy sees when asked for the next subgoal
under a focus node; next_subgoal asks the policy.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .tree import SubgoalTree
from .world import OPENABLE, Embodiment, Observation

_LOGGER = logging.getLogger(__name__)


class PolicyError(Exception):
    """Base class for decomposition policy failures."""


class GrammarError(PolicyError):
    """Raised when a policy's raw output cannot be parsed."""

    def __init__(self, raw: str, retries: int = 0):
        """Construct GrammarError.

        :param raw: The unparseable output
        :type raw: str
        :param retries: How many re-asks were spent before giving up
        :type retries: int
        """
        super().__init__(f"unparseable policy output: {raw!r}")
        self.raw = raw
        self.retries = retries


class BackendUnavailable(PolicyError):
    """Raised when the policy backend cannot be reached."""

    def __init__(self, message: str, kind: Optional[str] = None):
        """Construct BackendUnavailable.

        :param message: Human readable cause
        :type message: str
        :param kind: The transport failure kind, if any
        :type kind: str
        """
        super().__init__(message)
        self.kind = kind


class NoRecipeMatch(PolicyError):
    """Raised when the scripted policy has no recipe for a focus text."""


class ContextMode(str, Enum):
    """What the policy is conditioned on."""

    FULL_STEP = "full"
    NO_TREE_STRUCTURE = "no-tree"
    NO_SUBGOAL_TREE = "no-subgoal-tree"
    FLAT_BASELINE = "flat"


@dataclass(frozen=True)
class DecompositionContext:
    """Inputs of one decomposition request.

    observation is kept for policies that ground names; it is not part of
    the serialized context, observation_digest is.
    """

    focus_text: str
    prior_steps: tuple
    observation_digest: str
    embodiment_digest: str
    mode: ContextMode
    observation: Optional[Observation] = field(
        default=None, compare=False, repr=False
    )

    def to_dict(self) -> dict:
        """Serialize for traces and golden files."""
        return {
            "mode": self.mode.value,
            "focus_text": self.focus_text,
            "prior_steps": list(self.prior_steps),
            "observation_digest": self.observation_digest,
            "embodiment_digest": self.embodiment_digest,
        }


@dataclass(frozen=True)
class DecomposerOutput:
    """Subgoal(text) or EndOfSiblings (text is None)."""

    text: Optional[str] = None
    retries: int = 0

    def __post_init__(self):
        """Subgoal text must not be blank."""
        if self.text is not None and not self.text.strip():
            raise ValueError("subgoal text must not be empty")

    @property
    def end_of_siblings(self) -> bool:
        """Return True for the EndOfSiblings signal."""
        return self.text is None

    @classmethod
    def subgoal(cls, text: str, retries: int = 0) -> "DecomposerOutput":
        """Build a Subgoal output."""
        return cls(text.strip(), retries)

    @classmethod
    def end(cls, retries: int = 0) -> "DecomposerOutput":
        """Build an EndOfSiblings output."""
        return cls(None, retries)


def render_observation(observation: Observation) -> str:
    """Render an observation as canonical sorted lines."""
    lines = [
        f"agent at: {observation.agent_at}",
        f"holding: {observation.held or 'nothing'}",
        "visible:",
    ]
    for obj in observation.objects:
        details = [f"- {obj.id} ({obj.cls})"]
        if obj.flags:
            details.append(f"[{', '.join(sorted(obj.flags))}]")
        if obj.has(OPENABLE):
            details.append("open" if obj.is_open else "closed")
        relation = observation.parent_of.get(obj.id)
        if relation is not None:
            details.append(f"{relation.rel.lower()} {relation.parent}")
        lines.append(" ".join(details))
    return "\n".join(lines)


def render_embodiment(embodiment: Embodiment) -> str:
    """Render the embodiment's affordances."""
    return (
        f"single arm, gripper capacity {embodiment.gripper_capacity}; "
        "open and close need an empty gripper; "
        "objects are reachable only at their anchor"
    )


def build_context(
    tree: SubgoalTree,
    cursor_parent: str,
    observation: Observation,
    embodiment: Embodiment,
    mode: ContextMode,
) -> DecompositionContext:
    """Build the context for the next child of cursor_parent.

    FULL_STEP sees the focus and its finished children. NO_TREE_STRUCTURE
    sees the focus and every executed leaf. NO_SUBGOAL_TREE sees the root
    and every executed leaf. FLAT_BASELINE sees the root and the executed
    actions as they were rendered when proposed.

    :param tree: The episode's tree
    :type tree: SubgoalTree
    :param cursor_parent: The focus node id
    :type cursor_parent: str
    """
    focus = tree.node(cursor_parent)
    root = tree.root_node
    if mode is ContextMode.FULL_STEP:
        focus_text = focus.text
        prior = [node.text for node in tree.done_children(cursor_parent)]
    elif mode is ContextMode.NO_TREE_STRUCTURE:
        focus_text = focus.text
        prior = [node.text for node in tree.executed_leaves()]
    else:
        focus_text = root.text
        prior = [node.text for node in tree.executed_leaves()]
    return DecompositionContext(
        focus_text=focus_text,
        prior_steps=tuple(prior),
        observation_digest=render_observation(observation),
        embodiment_digest=render_embodiment(embodiment),
        mode=mode,
        observation=observation,
    )


def next_subgoal(policy, ctx: DecompositionContext) -> DecomposerOutput:
    """Ask policy for the next subgoal under ctx.focus_text.

    :raises GrammarError: if the policy output cannot be parsed
    :raises BackendUnavailable: if the policy backend fails
    :raises NoRecipeMatch: if a scripted policy has no recipe
    """
    output = policy.next_subgoal(ctx)
    _LOGGER.debug(
        "%s | %d prior -> %s",
        ctx.focus_text,
        len(ctx.prior_steps),
        "EndOfSiblings" if output.end_of_siblings else output.text,
    )
    return output
