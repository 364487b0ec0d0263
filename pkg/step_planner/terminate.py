"""Provide the leaf node termination model.

A freshly generated subgoal is judged by two criteria. Mappability asks
whether its text parses and grounds to exactly one primitive action.
Consistency asks whether it respects the embodiment, the environment and
the parent subgoal. Consistency failures always replan.
"""
import itertools
import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .world import (
    CLOSE,
    GRASP,
    OPEN,
    PUT_IN,
    PUT_ON,
    WALK,
    Embodiment,
    Observation,
    PrimitiveAction,
    WorldState,
    affordance_allows,
    legal_in_environment,
)

_LOGGER = logging.getLogger(__name__)

INCONGRUENT = "Incongruent"

_ARTICLES = re.compile(r"\b(?:the|a|an)\b")
_SPACES = re.compile(r"\s+")
_SINGLE_TARGET = (
    (WALK, re.compile(r"^walk to (?P<target>.+)$")),
    (GRASP, re.compile(r"^grasp (?P<target>.+)$")),
    (OPEN, re.compile(r"^open (?P<target>.+)$")),
    (CLOSE, re.compile(r"^close (?P<target>.+)$")),
)
_PUT = re.compile(r"^put (?P<rest>.+)$")
_PUT_SPLIT = re.compile(r" (on|in) ")
_TEMPLATES = {
    WALK: "walk to {0}",
    GRASP: "grasp {0}",
    PUT_ON: "put {0} on {1}",
    PUT_IN: "put {0} in {1}",
    OPEN: "open {0}",
    CLOSE: "close {0}",
}


def normalize(text: str) -> str:
    """Lower-case text, drop articles and collapse whitespace."""
    text = text.strip().lower().rstrip(".")
    text = _ARTICLES.sub(" ", text)
    return _SPACES.sub(" ", text).strip()


def ground(name: str, observation: Observation) -> list:
    """Return ids of visible objects matching name by id or class."""
    key = name.strip().replace(" ", "_")
    return [
        obj.id for obj in observation.objects if key in (obj.id, obj.cls)
    ]


def display_name(obj_id: str, observation: Observation) -> str:
    """Return the shortest name that grounds uniquely to obj_id."""
    obj = observation.by_id.get(obj_id)
    if obj is not None and len(observation.objects_of_class(obj.cls)) == 1:
        return obj.cls.replace("_", " ")
    return obj_id


def render_action(action: PrimitiveAction, observation: Observation) -> str:
    """Render action in the canonical grammar."""
    names = [display_name(arg, observation) for arg in action.args]
    return _TEMPLATES[action.kind].format(*names)


def _parses(text: str) -> list:
    """Return (kind, [names]) alternatives for a normalized text."""
    alternatives = []
    for kind, pattern in _SINGLE_TARGET:
        match = pattern.match(text)
        if match:
            alternatives.append((kind, [match.group("target")]))
    match = _PUT.match(text)
    if match:
        rest = match.group("rest")
        for split in _PUT_SPLIT.finditer(rest):
            kind = PUT_ON if split.group(1) == "on" else PUT_IN
            obj, target = rest[: split.start()], rest[split.end() :]
            if obj and target:
                alternatives.append((kind, [obj, target]))
    return alternatives


def check_mappability(
    text: str, observation: Observation
) -> Optional[PrimitiveAction]:
    """Map text to a primitive action.

    :param text: The subgoal text
    :type text: str
    :param observation: The current observation used for grounding
    :type observation: Observation
    :returns: the action iff exactly one grounded parse exists
    :rtype: PrimitiveAction or None
    """
    grounded = set()
    for kind, names in _parses(normalize(text)):
        candidates = [ground(name, observation) for name in names]
        for ids in itertools.product(*candidates):
            grounded.add(PrimitiveAction(kind, tuple(ids)))
    if len(grounded) == 1:
        return grounded.pop()
    return None


@dataclass(frozen=True)
class CriterionReport:
    """Outcome of the termination criteria for one subgoal."""

    mappable: bool
    mapped_action: Optional[PrimitiveAction]
    affordance_ok: bool
    environment_ok: bool
    congruence_ok: bool
    violated: Optional[str] = None
    retries: int = 0

    def __post_init__(self):
        """A mappable report carries its action."""
        if self.mappable and self.mapped_action is None:
            raise ValueError("mappable report without an action")

    @property
    def consistent(self) -> bool:
        """Return True if every consistency criterion holds."""
        return self.affordance_ok and self.environment_ok and self.congruence_ok

    def to_dict(self) -> dict:
        """Serialize for traces."""
        return {
            "mappable": self.mappable,
            "mapped_action": None
            if self.mapped_action is None
            else self.mapped_action.to_dict(),
            "affordance_ok": self.affordance_ok,
            "environment_ok": self.environment_ok,
            "congruence_ok": self.congruence_ok,
            "violated": self.violated,
        }


class VerdictKind(str, Enum):
    """The three termination outcomes."""

    EXECUTE = "Execute"
    REFINE = "Refine"
    REPLAN = "Replan"


@dataclass(frozen=True)
class TerminationVerdict:
    """Execute(action), Refine or Replan(reason)."""

    kind: VerdictKind
    action: Optional[PrimitiveAction] = None
    reason: Optional[str] = None

    def to_dict(self) -> dict:
        """Serialize for traces."""
        return {
            "verdict": self.kind.value,
            "action": None if self.action is None else self.action.to_dict(),
            "reason": self.reason,
        }


def verdict_from_report(report: CriterionReport) -> TerminationVerdict:
    """Derive the verdict from the four criteria alone."""
    if not report.consistent:
        reason = report.violated
        if reason is None:
            if not report.affordance_ok:
                reason = "Affordance"
            elif not report.environment_ok:
                reason = "Environment"
            else:
                reason = INCONGRUENT
        return TerminationVerdict(VerdictKind.REPLAN, reason=reason)
    if report.mappable:
        return TerminationVerdict(
            VerdictKind.EXECUTE, action=report.mapped_action
        )
    return TerminationVerdict(VerdictKind.REFINE)


def check_consistency(
    text: str,
    action: Optional[PrimitiveAction],
    parent_node,
    left_sibling,
    state: WorldState,
    embodiment: Embodiment,
    judge,
    observation: Optional[Observation] = None,
) -> tuple:
    """Check the consistency criteria of a subgoal.

    Affordance and environment are checked against the true state and are
    vacuously satisfied when no action is mapped. Congruence is delegated
    to judge, the decomposition policy.

    :returns: (affordance_ok, environment_ok, congruence_ok, violated,
        retries spent on the congruence judgment)
    :rtype: tuple
    """
    affordance_ok, affordance_rule = True, None
    environment_ok, environment_rule = True, None
    if action is not None:
        affordance_ok, affordance_rule = affordance_allows(
            state, embodiment, action
        )
        environment_ok, environment_rule = legal_in_environment(state, action)
    congruence_ok, retries = judge.judge_congruence(
        text,
        parent_node.text,
        None if left_sibling is None else left_sibling.text,
        state,
        observation,
    )
    violated = affordance_rule or environment_rule
    if violated is None and not congruence_ok:
        violated = INCONGRUENT
    return affordance_ok, environment_ok, congruence_ok, violated, retries


def evaluate(
    node,
    parent,
    left_sibling,
    state: WorldState,
    observation: Observation,
    embodiment: Embodiment,
    judge,
) -> tuple:
    """Judge a freshly generated node.

    :returns: (TerminationVerdict, CriterionReport)
    :rtype: tuple
    """
    action = check_mappability(node.text, observation)
    (
        affordance_ok,
        environment_ok,
        congruence_ok,
        violated,
        retries,
    ) = check_consistency(
        node.text,
        action,
        parent,
        left_sibling,
        state,
        embodiment,
        judge,
        observation,
    )
    report = CriterionReport(
        mappable=action is not None,
        mapped_action=action,
        affordance_ok=affordance_ok,
        environment_ok=environment_ok,
        congruence_ok=congruence_ok,
        violated=violated,
        retries=retries,
    )
    verdict = verdict_from_report(report)
    _LOGGER.debug(
        "%s: %s -> %s %s",
        node.node_id,
        node.text,
        verdict.kind.value,
        verdict.reason or verdict.action or "",
    )
    return verdict, report
