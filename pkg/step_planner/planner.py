"""Provide the closed-loop subgoal tree planner.

run_episode grows a subgoal tree depth-first, left to right. Each new node
is judged by the termination model: mappable and consistent nodes are
executed, consistent but unmappable ones are refined, inconsistent ones are
pruned and their parent asked again. run_flat_baseline asks the policy for
one action at a time instead.
"""
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import voluptuous as vol

from .const import (
    DEFAULT_MAX_DEPTH,
    DEFAULT_MAX_REPLANS,
    DEFAULT_MAX_STEPS,
    TRACE_VERSION,
)
from .decompose import (
    ContextMode,
    DecomposerOutput,
    GrammarError,
    NoRecipeMatch,
    build_context,
    next_subgoal,
)
from .terminate import VerdictKind, check_mappability, evaluate, render_action
from .tree import ROOT_COMPLETE, SubgoalTree
from .world import (
    DEFAULT_EMBODIMENT,
    ActionError,
    PrimitiveAction,
    WorldState,
    affordance_allows,
    apply_action,
    goal_satisfied,
    legal_in_environment,
    observe,
    world_from_dict,
)

_LOGGER = logging.getLogger(__name__)

NOT_MAPPABLE = "NotMappable"
EMPTY_DECOMPOSITION = "EmptyDecomposition"
REPLAN_BUDGET = "ReplanBudget"

EV_DECOMPOSED = "Decomposed"
EV_EXHAUSTED = "Exhausted"
EV_VERDICT = "Verdict"
EV_EXECUTED = "Executed"
EV_REPLANNED = "Replanned"
EV_FINISHED = "Finished"

RESULT_OK = "ok"
SUCCESS = "Success"
FAILURE = "Failure"

CONF_MAX_DEPTH = "max_depth"
CONF_MAX_REPLANS = "max_replans_per_node"
CONF_MAX_STEPS = "max_total_steps"
CONF_MODE = "mode"
CONF_SEED = "seed"

PLANNER_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_MAX_DEPTH, default=DEFAULT_MAX_DEPTH): vol.All(
            int, vol.Range(min=1)
        ),
        vol.Optional(CONF_MAX_REPLANS, default=DEFAULT_MAX_REPLANS): vol.All(
            int, vol.Range(min=1)
        ),
        vol.Optional(CONF_MAX_STEPS, default=DEFAULT_MAX_STEPS): vol.All(
            int, vol.Range(min=1)
        ),
        vol.Optional(CONF_MODE, default=ContextMode.FULL_STEP.value): vol.In(
            [mode.value for mode in ContextMode]
        ),
        vol.Optional(CONF_SEED, default=0): int,
    }
)


class SchemaMismatch(ValueError):
    """Raised when a trace file has an unsupported schema version."""


class FailureKind(str, Enum):
    """Why an episode failed."""

    BUDGET_EXHAUSTED = "BudgetExhausted"
    REPLAN_AT_ROOT = "ReplanAtRoot"
    POLICY_GRAMMAR_ERROR = "PolicyGrammarError"
    ACTION_REJECTED = "ActionRejected"
    GOAL_UNMET = "GoalUnmet"


@dataclass(frozen=True)
class PlannerConfig:
    """Budgets and context mode of one episode."""

    max_depth: int = DEFAULT_MAX_DEPTH
    max_replans_per_node: int = DEFAULT_MAX_REPLANS
    max_total_steps: int = DEFAULT_MAX_STEPS
    mode: ContextMode = ContextMode.FULL_STEP
    seed: int = 0

    def __post_init__(self):
        """Budgets must be at least 1."""
        for name in (CONF_MAX_DEPTH, CONF_MAX_REPLANS, CONF_MAX_STEPS):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "PlannerConfig":
        """Build a config from a JSON mapping, filling defaults."""
        data = PLANNER_SCHEMA(data)
        return cls(
            max_depth=data[CONF_MAX_DEPTH],
            max_replans_per_node=data[CONF_MAX_REPLANS],
            max_total_steps=data[CONF_MAX_STEPS],
            mode=ContextMode(data[CONF_MODE]),
            seed=data[CONF_SEED],
        )


@dataclass(frozen=True)
class EpisodeOutcome:
    """Success, or Failure(kind), with the per-predicate vector."""

    success: bool
    kind: Optional[FailureKind] = None
    goals: tuple = ()

    def __str__(self) -> str:
        return SUCCESS if self.success else f"{FAILURE}({self.kind.value})"


@dataclass(frozen=True)
class TraceEvent:
    """One line of a trace file."""

    ev: str
    data: dict

    def to_json(self) -> str:
        """Serialize as a canonical JSON line."""
        return json.dumps(
            dict(self.data, v=TRACE_VERSION, ev=self.ev), sort_keys=True
        )


@dataclass
class EpisodeTrace:
    """Everything one episode did, in order."""

    task_id: str
    mode: ContextMode
    events: list = field(default_factory=list)
    executed_actions: list = field(default_factory=list)
    final_state: Optional[WorldState] = None
    tree: Optional[SubgoalTree] = None

    def log(self, ev: str, **data):
        """Append an event."""
        self.events.append(TraceEvent(ev, data))

    def of_kind(self, ev: str) -> list:
        """Return the events of one kind, in order."""
        return [event for event in self.events if event.ev == ev]

    @property
    def outcome(self) -> Optional[EpisodeOutcome]:
        """Return the outcome recorded by the Finished event."""
        finished = self.of_kind(EV_FINISHED)
        if not finished:
            return None
        data = finished[-1].data
        kind = data.get("kind")
        return EpisodeOutcome(
            success=data["outcome"] == SUCCESS,
            kind=None if kind is None else FailureKind(kind),
            goals=tuple(data.get("goals", ())),
        )

    def to_jsonl(self) -> str:
        """Serialize the events as JSON lines."""
        return "".join(event.to_json() + "\n" for event in self.events)

    def write(self, path: str):
        """Write the trace file."""
        with open(path, "w", encoding="utf-8") as file_handle:
            file_handle.write(self.to_jsonl())


def trace_from_jsonl(text: str, source: str = "<trace>") -> EpisodeTrace:
    """Parse a trace file.

    :raises SchemaMismatch: if a line is not a trace event of the
        supported version
    """
    events = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except ValueError as error:
            raise SchemaMismatch(f"{source}:{number}: {error}") from error
        if not isinstance(data, dict) or "ev" not in data:
            raise SchemaMismatch(f"{source}:{number}: not a trace event")
        version = data.pop("v", None)
        if version != TRACE_VERSION:
            raise SchemaMismatch(
                f"{source}:{number}: trace version {version!r}, "
                f"expected {TRACE_VERSION}"
            )
        events.append(TraceEvent(data.pop("ev"), data))
    trace = EpisodeTrace(task_id="", mode=ContextMode.FULL_STEP, events=events)
    for event in events:
        if event.ev == EV_EXECUTED and event.data.get("result") == RESULT_OK:
            trace.executed_actions.append(
                PrimitiveAction.from_dict(event.data["action"])
            )
        if event.ev == EV_FINISHED:
            trace.task_id = event.data.get("task", "")
            trace.mode = ContextMode(
                event.data.get("mode", ContextMode.FULL_STEP.value)
            )
            if event.data.get("state") is not None:
                trace.final_state = world_from_dict(event.data["state"], source)
    return trace


def load_trace(path: str) -> EpisodeTrace:
    """Load a trace file."""
    with open(path, encoding="utf-8") as file_handle:
        return trace_from_jsonl(file_handle.read(), path)


def check_outcome(final_state: WorldState, task) -> EpisodeOutcome:
    """Evaluate every goal predicate of task against final_state."""
    goals = tuple(goal_satisfied(final_state, goal) for goal in task.goals)
    if all(goals):
        return EpisodeOutcome(True, None, goals)
    return EpisodeOutcome(False, FailureKind.REPLAN_AT_ROOT, goals)


def _finish(
    trace: EpisodeTrace, task, state: WorldState, kind: Optional[FailureKind]
) -> EpisodeTrace:
    checked = check_outcome(state, task)
    if checked.success:
        outcome = checked
    else:
        outcome = EpisodeOutcome(False, kind or checked.kind, checked.goals)
    trace.final_state = state
    trace.log(
        EV_FINISHED,
        task=task.id,
        mode=trace.mode.value,
        outcome=SUCCESS if outcome.success else FAILURE,
        kind=None if outcome.kind is None else outcome.kind.value,
        goals=list(outcome.goals),
        steps=len(trace.executed_actions),
        state=state.to_dict(),
    )
    _LOGGER.info(
        "%s: %s after %d action(s)",
        task.id,
        outcome,
        len(trace.executed_actions),
    )
    return trace


class _Episode:
    """The mutable state of one run_episode call."""

    def __init__(self, task, policy, config: PlannerConfig, embodiment):
        self.task = task
        self.policy = policy
        self.config = config
        self.embodiment = embodiment
        self.state = task.world
        self.tree = SubgoalTree(task.instruction)
        self.trace = EpisodeTrace(task.id, config.mode, tree=self.tree)

    def replan(self, node_id: str, reason: str) -> Optional[FailureKind]:
        """Prune node_id; return a failure kind if the budget overflows."""
        failed = node_id
        while True:
            parent_id = self.tree.replan_reset(failed)
            parent = self.tree.nodes[parent_id]
            self.trace.log(
                EV_REPLANNED,
                node=failed,
                parent=parent_id,
                reason=reason,
                replans=parent.replans,
            )
            _LOGGER.debug(
                "%s: Replanning %s (%s)", self.task.id, parent_id, reason
            )
            if parent.replans <= self.config.max_replans_per_node:
                return None
            if parent.parent is None or parent.children:
                return FailureKind.BUDGET_EXHAUSTED
            failed = parent_id
            reason = REPLAN_BUDGET

    def step(self) -> tuple:
        """Run one decomposition request.

        :returns: (finished, failure kind or None)
        """
        tree = self.tree
        focus = tree.nodes[tree.cursor]
        observation = observe(self.state)
        ctx = build_context(
            tree, focus.node_id, observation, self.embodiment, self.config.mode
        )
        try:
            output = next_subgoal(self.policy, ctx)
        except GrammarError as error:
            self.trace.log(
                EV_DECOMPOSED,
                node=None,
                parent=focus.node_id,
                text=None,
                context=ctx.to_dict(),
                retries=error.retries,
                error=error.raw,
            )
            return True, FailureKind.POLICY_GRAMMAR_ERROR
        except NoRecipeMatch:
            _LOGGER.debug("%s: No recipe for %s", self.task.id, ctx.focus_text)
            output = DecomposerOutput.end()

        if output.end_of_siblings:
            self.trace.log(
                EV_DECOMPOSED,
                node=None,
                parent=focus.node_id,
                text=None,
                context=ctx.to_dict(),
                retries=output.retries,
            )
            self.trace.log(
                EV_EXHAUSTED, node=focus.node_id, children=len(focus.children)
            )
            move = tree.close_level(focus.node_id)
            if move is None:
                return False, self.replan(focus.node_id, EMPTY_DECOMPOSITION)
            return move.kind == ROOT_COMPLETE, None

        node_id = tree.add_child(focus.node_id, output.text)
        node = tree.nodes[node_id]
        self.trace.log(
            EV_DECOMPOSED,
            node=node_id,
            parent=focus.node_id,
            text=output.text,
            context=ctx.to_dict(),
            retries=output.retries,
        )
        try:
            verdict, report = evaluate(
                node,
                focus,
                tree.left_sibling(node_id),
                self.state,
                observation,
                self.embodiment,
                self.policy,
            )
        except GrammarError as error:
            self.trace.log(
                EV_VERDICT,
                node=node_id,
                text=node.text,
                retries=error.retries,
                error=error.raw,
            )
            return True, FailureKind.POLICY_GRAMMAR_ERROR
        self.trace.log(
            EV_VERDICT,
            node=node_id,
            text=node.text,
            report=report.to_dict(),
            retries=report.retries,
            **verdict.to_dict()
        )

        if verdict.kind is VerdictKind.EXECUTE:
            return self.execute(node_id, verdict.action, observation)
        if verdict.kind is VerdictKind.REFINE:
            if node.depth >= self.config.max_depth:
                return True, FailureKind.BUDGET_EXHAUSTED
            return False, None
        return False, self.replan(node_id, verdict.reason)

    def execute(self, node_id: str, action: PrimitiveAction, observation):
        """Apply the action of an Execute verdict."""
        tree = self.tree
        tree.mark_leaf(node_id, action)
        text = render_action(action, observation)
        try:
            self.state = apply_action(self.state, action, self.embodiment)
        except ActionError as error:
            self.trace.log(
                EV_EXECUTED,
                node=node_id,
                action=action.to_dict(),
                text=text,
                result=error.rule,
            )
            return True, FailureKind.ACTION_REJECTED
        self.trace.executed_actions.append(action)
        self.trace.log(
            EV_EXECUTED,
            node=node_id,
            action=action.to_dict(),
            text=text,
            result=RESULT_OK,
        )
        tree.mark_done(node_id)
        move = tree.advance_cursor()
        return move.kind == ROOT_COMPLETE, None


def run_episode(
    task,
    policy,
    config: PlannerConfig = PlannerConfig(),
    embodiment=DEFAULT_EMBODIMENT,
) -> EpisodeTrace:
    """Plan and execute task by growing a subgoal tree.

    Planning failures never raise; they end the episode with a Failure
    outcome. Backend failures propagate.

    :param task: The task to solve
    :type task: TaskSpec
    :param policy: The decomposition policy
    :type policy: DecompositionPolicy
    :param config: Budgets and context mode
    :type config: PlannerConfig
    :returns: the episode trace
    :rtype: EpisodeTrace
    """
    episode = _Episode(task, policy, config, embodiment)
    kind = None
    for _ in range(config.max_total_steps):
        finished, kind = episode.step()
        if finished or kind is not None:
            break
    else:
        kind = FailureKind.BUDGET_EXHAUSTED
    return _finish(episode.trace, task, episode.state, kind)


def run_flat_baseline(
    task,
    policy,
    config: PlannerConfig = PlannerConfig(),
    embodiment=DEFAULT_EMBODIMENT,
) -> EpisodeTrace:
    """Plan and execute task one action at a time.

    Rejected proposals are counted against max_replans_per_node as if they
    were replans of a single node.
    """
    mode = ContextMode.FLAT_BASELINE
    tree = SubgoalTree(task.instruction)
    trace = EpisodeTrace(task.id, mode, tree=tree)
    state = task.world
    rejections = 0
    kind = None
    if not task.goals:
        return _finish(trace, task, state, None)
    for _ in range(config.max_total_steps):
        observation = observe(state)
        ctx = build_context(tree, tree.root, observation, embodiment, mode)
        try:
            output = next_subgoal(policy, ctx)
        except GrammarError as error:
            trace.log(
                EV_DECOMPOSED,
                node=None,
                parent=tree.root,
                text=None,
                context=ctx.to_dict(),
                retries=error.retries,
                error=error.raw,
            )
            kind = FailureKind.POLICY_GRAMMAR_ERROR
            break
        except NoRecipeMatch:
            output = DecomposerOutput.end()
        trace.log(
            EV_DECOMPOSED,
            node=None,
            parent=tree.root,
            text=output.text,
            context=ctx.to_dict(),
            retries=output.retries,
        )
        if output.end_of_siblings:
            kind = FailureKind.GOAL_UNMET
            break

        action = check_mappability(output.text, observation)
        rule = NOT_MAPPABLE
        if action is not None:
            _, rule = affordance_allows(state, embodiment, action)
            if rule is None:
                _, rule = legal_in_environment(state, action)
        trace.log(
            EV_VERDICT,
            node=None,
            text=output.text,
            verdict=VerdictKind.REPLAN.value
            if rule
            else VerdictKind.EXECUTE.value,
            action=None if action is None else action.to_dict(),
            reason=rule,
            report=None,
        )
        if rule is not None:
            rejections += 1
            trace.log(
                EV_EXECUTED,
                node=None,
                action=None if action is None else action.to_dict(),
                text=output.text,
                result=rule,
            )
            trace.log(
                EV_REPLANNED,
                node=None,
                parent=tree.root,
                reason=rule,
                replans=rejections,
            )
            if rejections > config.max_replans_per_node:
                kind = FailureKind.ACTION_REJECTED
                break
            continue

        state = apply_action(state, action, embodiment)
        node_id = tree.add_child(tree.root, render_action(action, observation))
        tree.mark_leaf(node_id, action)
        tree.mark_done(node_id)
        trace.executed_actions.append(action)
        trace.log(
            EV_EXECUTED,
            node=node_id,
            action=action.to_dict(),
            text=tree.nodes[node_id].text,
            result=RESULT_OK,
        )
    else:
        kind = FailureKind.BUDGET_EXHAUSTED
    return _finish(trace, task, state, kind)
