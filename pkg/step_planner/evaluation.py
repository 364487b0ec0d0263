"""Provide task loading, success metrics and failure classification."""
import glob
import json
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from fractions import Fraction
from typing import Optional

import voluptuous as vol
from voluptuous.humanize import humanize_error

from .planner import (
    EV_EXECUTED,
    EV_VERDICT,
    RESULT_OK,
    EpisodeTrace,
    FailureKind,
)
from .world import (
    AFFORDANCE_RULES,
    CONTAINER_CLOSED,
    IN,
    NOT_REACHABLE,
    NOT_VISIBLE,
    ON,
    OPEN,
    OPEN_STATE,
    PLACED,
    WALK,
    GoalPredicate,
    OpenState,
    Placed,
    PrimitiveAction,
    WorldFileError,
    WorldState,
    load_world,
    predicate_from_list,
    world_from_dict,
)

_LOGGER = logging.getLogger(__name__)

SHORT_SIMPLE = "short-simple"
SHORT_COMPLEX = "short-complex"
LONG_SIMPLE = "long-simple"
LONG_COMPLEX = "long-complex"
CATEGORIES = (SHORT_SIMPLE, SHORT_COMPLEX, LONG_SIMPLE, LONG_COMPLEX)
SHORT_LIMIT = 5
LONG_LIMIT = 8
BUCKET_COUNT = 10

CONF_ID = "id"
CONF_INSTRUCTION = "instruction"
CONF_WORLD = "world"
CONF_GOALS = "goals"
CONF_CATEGORY = "category"

GOAL_SCHEMA = vol.Any(
    vol.ExactSequence([vol.In([PLACED]), str, vol.In([IN, ON]), str]),
    vol.ExactSequence([vol.In([OPEN_STATE]), str, bool]),
)

TASK_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_ID): vol.All(str, vol.Length(min=1)),
        vol.Required(CONF_INSTRUCTION): vol.All(str, vol.Length(min=1)),
        vol.Required(CONF_WORLD): vol.Any(str, dict),
        vol.Optional(CONF_GOALS, default=[]): [GOAL_SCHEMA],
        vol.Required(CONF_CATEGORY): vol.In(CATEGORIES),
    }
)

ORDER_RULES = frozenset({NOT_VISIBLE, NOT_REACHABLE, CONTAINER_CLOSED})
GOAL_SATISFACTION_KINDS = frozenset(
    {FailureKind.REPLAN_AT_ROOT, FailureKind.GOAL_UNMET}
)


class TaskFileError(ValueError):
    """Raised when a task file is malformed."""


class MismatchedSuite(ValueError):
    """Raised when traces and tasks do not pair up."""


class TooFewTasks(ValueError):
    """Raised when there are too few tasks to bucket."""


class ErrorClass(str, Enum):
    """Primary cause of a failed episode."""

    GRAMMAR_ERROR = "GrammarError"
    MISSING_STATE = "MissingState"
    MISSING_RELATION = "MissingRelation"
    MISSING_GOAL_ACTION = "MissingGoalAction"
    WRONG_ORDER = "WrongOrder"
    ADDITIONAL_OR_MISSING_STEP = "AdditionalOrMissingStep"
    AFFORDANCE_ERROR = "AffordanceError"

    @property
    def label(self) -> str:
        """Human readable column label."""
        return ERROR_LABELS[self]


ERROR_LABELS = {
    ErrorClass.GRAMMAR_ERROR: "Grammar Error",
    ErrorClass.MISSING_STATE: "Missing State",
    ErrorClass.MISSING_RELATION: "Missing Relation",
    ErrorClass.MISSING_GOAL_ACTION: "Missing Goal Action",
    ErrorClass.WRONG_ORDER: "Wrong Order",
    ErrorClass.ADDITIONAL_OR_MISSING_STEP: "Additional/Missing Step",
    ErrorClass.AFFORDANCE_ERROR: "Affordance Error",
}

ERROR_GROUPS = (
    (
        "Goal Satisfaction Error",
        (
            ErrorClass.MISSING_STATE,
            ErrorClass.MISSING_RELATION,
            ErrorClass.MISSING_GOAL_ACTION,
        ),
    ),
    (
        "Trajectory Runtime Error",
        (
            ErrorClass.WRONG_ORDER,
            ErrorClass.ADDITIONAL_OR_MISSING_STEP,
            ErrorClass.AFFORDANCE_ERROR,
        ),
    ),
)


@dataclass(frozen=True)
class TaskSpec:
    """An instruction, its initial world and its goal predicates."""

    id: str
    instruction: str
    world: WorldState
    goals: tuple
    category: str


def task_from_dict(
    data: dict, source: str = "<task>", base_dir: str = "."
) -> TaskSpec:
    """Build a TaskSpec from its JSON form.

    A string world is a file path relative to base_dir.

    :raises TaskFileError: if the task does not validate
    """
    try:
        data = TASK_SCHEMA(data)
    except vol.Invalid as error:
        raise TaskFileError(
            f"{source}: {humanize_error(data, error)}"
        ) from error
    try:
        if isinstance(data[CONF_WORLD], str):
            world = load_world(os.path.join(base_dir, data[CONF_WORLD]))
        else:
            world = world_from_dict(data[CONF_WORLD], source)
    except (OSError, WorldFileError) as error:
        raise TaskFileError(f"{source}: {error}") from error
    goals = tuple(predicate_from_list(goal) for goal in data[CONF_GOALS])
    for index, goal in enumerate(goals):
        for obj_id in goal.object_ids():
            if obj_id not in world.by_id:
                raise TaskFileError(
                    f"{source}: data['{CONF_GOALS}'][{index}]: "
                    f"unknown object '{obj_id}'"
                )
    return TaskSpec(
        id=data[CONF_ID],
        instruction=data[CONF_INSTRUCTION],
        world=world,
        goals=goals,
        category=data[CONF_CATEGORY],
    )


def load_task(path: str) -> TaskSpec:
    """Load a task file."""
    try:
        with open(path, encoding="utf-8") as file_handle:
            data = json.load(file_handle)
    except json.JSONDecodeError as error:
        raise TaskFileError(f"{path}: {error}") from error
    return task_from_dict(data, path, os.path.dirname(path))


def load_suite(path: str) -> list:
    """Load every task of a suite directory, sorted by file name.

    A single task file is a suite of one.
    """
    if os.path.isdir(path):
        paths = sorted(glob.glob(os.path.join(path, "*.json")))
    else:
        paths = [path]
    tasks = [load_task(task_path) for task_path in paths]
    _LOGGER.debug("Loaded %d task(s) from %s", len(tasks), path)
    return tasks


def hidden_goal_objects(task: TaskSpec) -> list:
    """Return goal-referenced objects hidden in the initial world."""
    referenced = sorted(
        {obj_id for goal in task.goals for obj_id in goal.object_ids()}
    )
    return [
        obj_id
        for obj_id in referenced
        if not task.world.is_visible(obj_id)
    ]


def expected_category(task: TaskSpec, oracle_length: int) -> str:
    """Return the category a task's length and visibility call for."""
    length = "short" if oracle_length < SHORT_LIMIT else "long"
    kind = "complex" if hidden_goal_objects(task) else "simple"
    return f"{length}-{kind}"


@dataclass(frozen=True)
class TaskResult:
    """Outcome of one task."""

    task_id: str
    category: str
    success: bool
    goals: tuple
    error: Optional[ErrorClass] = None
    oracle_length: Optional[int] = None
    actions: int = 0

    def to_dict(self) -> dict:
        """Serialize for reports."""
        return {
            "task": self.task_id,
            "category": self.category,
            "success": self.success,
            "goals": list(self.goals),
            "error": None if self.error is None else self.error.value,
            "oracle_length": self.oracle_length,
            "actions": self.actions,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaskResult":
        """Deserialize a report entry."""
        return cls(
            task_id=data["task"],
            category=data["category"],
            success=data["success"],
            goals=tuple(data["goals"]),
            error=None if data["error"] is None else ErrorClass(data["error"]),
            oracle_length=data["oracle_length"],
            actions=data["actions"],
        )


def _ratio(numerator: int, denominator: int) -> Fraction:
    return Fraction(numerator, denominator) if denominator else Fraction(1)


def success_rate(results) -> Fraction:
    """Return successes over episodes."""
    results = list(results)
    return _ratio(sum(result.success for result in results), len(results))


def subgoal_success_rate(results) -> Fraction:
    """Return satisfied predicates over all predicates."""
    results = list(results)
    return _ratio(
        sum(sum(result.goals) for result in results),
        sum(len(result.goals) for result in results),
    )


def macro_subgoal_success_rate(results) -> Fraction:
    """Return the average of per-task predicate success rates."""
    results = list(results)
    if not results:
        return Fraction(1)
    return sum(
        (_ratio(sum(result.goals), len(result.goals)) for result in results),
        Fraction(0),
    ) / len(results)


@dataclass(frozen=True)
class SuiteResult:
    """Aggregated outcome of one method over a suite."""

    method: str
    tasks: tuple
    sr: Fraction
    ssr: Fraction
    ssr_macro: Fraction
    buckets: tuple = ()
    errors: dict = field(default_factory=dict)
    categories: dict = field(default_factory=dict)

    @property
    def episodes(self) -> int:
        """Return the number of episodes."""
        return len(self.tasks)

    def error_rate(self, error: ErrorClass) -> Fraction:
        """Return the share of episodes failing with error."""
        return _ratio(self.errors.get(error.value, 0), self.episodes)

    def to_dict(self) -> dict:
        """Serialize for reports; fractions are kept exact as strings."""
        return {
            "method": self.method,
            "episodes": self.episodes,
            "sr": str(self.sr),
            "ssr": str(self.ssr),
            "ssr_macro": str(self.ssr_macro),
            "sr_percent": format_percent(self.sr),
            "ssr_percent": format_percent(self.ssr),
            "errors": {
                error.value: self.errors.get(error.value, 0)
                for error in ErrorClass
            },
            "categories": {
                category: list(self.categories[category])
                for category in CATEGORIES
                if category in self.categories
            },
            "buckets": [[decile, str(ssr)] for decile, ssr in self.buckets],
            "tasks": [result.to_dict() for result in self.tasks],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SuiteResult":
        """Deserialize a report entry."""
        return cls(
            method=data["method"],
            tasks=tuple(TaskResult.from_dict(task) for task in data["tasks"]),
            sr=Fraction(data["sr"]),
            ssr=Fraction(data["ssr"]),
            ssr_macro=Fraction(data["ssr_macro"]),
            buckets=tuple(
                (decile, Fraction(ssr)) for decile, ssr in data["buckets"]
            ),
            errors={
                name: count for name, count in data["errors"].items() if count
            },
            categories={
                name: tuple(value)
                for name, value in data["categories"].items()
            },
        )


def format_percent(value: Fraction) -> str:
    """Format a ratio as a percentage with at most two decimals."""
    percent = Decimal(value.numerator * 100) / Decimal(value.denominator)
    text = str(percent.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))
    text = text.rstrip("0").rstrip(".")
    return f"{text}%"


def bucket_by_length(results, oracle_lengths) -> tuple:
    """Split results into ten equal-count buckets by oracle plan length.

    Results are sorted by (length, task id); the remainder goes to the
    front buckets.

    :param results: Task results
    :type results: list[TaskResult]
    :param oracle_lengths: Task id to oracle plan length
    :type oracle_lengths: dict
    :returns: (decile, ssr) pairs, deciles 10 to 100
    :raises TooFewTasks: with fewer than ten results
    """
    results = list(results)
    if len(results) < BUCKET_COUNT:
        raise TooFewTasks(f"{len(results)} task(s), need {BUCKET_COUNT}")
    ordered = sorted(
        results,
        key=lambda result: (oracle_lengths[result.task_id], result.task_id),
    )
    size, remainder = divmod(len(ordered), BUCKET_COUNT)
    buckets = []
    start = 0
    for index in range(BUCKET_COUNT):
        end = start + size + (1 if index < remainder else 0)
        buckets.append(
            ((index + 1) * 10, subgoal_success_rate(ordered[start:end]))
        )
        start = end
    return tuple(buckets)


def _proposals(trace: EpisodeTrace) -> list:
    """Return (action, rule, executed before) for every proposal."""
    proposals = []
    executed = []
    for event in trace.events:
        if event.ev == EV_VERDICT and event.data.get("reason") is None:
            continue
        if event.ev == EV_VERDICT:
            action = event.data.get("action")
            report = event.data.get("report") or {}
            action = action or report.get("mapped_action")
            rule = event.data["reason"]
        elif event.ev == EV_EXECUTED:
            action = event.data.get("action")
            rule = event.data.get("result")
        else:
            continue
        if action is None:
            continue
        action = PrimitiveAction.from_dict(action)
        proposals.append((action, rule, list(executed)))
        if event.ev == EV_EXECUTED and rule == RESULT_OK:
            executed.append(action)
    return proposals


def _failure_cause(trace: EpisodeTrace) -> Optional[str]:
    cause = None
    for _, rule, _ in _proposals(trace):
        if rule != RESULT_OK:
            cause = rule
    return cause


def _violates_order(proposals, oracle_plan) -> bool:
    for action, rule, executed in proposals:
        if rule not in ORDER_RULES:
            continue
        if oracle_plan is None:
            if rule == CONTAINER_CLOSED:
                return True
            continue
        if action not in oracle_plan:
            continue
        index = oracle_plan.index(action)
        needed = Counter(
            step for step in oracle_plan[:index] if step.kind in (OPEN, WALK)
        )
        done = Counter(executed)
        if any(done[step] < count for step, count in needed.items()):
            return True
    return False


def _is_relevant(action: PrimitiveAction, goal: GoalPredicate) -> bool:
    if isinstance(goal, Placed):
        kind = "PutOn" if goal.rel == ON else "PutIn"
        return action.kind == kind and action.args == (goal.obj, goal.parent)
    kind = "Open" if goal.value else "Close"
    return action.kind == kind and action.args == (goal.container,)


def classify_error(
    trace: EpisodeTrace, task: TaskSpec, oracle_plan=None
) -> ErrorClass:
    """Return the primary error class of a failed episode.

    Precedence: grammar, affordance, order, then the kind of unmet goal,
    then a step count mismatch.

    :param trace: A failed episode
    :type trace: EpisodeTrace
    :param task: The task of the episode
    :type task: TaskSpec
    :param oracle_plan: A minimal plan, when known
    :type oracle_plan: list[PrimitiveAction]
    :raises ValueError: if the trace did not fail
    """
    outcome = trace.outcome
    if outcome is None or outcome.success:
        raise ValueError("only failed traces can be classified")
    if outcome.kind is FailureKind.POLICY_GRAMMAR_ERROR:
        return ErrorClass.GRAMMAR_ERROR

    proposals = _proposals(trace)
    runtime_failure = outcome.kind not in GOAL_SATISFACTION_KINDS
    if runtime_failure and _failure_cause(trace) in AFFORDANCE_RULES:
        return ErrorClass.AFFORDANCE_ERROR
    if _violates_order(proposals, oracle_plan):
        return ErrorClass.WRONG_ORDER

    if not runtime_failure:
        unmet = [
            goal
            for goal, met in zip(task.goals, outcome.goals)
            if not met
        ]
        proposed = [action for action, _, _ in proposals]
        for goal in unmet:
            if not any(_is_relevant(action, goal) for action in proposed):
                return ErrorClass.MISSING_GOAL_ACTION
        states = sum(isinstance(goal, OpenState) for goal in unmet)
        relations = len(unmet) - states
        if unmet:
            if states >= relations:
                return ErrorClass.MISSING_STATE
            return ErrorClass.MISSING_RELATION
    return ErrorClass.ADDITIONAL_OR_MISSING_STEP


def compute_metrics(
    traces, tasks, oracle_plans=None, method: str = "full"
) -> SuiteResult:
    """Aggregate one finished trace per task.

    :param traces: Finished traces
    :type traces: list[EpisodeTrace]
    :param tasks: The suite
    :type tasks: list[TaskSpec]
    :param oracle_plans: Task id to minimal plan (or None if unreachable)
    :type oracle_plans: dict
    :raises MismatchedSuite: if traces and tasks do not pair up
    """
    traces = list(traces)
    tasks = list(tasks)
    if not tasks or len(traces) != len(tasks):
        raise MismatchedSuite(
            f"{len(traces)} trace(s) for {len(tasks)} task(s)"
        )
    by_id = {trace.task_id: trace for trace in traces}
    if len(by_id) != len(traces) or set(by_id) != {task.id for task in tasks}:
        raise MismatchedSuite("trace task ids do not match the suite")
    oracle_plans = oracle_plans or {}

    results = []
    for task in tasks:
        trace = by_id[task.id]
        outcome = trace.outcome
        if outcome is None:
            raise MismatchedSuite(f"{task.id}: trace is not finished")
        plan = oracle_plans.get(task.id)
        results.append(
            TaskResult(
                task_id=task.id,
                category=task.category,
                success=outcome.success,
                goals=outcome.goals,
                error=None
                if outcome.success
                else classify_error(trace, task, plan),
                oracle_length=None if plan is None else len(plan),
                actions=len(trace.executed_actions),
            )
        )

    lengths = {
        result.task_id: result.oracle_length
        for result in results
        if result.oracle_length is not None
    }
    buckets = ()
    if len(results) >= BUCKET_COUNT and len(lengths) == len(results):
        buckets = bucket_by_length(results, lengths)
    categories = {}
    for category in CATEGORIES:
        members = [result for result in results if result.category == category]
        if members:
            categories[category] = (
                sum(result.success for result in members),
                len(members),
            )
    errors = Counter(
        result.error.value for result in results if result.error is not None
    )
    suite = SuiteResult(
        method=method,
        tasks=tuple(results),
        sr=success_rate(results),
        ssr=subgoal_success_rate(results),
        ssr_macro=macro_subgoal_success_rate(results),
        buckets=buckets,
        errors=dict(sorted(errors.items())),
        categories=categories,
    )
    _LOGGER.info(
        "%s: SR %s, SSR %s over %d task(s)",
        method,
        format_percent(suite.sr),
        format_percent(suite.ssr),
        suite.episodes,
    )
    return suite
