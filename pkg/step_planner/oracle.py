"""Provide the brute force oracle planner.

The oracle sees the full state, hidden objects included, and searches for
a shortest plan by iterative deepening over legal_actions.
"""
import logging
from typing import Optional

from .const import DEFAULT_ORACLE_DEPTH
from .world import (
    DEFAULT_EMBODIMENT,
    WALK,
    Embodiment,
    WorldState,
    apply_action,
    goal_satisfied,
    legal_actions,
)

_LOGGER = logging.getLogger(__name__)


def _goals_hold(state: WorldState, goals) -> bool:
    return all(goal_satisfied(state, goal) for goal in goals)


def _successors(state: WorldState, emb: Embodiment) -> list:
    """Return (action, successor) pairs, one per distinct successor.

    Walks reaching the same anchor are merged into the Walk naming it.
    """
    chosen = {}
    for action in legal_actions(state, emb):
        successor = apply_action(state, action, emb)
        if successor not in chosen or (
            action.kind == WALK and action.args[0] == successor.agent_at
        ):
            chosen[successor] = action
    return [(action, successor) for successor, action in chosen.items()]


def _depth_limited(
    state: WorldState,
    goals,
    emb: Embodiment,
    remaining: int,
    best: dict,
    path: list,
) -> Optional[list]:
    """Search below state with at most remaining actions.

    best maps a state to the largest budget it was already searched with.
    """
    if _goals_hold(state, goals):
        return list(path)
    if remaining == 0 or best.get(state, -1) >= remaining:
        return None
    best[state] = remaining
    for action, successor in _successors(state, emb):
        path.append(action)
        plan = _depth_limited(successor, goals, emb, remaining - 1, best, path)
        path.pop()
        if plan is not None:
            return plan
    return None


def oracle_search(
    task,
    depth_limit: int = DEFAULT_ORACLE_DEPTH,
    embodiment: Embodiment = DEFAULT_EMBODIMENT,
) -> Optional[list]:
    """Return a shortest plan satisfying every goal of task.

    Ties are broken by the canonical action order.

    :param task: The task to solve
    :type task: TaskSpec
    :param depth_limit: The longest plan considered
    :type depth_limit: int
    :returns: the plan, [] if the goals already hold, None if no plan
        exists within depth_limit
    :rtype: list[PrimitiveAction] or None
    """
    goals = tuple(task.goals)
    for limit in range(depth_limit + 1):
        plan = _depth_limited(task.world, goals, embodiment, limit, {}, [])
        if plan is not None:
            _LOGGER.debug("%s: oracle plan of length %d", task.id, len(plan))
            return plan
    _LOGGER.info("%s: no plan within %d step(s)", task.id, depth_limit)
    return None
