"""Fixtures and helpers for tests."""
import json
import logging
import os

import pytest

from step_planner.const import DATA_DIR, DEFAULT_SUITE
from step_planner.decompositionpolicy import DecompositionPolicy
from step_planner.evaluation import load_suite, load_task
from step_planner.planner import load_trace
from step_planner.world import (
    CONTAINER,
    GRASPABLE,
    OPENABLE,
    SURFACE,
    ActionError,
    ObjectInstance,
    WorldState,
    apply_action,
    load_world,
)

TESTS_DIR = os.path.dirname(__file__)
FIXTURES_DIR = os.path.join(TESTS_DIR, "fixtures")


def task_path(task_id: str) -> str:
    """Return the path of a bundled task file."""
    return os.path.join(DEFAULT_SUITE, f"{task_id}.json")


def fixture_path(file_name: str) -> str:
    """Return the path of a trace fixture."""
    return os.path.join(FIXTURES_DIR, f"{file_name}.trace.jsonl")


# Fixtures for the bundled worlds and tasks
@pytest.fixture
def kitchen():
    """Return the bundled kitchen world."""
    return load_world(os.path.join(DATA_DIR, "worlds", "kitchen.json"))


@pytest.fixture
def workshop():
    """Return the bundled workshop world."""
    return load_world(os.path.join(DATA_DIR, "worlds", "workshop.json"))


@pytest.fixture
def office():
    """Return the bundled office world."""
    return load_world(os.path.join(DATA_DIR, "worlds", "office.json"))


@pytest.fixture
def world(which_world, request):
    """Fixture for getting a world.

    :param which_world identifies the world fixture
    :type which_world str
    :returns the requested world
    :rtype WorldState
    """
    return request.getfixturevalue(which_world)


@pytest.fixture(scope="session")
def suite():
    """Return the bundled task suite."""
    return load_suite(DEFAULT_SUITE)


@pytest.fixture
def task(task_id):
    """Return a bundled task by id."""
    return load_task(task_path(task_id))


@pytest.fixture
def scripted_policy():
    """Fixture for the scripted policy."""
    return DecompositionPolicy.get_instance("scripted")


@pytest.fixture
def tiny_world():
    """Return a one-room world with a closed box holding a ball."""
    return WorldState.build(
        objects=[
            ObjectInstance("table_1", "table", frozenset({SURFACE})),
            ObjectInstance("shelf_1", "shelf", frozenset({SURFACE})),
            ObjectInstance(
                "box_1",
                "box",
                frozenset({CONTAINER, OPENABLE}),
                is_open=False,
            ),
            ObjectInstance("ball_1", "ball", frozenset({GRASPABLE})),
            ObjectInstance("cup_1", "cup", frozenset({GRASPABLE})),
        ],
        relations=[
            ("box_1", "On", "table_1"),
            ("ball_1", "In", "box_1"),
            ("cup_1", "On", "table_1"),
        ],
        agent_at="table_1",
    )


@pytest.fixture()
def expected_data(file_name):
    """Return content of tests/{file_name}.expected.json.

    :param file_name: The base name of the file
    :type file_name: str
    """
    with open(
        os.path.join(TESTS_DIR, f"{file_name}.expected.json"),
        encoding="utf-8",
    ) as file_handle:
        return json.load(file_handle)


@pytest.fixture()
def trace_fixture(file_name):
    """Return the trace stored in tests/fixtures/{file_name}.trace.jsonl."""
    return load_trace(fixture_path(file_name))


@pytest.fixture(autouse=True)
def logger():
    """Provide autouse fixture for logger."""
    return logging.getLogger(__name__)


@pytest.helpers.register
def replay(state, actions):
    """Apply actions in order and return the final state.

    :param state: The initial state
    :type state: WorldState
    :param actions: The actions to apply
    :type actions: list[PrimitiveAction]
    """
    for action in actions:
        state = apply_action(state, action)
    return state


@pytest.helpers.register
def assert_cumulative_effects(trace, task):
    """Assert the executed leaves explain the episode's final state.

    :param trace: A finished trace
    :type trace: EpisodeTrace
    :param task: The task of the trace
    :type task: TaskSpec
    """
    assert trace.final_state is not None
    assert (
        pytest.helpers.replay(task.world, trace.executed_actions)
        == trace.final_state
    )
    tree = trace.tree
    if tree is not None and not any(node.action for node in tree.pruned):
        assert tree.leaf_sequence() == trace.executed_actions


@pytest.helpers.register
def assert_rejected(state, action, rule):
    """Assert action is rejected in state with rule.

    :param state: The state to apply action to
    :type state: WorldState
    :param action: The action to check
    :type action: PrimitiveAction
    :param rule: The rule name expected
    :type rule: str
    """
    with pytest.raises(ActionError) as error:
        apply_action(state, action)
    assert error.value.rule == rule
