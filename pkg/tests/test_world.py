"""Test the household simulator."""
import itertools
import random

import pytest

from step_planner.world import (
    ACTION_ARITY,
    ALREADY_IN_STATE,
    CONTAINER_CLOSED,
    GRIPPER_EMPTY,
    GRIPPER_OCCUPIED,
    NOT_REACHABLE,
    NOT_VISIBLE,
    WRONG_FLAG,
    ActionError,
    Embodiment,
    OpenState,
    Placed,
    PrimitiveAction,
    UnknownObject,
    WorldFileError,
    affordance_allows,
    apply_action,
    close,
    goal_satisfied,
    grasp,
    legal_actions,
    legal_in_environment,
    observe,
    open_,
    put_in,
    put_on,
    validate_state,
    walk,
    world_from_dict,
)


def all_actions(state):
    """Return every well-formed action over the ids of state."""
    ids = sorted(state.by_id)
    actions = []
    for kind, arity in ACTION_ARITY.items():
        for args in itertools.product(ids, repeat=arity):
            actions.append(PrimitiveAction(kind, args))
    return actions


def is_applicable(state, action):
    """Return True if apply_action accepts action."""
    try:
        apply_action(state, action)
    except ActionError:
        return False
    return True


class TestPrimitiveAction:
    """Test PrimitiveAction."""

    def test_str(self):
        """Test the display form."""
        assert str(put_in("tape_1", "drawer_1")) == "PutIn(tape_1, drawer_1)"
        assert str(walk("table_1")) == "Walk(table_1)"

    @pytest.mark.parametrize(
        "kind,args",
        [
            ("Jump", ("table_1",)),
            ("Walk", ("a", "b")),
            ("PutOn", ("cup_1",)),
        ],
    )
    def test_rejects_malformed(self, kind, args):
        """Test unknown kinds and wrong arities are rejected."""
        with pytest.raises(ValueError):
            PrimitiveAction(kind, args)

    def test_dict_form(self):
        """Test the trace form rebuilds the same action."""
        action = put_on("cup_1", "shelf_1")
        assert action.to_dict() == {"kind": "PutOn", "args": ["cup_1", "shelf_1"]}
        assert PrimitiveAction.from_dict(action.to_dict()) == action

    def test_embodiment_has_one_gripper(self):
        """Test only a single gripper slot is supported."""
        with pytest.raises(ValueError):
            Embodiment(gripper_capacity=2)


class TestApplyAction:
    """Test apply_action against each rule."""

    def test_walk_moves_to_anchor(self, tiny_world):
        """Test Walk moves the agent to the target's root anchor."""
        state = apply_action(tiny_world, walk("shelf_1"))
        assert state.agent_at == "shelf_1"
        assert tiny_world.agent_at == "table_1"

    def test_open_reveals_contents(self, tiny_world):
        """Test opening a container makes its contents visible."""
        assert not tiny_world.is_visible("ball_1")
        state = apply_action(tiny_world, open_("box_1"))
        assert state.is_visible("ball_1")
        assert state.is_open("box_1")

    def test_grasp_and_put(self, tiny_world):
        """Test grasping removes the placement and putting restores one."""
        state = apply_action(tiny_world, grasp("cup_1"))
        assert state.held == "cup_1"
        assert state.anchor("cup_1") is None
        state = apply_action(state, walk("shelf_1"))
        state = apply_action(state, put_on("cup_1", "shelf_1"))
        assert state.held is None
        assert state.has_relation("cup_1", "On", "shelf_1")

    @pytest.mark.parametrize(
        "setup,action,rule",
        [
            ([], grasp("ball_1"), NOT_VISIBLE),
            ([grasp("cup_1")], put_on("cup_1", "shelf_1"), NOT_REACHABLE),
            ([grasp("cup_1")], put_in("cup_1", "box_1"), CONTAINER_CLOSED),
            ([grasp("cup_1")], open_("box_1"), GRIPPER_OCCUPIED),
            ([open_("box_1"), grasp("cup_1")], grasp("ball_1"), GRIPPER_OCCUPIED),
            ([], put_on("cup_1", "table_1"), GRIPPER_EMPTY),
            ([], grasp("table_1"), WRONG_FLAG),
            ([grasp("cup_1")], put_on("cup_1", "box_1"), WRONG_FLAG),
            ([], walk("cup_1"), ALREADY_IN_STATE),
            ([open_("box_1")], open_("box_1"), ALREADY_IN_STATE),
            ([], close("box_1"), ALREADY_IN_STATE),
            ([grasp("cup_1")], walk("cup_1"), NOT_REACHABLE),
            ([walk("shelf_1")], grasp("cup_1"), NOT_REACHABLE),
        ],
    )
    def test_rejections(self, tiny_world, setup, action, rule):
        """Test each rule rejects the action with its name."""
        state = pytest.helpers.replay(tiny_world, setup)
        pytest.helpers.assert_rejected(state, action, rule)

    def test_affordance_checked_first(self, tiny_world):
        """Test an affordance violation wins over an environment one."""
        state = apply_action(tiny_world, walk("shelf_1"))
        # GripperEmpty and NotReachable both apply
        pytest.helpers.assert_rejected(
            state, put_on("cup_1", "table_1"), GRIPPER_EMPTY
        )
        assert affordance_allows(state, Embodiment(), put_on("cup_1", "table_1")) == (
            False,
            GRIPPER_EMPTY,
        )

    def test_environment_checks(self, tiny_world):
        """Test legal_in_environment reports the violated rule."""
        assert legal_in_environment(tiny_world, grasp("ball_1")) == (
            False,
            NOT_VISIBLE,
        )
        assert legal_in_environment(tiny_world, grasp("cup_1")) == (True, None)


class TestLegalActions:
    """Test legal_actions."""

    def test_tiny_world(self, tiny_world):
        """Test the legal actions of the tiny world."""
        assert legal_actions(tiny_world) == [
            walk("shelf_1"),
            grasp("cup_1"),
            open_("box_1"),
        ]

    def test_canonical_order(self, kitchen):
        """Test actions come sorted by variant, then ids."""
        actions = legal_actions(kitchen)
        assert actions == sorted(actions, key=lambda action: action.sort_key)

    @pytest.mark.parametrize("which_world", ["kitchen", "workshop", "office"])
    @pytest.mark.parametrize("seed", range(5))
    def test_partition_on_random_walks(self, world, seed):
        """Test legal_actions is exactly the set apply_action accepts."""
        rng = random.Random(seed)
        state = world
        for _ in range(15):
            legal = set(legal_actions(state))
            for action in all_actions(state):
                assert (action in legal) == is_applicable(state, action)
            assert validate_state(state) == []
            state = apply_action(state, rng.choice(sorted(legal, key=str)))

    def test_reversible_pairs(self, tiny_world):
        """Test open/close and grasp/put back restore the state."""
        opened = apply_action(tiny_world, open_("box_1"))
        assert apply_action(opened, close("box_1")) == tiny_world
        held = apply_action(tiny_world, grasp("cup_1"))
        assert apply_action(held, put_on("cup_1", "table_1")) == tiny_world


class TestObservation:
    """Test observe."""

    def test_hidden_objects(self, kitchen):
        """Test objects in closed containers are not observed."""
        observation = observe(kitchen)
        for hidden in ("apple_1", "milk_1", "bread_1"):
            assert hidden not in observation.by_id
            assert not kitchen.is_visible(hidden)
        assert "bowl_1" in observation.by_id
        assert observation.agent_at == "counter_1"

    def test_observation_relations(self, kitchen):
        """Test only relations of visible children are observed."""
        observation = observe(kitchen)
        assert observation.has_relation("mug_1", "On", "counter_1")
        assert not observation.has_relation("apple_1", "In", "cabinet_1")


class TestGoals:
    """Test goal predicates."""

    def test_placed(self, tiny_world):
        """Test Placed against the state's relations."""
        assert goal_satisfied(tiny_world, Placed("cup_1", "On", "table_1"))
        assert not goal_satisfied(tiny_world, Placed("cup_1", "On", "shelf_1"))

    def test_open_state(self, tiny_world):
        """Test OpenState against the container's openness."""
        assert goal_satisfied(tiny_world, OpenState("box_1", False))
        assert not goal_satisfied(tiny_world, OpenState("box_1", True))

    def test_unknown_object(self, tiny_world):
        """Test a predicate over a missing id raises UnknownObject."""
        with pytest.raises(UnknownObject):
            goal_satisfied(tiny_world, Placed("sock_1", "On", "table_1"))


class TestWorldFiles:
    """Test world loading and validation."""

    @pytest.mark.parametrize("which_world", ["kitchen", "workshop", "office"])
    def test_bundled_worlds_validate(self, world):
        """Test the bundled worlds hold every invariant."""
        assert validate_state(world) == []

    def test_round_trip(self, kitchen):
        """Test a world survives its file form."""
        assert world_from_dict(kitchen.to_dict()) == kitchen

    @pytest.mark.parametrize(
        "change,message",
        [
            (
                lambda data: data["objects"][0].update(flags=["sticky"]),
                "data['objects'][0]['flags']",
            ),
            (
                lambda data: data["objects"][2].update(flags=["openable"]),
                "openable requires container",
            ),
            (
                lambda data: data["relations"].append(["cup_1", "On", "shelf_1"]),
                "placed twice",
            ),
            (
                lambda data: data["relations"].append(["cup_1", "In", "sock_1"]),
                "unknown id 'sock_1'",
            ),
            (
                lambda data: data.update(agent_at="cup_1"),
                "not a root object",
            ),
            (
                lambda data: data["relations"].remove(["cup_1", "On", "table_1"]),
                "neither placed nor held",
            ),
        ],
    )
    def test_invalid_worlds(self, tiny_world, change, message):
        """Test invalid worlds are rejected with a path-qualified message."""
        data = tiny_world.to_dict()
        change(data)
        with pytest.raises(WorldFileError) as error:
            world_from_dict(data, "tiny.json")
        assert message in str(error.value)
        assert "tiny.json" in str(error.value)
