"""Provide the household world simulator.

The world is a set of objects linked by In/On placement relations. Objects
placed (transitively) inside a closed container are hidden from the
agent's observation. The agent stands at a root anchor and carries at most
one object in its gripper.
"""
import json
import logging
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterator, Optional, Union

import voluptuous as vol
from voluptuous.humanize import humanize_error

_LOGGER = logging.getLogger(__name__)

GRASPABLE = "graspable"
OPENABLE = "openable"
SURFACE = "surface"
CONTAINER = "container"
FLAGS = (GRASPABLE, OPENABLE, SURFACE, CONTAINER)

IN = "In"
ON = "On"

WALK = "Walk"
GRASP = "Grasp"
PUT_ON = "PutOn"
PUT_IN = "PutIn"
OPEN = "Open"
CLOSE = "Close"
ACTION_KINDS = (WALK, GRASP, PUT_ON, PUT_IN, OPEN, CLOSE)
ACTION_ARITY = {WALK: 1, GRASP: 1, PUT_ON: 2, PUT_IN: 2, OPEN: 1, CLOSE: 1}

NOT_VISIBLE = "NotVisible"
NOT_REACHABLE = "NotReachable"
GRIPPER_OCCUPIED = "GripperOccupied"
GRIPPER_EMPTY = "GripperEmpty"
CONTAINER_CLOSED = "ContainerClosed"
WRONG_FLAG = "WrongFlag"
ALREADY_IN_STATE = "AlreadyInState"
AFFORDANCE_RULES = frozenset({GRIPPER_OCCUPIED, GRIPPER_EMPTY, WRONG_FLAG})
ENVIRONMENT_RULES = frozenset(
    {NOT_VISIBLE, NOT_REACHABLE, CONTAINER_CLOSED, ALREADY_IN_STATE}
)

PLACED = "Placed"
OPEN_STATE = "OpenState"

CONF_OBJECTS = "objects"
CONF_RELATIONS = "relations"
CONF_AGENT_AT = "agent_at"
CONF_HELD = "held"
CONF_ID = "id"
CONF_CLASS = "class"
CONF_FLAGS = "flags"
CONF_IS_OPEN = "is_open"

OBJECT_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_ID): vol.All(str, vol.Length(min=1)),
        vol.Required(CONF_CLASS): vol.All(str, vol.Length(min=1)),
        vol.Optional(CONF_FLAGS, default=[]): [vol.In(FLAGS)],
        vol.Optional(CONF_IS_OPEN): bool,
    }
)

WORLD_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_OBJECTS): [OBJECT_SCHEMA],
        vol.Optional(CONF_RELATIONS, default=[]): [
            vol.ExactSequence([str, vol.In([IN, ON]), str])
        ],
        vol.Required(CONF_AGENT_AT): str,
        vol.Optional(CONF_HELD, default=None): vol.Any(None, str),
    }
)


class ActionError(Exception):
    """Raised when a primitive action cannot be applied to a state."""

    def __init__(self, rule: str, action: "PrimitiveAction"):
        """Construct ActionError.

        :param rule: The name of the violated rule, e.g. NotVisible
        :type rule: str
        :param action: The rejected action
        :type action: PrimitiveAction
        """
        super().__init__(f"{rule}: {action}")
        self.rule = rule
        self.action = action


class UnknownObject(KeyError):
    """Raised when an object id does not resolve in a state."""


class WorldFileError(ValueError):
    """Raised when a world definition is malformed."""


@dataclass(frozen=True)
class ObjectInstance:
    """A scene object."""

    id: str
    cls: str
    flags: frozenset = frozenset()
    is_open: Optional[bool] = None

    def has(self, flag: str) -> bool:
        """Return True if the object carries flag."""
        return flag in self.flags

    def to_dict(self) -> dict:
        """Serialize the object the way world files declare it."""
        data = {
            CONF_ID: self.id,
            CONF_CLASS: self.cls,
            CONF_FLAGS: sorted(self.flags),
        }
        if self.is_open is not None:
            data[CONF_IS_OPEN] = self.is_open
        return data


@dataclass(frozen=True, order=True)
class Relation:
    """A placement of child In or On parent."""

    child: str
    rel: str
    parent: str

    def to_list(self) -> list:
        """Serialize the relation as a [child, rel, parent] triple."""
        return [self.child, self.rel, self.parent]


@dataclass(frozen=True)
class PrimitiveAction:
    """An executable action, e.g. PutIn(tape_1, drawer_1)."""

    kind: str
    args: tuple

    def __post_init__(self):
        """Check the variant and its arity."""
        if self.kind not in ACTION_ARITY:
            raise ValueError(f"unknown action kind {self.kind!r}")
        if len(self.args) != ACTION_ARITY[self.kind]:
            raise ValueError(
                f"{self.kind} takes {ACTION_ARITY[self.kind]} argument(s)"
            )

    def __str__(self) -> str:
        return f"{self.kind}({', '.join(self.args)})"

    @property
    def sort_key(self) -> tuple:
        """Canonical ordering: variant order, then ids."""
        return (ACTION_KINDS.index(self.kind), self.args)

    def to_dict(self) -> dict:
        """Serialize for traces."""
        return {"kind": self.kind, "args": list(self.args)}

    @classmethod
    def from_dict(cls, data: dict) -> "PrimitiveAction":
        """Deserialize a trace entry."""
        return cls(data["kind"], tuple(data["args"]))


def walk(target: str) -> PrimitiveAction:
    """Build Walk(target)."""
    return PrimitiveAction(WALK, (target,))


def grasp(obj: str) -> PrimitiveAction:
    """Build Grasp(obj)."""
    return PrimitiveAction(GRASP, (obj,))


def put_on(obj: str, surface: str) -> PrimitiveAction:
    """Build PutOn(obj, surface)."""
    return PrimitiveAction(PUT_ON, (obj, surface))


def put_in(obj: str, container: str) -> PrimitiveAction:
    """Build PutIn(obj, container)."""
    return PrimitiveAction(PUT_IN, (obj, container))


def open_(container: str) -> PrimitiveAction:
    """Build Open(container)."""
    return PrimitiveAction(OPEN, (container,))


def close(container: str) -> PrimitiveAction:
    """Build Close(container)."""
    return PrimitiveAction(CLOSE, (container,))


@dataclass(frozen=True)
class Embodiment:
    """Capabilities of the single-arm agent."""

    gripper_capacity: int = 1
    reach: str = "target must share agent_at anchor"

    def __post_init__(self):
        """Only a single gripper slot is supported."""
        if self.gripper_capacity != 1:
            raise ValueError("gripper_capacity is fixed at 1")


DEFAULT_EMBODIMENT = Embodiment()


@dataclass(frozen=True)
class Placed:
    """Goal: obj is In/On parent."""

    obj: str
    rel: str
    parent: str

    kind = PLACED

    def object_ids(self) -> tuple:
        """Return the ids the predicate references."""
        return (self.obj, self.parent)

    def to_list(self) -> list:
        """Serialize as it appears in task files."""
        return [PLACED, self.obj, self.rel, self.parent]

    def __str__(self) -> str:
        return f"Placed({self.obj}, {self.rel}, {self.parent})"


@dataclass(frozen=True)
class OpenState:
    """Goal: container is open (True) or closed (False)."""

    container: str
    value: bool

    kind = OPEN_STATE

    def object_ids(self) -> tuple:
        """Return the ids the predicate references."""
        return (self.container,)

    def to_list(self) -> list:
        """Serialize as it appears in task files."""
        return [OPEN_STATE, self.container, self.value]

    def __str__(self) -> str:
        return f"OpenState({self.container}, {str(self.value).lower()})"


GoalPredicate = Union[Placed, OpenState]


def predicate_from_list(data: list) -> GoalPredicate:
    """Build a goal predicate from its task file form."""
    if data[0] == PLACED:
        return Placed(data[1], data[2], data[3])
    return OpenState(data[1], bool(data[2]))


class SceneView:
    """Queries shared by full states and observations.

    Subclasses provide objects, relations, agent_at and held.
    """

    objects: tuple
    relations: frozenset
    agent_at: str
    held: Optional[str]

    @cached_property
    def by_id(self) -> dict:
        """Map id to ObjectInstance."""
        return {obj.id: obj for obj in self.objects}

    @cached_property
    def parent_of(self) -> dict:
        """Map child id to its placement relation."""
        return {relation.child: relation for relation in self.relations}

    def get(self, obj_id: str) -> ObjectInstance:
        """Return the object with obj_id or raise UnknownObject."""
        try:
            return self.by_id[obj_id]
        except KeyError:
            raise UnknownObject(obj_id) from None

    def anchor(self, obj_id: str) -> Optional[str]:
        """Return the root anchor of obj_id.

        The root anchor is the top of the placement chain. Held objects,
        and anything placed on or in them, have no anchor.
        """
        current = obj_id
        while current in self.parent_of:
            current = self.parent_of[current].parent
        if current == self.held or current not in self.by_id:
            return None
        return current

    def is_open(self, container_id: str) -> bool:
        """Return the openness of a container; non-openable ones are open."""
        obj = self.by_id.get(container_id)
        if obj is None or not obj.has(OPENABLE):
            return True
        return bool(obj.is_open)

    def has_relation(self, child: str, rel: str, parent: str) -> bool:
        """Return True if child is placed rel parent."""
        return Relation(child, rel, parent) in self.relations

    def children_of(self, parent_id: str) -> list:
        """Return ids placed directly in or on parent_id, sorted."""
        return sorted(
            relation.child
            for relation in self.relations
            if relation.parent == parent_id
        )


@dataclass(frozen=True)
class WorldState(SceneView):
    """Full simulator state. Hashable; objects are kept sorted by id."""

    objects: tuple
    relations: frozenset
    agent_at: str
    held: Optional[str] = None

    @classmethod
    def build(
        cls,
        objects,
        relations=(),
        agent_at: str = "",
        held: Optional[str] = None,
    ) -> "WorldState":
        """Build a state from any iterables of objects and relations."""
        return cls(
            objects=tuple(sorted(objects, key=lambda obj: obj.id)),
            relations=frozenset(
                rel if isinstance(rel, Relation) else Relation(*rel)
                for rel in relations
            ),
            agent_at=agent_at,
            held=held,
        )

    @cached_property
    def visible_ids(self) -> frozenset:
        """Ids not hidden inside a closed container."""
        hidden = set()
        for obj in self.objects:
            current = obj.id
            while current in self.parent_of:
                relation = self.parent_of[current]
                if relation.rel == IN and not self.is_open(relation.parent):
                    hidden.add(obj.id)
                    break
                current = relation.parent
        return frozenset(self.by_id) - hidden

    def is_visible(self, obj_id: str) -> bool:
        """Return True if obj_id exists and is not hidden."""
        return obj_id in self.visible_ids

    def to_dict(self) -> dict:
        """Serialize in world file form."""
        return {
            CONF_OBJECTS: [obj.to_dict() for obj in self.objects],
            CONF_RELATIONS: [rel.to_list() for rel in sorted(self.relations)],
            CONF_AGENT_AT: self.agent_at,
            CONF_HELD: self.held,
        }


@dataclass(frozen=True)
class Observation(SceneView):
    """What the agent perceives: the visible part of a WorldState."""

    objects: tuple
    relations: frozenset
    agent_at: str
    held: Optional[str] = None

    @property
    def visible(self) -> dict:
        """Map id to visible ObjectInstance."""
        return self.by_id

    @property
    def visible_relations(self) -> frozenset:
        """Relations between visible objects."""
        return self.relations

    def objects_of_class(self, cls: str) -> list:
        """Return visible objects of cls, sorted by id."""
        return [obj for obj in self.objects if obj.cls == cls]


def observe(state: WorldState) -> Observation:
    """Return the agent's observation of state."""
    visible = state.visible_ids
    return Observation(
        objects=tuple(obj for obj in state.objects if obj.id in visible),
        relations=frozenset(
            rel for rel in state.relations if rel.child in visible
        ),
        agent_at=state.agent_at,
        held=state.held,
    )


def _flag_violation(state: WorldState, obj_id: str, flag: str):
    obj = state.by_id.get(obj_id)
    if obj is not None and not obj.has(flag):
        return WRONG_FLAG
    return None


def _affordance_violation(
    state: WorldState, emb: Embodiment, action: PrimitiveAction
) -> Optional[str]:
    kind = action.kind
    if kind == WALK:
        return None
    if kind == GRASP:
        if state.held is not None:
            return GRIPPER_OCCUPIED
        return _flag_violation(state, action.args[0], GRASPABLE)
    if kind in (PUT_ON, PUT_IN):
        obj, target = action.args
        if state.held != obj:
            return GRIPPER_EMPTY
        flag = SURFACE if kind == PUT_ON else CONTAINER
        return _flag_violation(state, target, flag)
    # open and close need the single hand free
    if state.held is not None:
        return GRIPPER_OCCUPIED
    return _flag_violation(state, action.args[0], OPENABLE)


def _environment_violation(
    state: WorldState, action: PrimitiveAction
) -> Optional[str]:
    kind = action.kind
    target = action.args[-1]
    if not state.is_visible(target):
        return NOT_VISIBLE
    target_anchor = state.anchor(target)
    if kind == WALK:
        if target_anchor is None:
            return NOT_REACHABLE
        if target_anchor == state.agent_at:
            return ALREADY_IN_STATE
        return None
    if target_anchor != state.agent_at:
        return NOT_REACHABLE
    if kind in (PUT_ON, PUT_IN):
        if action.args[0] == target:
            return NOT_REACHABLE
        if kind == PUT_IN and not state.is_open(target):
            return CONTAINER_CLOSED
        return None
    if kind in (OPEN, CLOSE):
        obj = state.by_id[target]
        if obj.has(OPENABLE) and obj.is_open == (kind == OPEN):
            return ALREADY_IN_STATE
    return None


def affordance_allows(
    state: WorldState, emb: Embodiment, action: PrimitiveAction
) -> tuple:
    """Check the embodiment-related preconditions of action.

    :param state: The current state
    :type state: WorldState
    :param emb: The agent's embodiment
    :type emb: Embodiment
    :param action: The action to check
    :type action: PrimitiveAction
    :returns: (allowed, violated rule or None)
    :rtype: tuple
    """
    rule = _affordance_violation(state, emb, action)
    return rule is None, rule


def legal_in_environment(state: WorldState, action: PrimitiveAction) -> tuple:
    """Check visibility, reach and openness preconditions of action.

    :returns: (legal, violated rule or None)
    :rtype: tuple
    """
    rule = _environment_violation(state, action)
    return rule is None, rule


def _successor(state: WorldState, action: PrimitiveAction) -> WorldState:
    kind = action.kind
    if kind == WALK:
        return replace(state, agent_at=state.anchor(action.args[0]))
    if kind == GRASP:
        obj = action.args[0]
        return replace(
            state,
            relations=state.relations - {state.parent_of.get(obj)},
            held=obj,
        )
    if kind in (PUT_ON, PUT_IN):
        obj, target = action.args
        rel = ON if kind == PUT_ON else IN
        return replace(
            state,
            relations=state.relations | {Relation(obj, rel, target)},
            held=None,
        )
    container = action.args[0]
    objects = tuple(
        replace(obj, is_open=(kind == OPEN)) if obj.id == container else obj
        for obj in state.objects
    )
    return replace(state, objects=objects)


def apply_action(
    state: WorldState,
    action: PrimitiveAction,
    emb: Embodiment = DEFAULT_EMBODIMENT,
) -> WorldState:
    """Return the successor of state under action.

    Affordance rules are checked before environment rules; the first
    violated rule is raised. The input state is never mutated.

    :raises ActionError: naming the violated rule
    """
    rule = _affordance_violation(state, emb, action) or _environment_violation(
        state, action
    )
    if rule is not None:
        raise ActionError(rule, action)
    return _successor(state, action)


def legal_actions(
    state: WorldState, emb: Embodiment = DEFAULT_EMBODIMENT
) -> list:
    """Return every applicable action in canonical order."""
    # every action needs a visible target; all but Walk need it at hand
    ids = sorted(state.visible_ids)
    at_hand = [obj for obj in ids if state.anchor(obj) == state.agent_at]
    candidates = [walk(target) for target in ids if target not in at_hand]
    candidates += [grasp(obj) for obj in at_hand]
    if state.held is not None:
        candidates += [put_on(state.held, target) for target in at_hand]
        candidates += [put_in(state.held, target) for target in at_hand]
    candidates += [open_(target) for target in at_hand]
    candidates += [close(target) for target in at_hand]
    return [
        action
        for action in candidates
        if _affordance_violation(state, emb, action) is None
        and _environment_violation(state, action) is None
    ]


def goal_satisfied(state: SceneView, pred: GoalPredicate) -> bool:
    """Evaluate pred against state.

    :raises UnknownObject: if the predicate references a missing id
    """
    for obj_id in pred.object_ids():
        state.get(obj_id)
    if isinstance(pred, Placed):
        return state.has_relation(pred.obj, pred.rel, pred.parent)
    return state.is_open(pred.container) == pred.value


def action_effects(view: SceneView, action: PrimitiveAction) -> frozenset:
    """Return the effect literals action brings about.

    Effects are tuples: ("at", anchor), ("holding", obj),
    ("on", obj, surface), ("in", obj, container), ("open", c), ("closed", c).
    """
    kind = action.kind
    if kind == WALK:
        target_anchor = view.anchor(action.args[0])
        return frozenset() if target_anchor is None else frozenset(
            {("at", target_anchor)}
        )
    if kind == GRASP:
        return frozenset({("holding", action.args[0])})
    if kind == PUT_ON:
        return frozenset({("on",) + action.args})
    if kind == PUT_IN:
        return frozenset({("in",) + action.args})
    if kind == OPEN:
        return frozenset({("open", action.args[0])})
    return frozenset({("closed", action.args[0])})


def effect_holds(view: SceneView, effect: tuple) -> bool:
    """Return True if an effect literal already holds in view."""
    name = effect[0]
    if name == "at":
        return view.agent_at == effect[1]
    if name == "holding":
        return view.held == effect[1]
    if name == "on":
        return view.has_relation(effect[1], ON, effect[2])
    if name == "in":
        return view.has_relation(effect[1], IN, effect[2])
    if name == "open":
        return effect[1] in view.by_id and view.is_open(effect[1])
    if name == "closed":
        return effect[1] in view.by_id and not view.is_open(effect[1])
    return False


def _check_invariants(state: WorldState) -> Iterator[str]:
    seen = set()
    for index, obj in enumerate(state.objects):
        path = f"data['{CONF_OBJECTS}'][{index}]"
        if obj.id in seen:
            yield f"{path}['{CONF_ID}']: duplicate id '{obj.id}'"
        seen.add(obj.id)
        if obj.has(OPENABLE) and not obj.has(CONTAINER):
            yield f"{path}['{CONF_FLAGS}']: openable requires container"
        if obj.has(OPENABLE) != (obj.is_open is not None):
            yield f"{path}['{CONF_IS_OPEN}']: defined iff openable"

    children = set()
    for relation in sorted(state.relations):
        path = f"data['{CONF_RELATIONS}'] {relation.to_list()}"
        for obj_id in (relation.child, relation.parent):
            if obj_id not in state.by_id:
                yield f"{path}: unknown id '{obj_id}'"
        if relation.child in children:
            yield f"{path}: '{relation.child}' placed twice"
        children.add(relation.child)
        if relation.child == state.held:
            yield f"{path}: '{relation.child}' is held"
        parent = state.by_id.get(relation.parent)
        flag = CONTAINER if relation.rel == IN else SURFACE
        if parent is not None and not parent.has(flag):
            yield f"{path}: '{relation.parent}' is not a {flag}"

    for obj in state.objects:
        chain = {obj.id}
        current = obj.id
        while current in state.parent_of:
            current = state.parent_of[current].parent
            if current in chain:
                yield f"data['{CONF_RELATIONS}']: cycle through '{obj.id}'"
                break
            chain.add(current)
        if (
            obj.has(GRASPABLE)
            and obj.id not in state.parent_of
            and obj.id != state.held
        ):
            yield f"data['{CONF_OBJECTS}']: '{obj.id}' is neither placed nor held"

    if state.held is not None:
        held = state.by_id.get(state.held)
        if held is None or not held.has(GRASPABLE):
            yield f"data['{CONF_HELD}']: '{state.held}' is not graspable"
    if (
        state.agent_at not in state.by_id
        or state.agent_at in state.parent_of
        or state.agent_at == state.held
    ):
        yield f"data['{CONF_AGENT_AT}']: '{state.agent_at}' is not a root object"


def validate_state(state: WorldState) -> list:
    """Return the invariant violations of state as path-qualified messages."""
    return list(_check_invariants(state))


def world_from_dict(data: dict, source: str = "<world>") -> WorldState:
    """Build a WorldState from its JSON form.

    :param data: The decoded world definition
    :type data: dict
    :param source: A file name used in error messages
    :type source: str
    :raises WorldFileError: if the definition is malformed
    """
    try:
        data = WORLD_SCHEMA(data)
    except vol.Invalid as error:
        raise WorldFileError(
            f"{source}: {humanize_error(data, error)}"
        ) from error
    state = WorldState.build(
        objects=[
            ObjectInstance(
                id=obj[CONF_ID],
                cls=obj[CONF_CLASS],
                flags=frozenset(obj[CONF_FLAGS]),
                is_open=obj.get(CONF_IS_OPEN),
            )
            for obj in data[CONF_OBJECTS]
        ],
        relations=[Relation(*rel) for rel in data[CONF_RELATIONS]],
        agent_at=data[CONF_AGENT_AT],
        held=data[CONF_HELD],
    )
    problems = validate_state(state)
    if problems:
        raise WorldFileError(f"{source}: {problems[0]}")
    return state


def load_world(path: str) -> WorldState:
    """Load and validate a world file."""
    _LOGGER.debug("Loading world %s", path)
    try:
        with open(path, encoding="utf-8") as file_handle:
            data = json.load(file_handle)
    except json.JSONDecodeError as error:
        raise WorldFileError(f"{path}: {error}") from error
    return world_from_dict(data, path)


