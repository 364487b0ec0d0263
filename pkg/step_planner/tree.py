"""Provide the SubgoalTree class."""
import copy
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .world import PrimitiveAction

_LOGGER = logging.getLogger(__name__)

NEXT_SIBLING = "NextSibling"
RETURN_TO_PARENT_NEXT = "ReturnToParentNext"
ROOT_COMPLETE = "RootComplete"


class TreeError(Exception):
    """Base class for subgoal tree errors."""


class EmptyGoal(TreeError):
    """Raised when a tree is created from an empty instruction."""


class UnknownParent(TreeError):
    """Raised when a child is added under a missing node."""


class ParentIsLeaf(TreeError):
    """Raised when a child is added under a leaf."""


class UnknownNode(TreeError):
    """Raised when a node id does not resolve."""


class CursorNotTerminal(TreeError):
    """Raised when the cursor is advanced from an unfinished node."""


class ReplanAtRoot(TreeError):
    """Raised when the root itself is asked to replan."""


class NodeStatus(str, Enum):
    """Lifecycle of a subgoal node."""

    OPEN = "Open"
    EXPANDING = "Expanding"
    LEAF = "Leaf"
    DONE = "Done"
    FAILED = "Failed"


@dataclass
class SubgoalNode:
    """A node of the subgoal tree.

    An executed leaf ends in status DONE and keeps its action.
    """

    node_id: str
    text: str
    parent: Optional[str]
    depth: int
    sibling_index: int
    children: list = field(default_factory=list)
    status: NodeStatus = NodeStatus.OPEN
    action: Optional[PrimitiveAction] = None
    siblings_exhausted: bool = False
    replans: int = 0

    @property
    def executed(self) -> bool:
        """Return True for a leaf whose action was applied."""
        return self.status is NodeStatus.DONE and self.action is not None

    def to_dict(self) -> dict:
        """Serialize for tree snapshots."""
        return {
            "id": self.node_id,
            "text": self.text,
            "parent": self.parent,
            "status": self.status.value,
            "sibling_index": self.sibling_index,
            "depth": self.depth,
            "action": None if self.action is None else self.action.to_dict(),
        }


@dataclass(frozen=True)
class CursorMove:
    """Result of advance_cursor.

    node_id is the node whose next child slot is requested; slot is the
    sibling index that slot will take.
    """

    kind: str
    node_id: str
    slot: Optional[int] = None


class SubgoalTree:
    """The subgoal tree built by one episode.

    The cursor references the node currently being decomposed (the focus).
    Failed subtrees are moved to pruned so that the tree stays connected.
    """

    def __init__(self, goal_text: str):
        """Construct a tree holding the instruction as its root.

        :param goal_text: The instruction
        :type goal_text: str
        :raises EmptyGoal: if goal_text is blank
        """
        if not goal_text or not goal_text.strip():
            raise EmptyGoal("goal text must not be empty")
        self._counter = 0
        self.nodes = {}
        self.pruned = []
        self.root = self._new_node(goal_text.strip(), None, 0, 0)
        self.cursor = self.root

    def _new_node(
        self, text: str, parent: Optional[str], depth: int, sibling_index: int
    ) -> str:
        node_id = f"n{self._counter}"
        self._counter += 1
        self.nodes[node_id] = SubgoalNode(
            node_id=node_id,
            text=text,
            parent=parent,
            depth=depth,
            sibling_index=sibling_index,
        )
        return node_id

    def node(self, node_id: str) -> SubgoalNode:
        """Return the node with node_id or raise UnknownNode."""
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    @property
    def root_node(self) -> SubgoalNode:
        """Return the root node."""
        return self.nodes[self.root]

    def add_child(self, parent_id: str, text: str) -> str:
        """Append a new Open child under parent_id.

        The child becomes the cursor while it is evaluated.

        :returns: the new node id
        :raises UnknownParent: if parent_id does not exist
        :raises ParentIsLeaf: if parent_id is a leaf
        """
        parent = self.nodes.get(parent_id)
        if parent is None:
            raise UnknownParent(parent_id)
        if parent.status is NodeStatus.LEAF or parent.executed:
            raise ParentIsLeaf(parent_id)
        node_id = self._new_node(
            text, parent_id, parent.depth + 1, len(parent.children)
        )
        parent.children.append(node_id)
        parent.status = NodeStatus.EXPANDING
        self.cursor = node_id
        return node_id

    def left_sibling(self, node_id: str) -> Optional[SubgoalNode]:
        """Return the previous node at the same level, if any."""
        node = self.node(node_id)
        if node.parent is None or node.sibling_index == 0:
            return None
        parent = self.nodes[node.parent]
        return self.nodes[parent.children[node.sibling_index - 1]]

    def done_children(self, node_id: str) -> list:
        """Return the Done children of node_id in sibling order."""
        return [
            self.nodes[child]
            for child in self.node(node_id).children
            if self.nodes[child].status is NodeStatus.DONE
        ]

    def mark_leaf(self, node_id: str, action: PrimitiveAction):
        """Record the mapped action of a node about to execute."""
        node = self.node(node_id)
        node.status = NodeStatus.LEAF
        node.action = action

    def mark_done(self, node_id: str):
        """Mark a node Done."""
        self.node(node_id).status = NodeStatus.DONE

    def advance_cursor(self) -> CursorMove:
        """Move the cursor past a finished node.

        Climbs while the parent level is exhausted, marking each completed
        parent Done.

        :raises CursorNotTerminal: if the cursor node is not Done
        """
        node = self.node(self.cursor)
        if node.status is not NodeStatus.DONE:
            raise CursorNotTerminal(node.node_id)
        climbed = False
        while node.parent is not None:
            parent = self.nodes[node.parent]
            if not parent.siblings_exhausted:
                self.cursor = parent.node_id
                kind = RETURN_TO_PARENT_NEXT if climbed else NEXT_SIBLING
                return CursorMove(kind, parent.node_id, len(parent.children))
            if any(
                self.nodes[child].status is not NodeStatus.DONE
                for child in parent.children
            ):
                raise CursorNotTerminal(parent.node_id)
            parent.status = NodeStatus.DONE
            node = parent
            climbed = True
        self.cursor = node.node_id
        return CursorMove(ROOT_COMPLETE, node.node_id)

    def close_level(self, node_id: str) -> Optional[CursorMove]:
        """Record that node_id will get no further children.

        :returns: the resulting cursor move, or None when a non-root node
            ended up with no children at all (an empty decomposition)
        """
        node = self.node(node_id)
        node.siblings_exhausted = True
        if node.children:
            self.cursor = node.children[-1]
            return self.advance_cursor()
        if node.parent is None:
            node.status = NodeStatus.DONE
            self.cursor = node_id
            return CursorMove(ROOT_COMPLETE, node_id)
        return None

    def subtree(self, node_id: str) -> list:
        """Return node_id and its descendants in pre-order."""
        ordered = []
        stack = [node_id]
        while stack:
            current = stack.pop()
            ordered.append(current)
            stack.extend(reversed(self.nodes[current].children))
        return ordered

    def replan_reset(self, node_id: str) -> str:
        """Prune a failed node and hand control back to its parent.

        :returns: the parent id, which becomes the cursor
        :raises ReplanAtRoot: if node_id is the root
        """
        node = self.node(node_id)
        if node.parent is None:
            raise ReplanAtRoot(node_id)
        parent = self.nodes[node.parent]
        for pruned_id in self.subtree(node_id):
            pruned = self.nodes.pop(pruned_id)
            pruned.status = NodeStatus.FAILED
            self.pruned.append(pruned)
        parent.children.remove(node_id)
        for index, child in enumerate(parent.children):
            self.nodes[child].sibling_index = index
        parent.siblings_exhausted = False
        parent.status = (
            NodeStatus.EXPANDING if parent.children else NodeStatus.OPEN
        )
        parent.replans += 1
        self.cursor = parent.node_id
        _LOGGER.debug(
            "Pruned %s under %s (replans=%d)",
            node_id,
            parent.node_id,
            parent.replans,
        )
        return parent.node_id

    def executed_leaves(self) -> list:
        """Return executed leaf nodes in depth-first sibling order."""
        return [
            self.nodes[node_id]
            for node_id in self.subtree(self.root)
            if self.nodes[node_id].executed
        ]

    def leaf_sequence(self) -> list:
        """Return the actions of executed leaves, left to right."""
        return [node.action for node in self.executed_leaves()]

    def snapshot(self) -> dict:
        """Return a deep-copied JSON form of the tree."""
        return copy.deepcopy(
            {
                "root": self.root,
                "cursor": self.cursor,
                "nodes": [
                    self.nodes[node_id].to_dict()
                    for node_id in self.subtree(self.root)
                ],
            }
        )
