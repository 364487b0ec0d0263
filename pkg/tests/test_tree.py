"""Test the SubgoalTree class."""
import pytest

from step_planner.tree import (
    NEXT_SIBLING,
    RETURN_TO_PARENT_NEXT,
    ROOT_COMPLETE,
    CursorNotTerminal,
    EmptyGoal,
    NodeStatus,
    ParentIsLeaf,
    ReplanAtRoot,
    SubgoalTree,
    UnknownNode,
    UnknownParent,
)
from step_planner.world import grasp, walk


def execute(tree, node_id, action):
    """Mark node_id as an executed leaf and advance the cursor."""
    tree.mark_leaf(node_id, action)
    tree.mark_done(node_id)
    return tree.advance_cursor()


class TestSubgoalTree:
    """Test SubgoalTree."""

    @pytest.mark.parametrize("goal", ["", "   "])
    def test_empty_goal(self, goal):
        """Test a blank instruction is rejected."""
        with pytest.raises(EmptyGoal):
            SubgoalTree(goal)

    def test_new_tree(self):
        """Test a fresh tree holds the root at the cursor."""
        tree = SubgoalTree("store tools in drawer")
        assert tree.root == "n0"
        assert tree.cursor == "n0"
        assert tree.root_node.status is NodeStatus.OPEN
        assert tree.root_node.depth == 0

    def test_add_child(self):
        """Test children get depth, sibling index and the cursor."""
        tree = SubgoalTree("goal")
        first = tree.add_child(tree.root, "first")
        assert tree.cursor == first
        assert tree.root_node.status is NodeStatus.EXPANDING
        node = tree.node(first)
        assert (node.depth, node.sibling_index, node.parent) == (1, 0, "n0")
        grandchild = tree.add_child(first, "deeper")
        assert tree.node(grandchild).depth == 2
        assert tree.left_sibling(first) is None

    def test_add_child_errors(self):
        """Test children cannot go under missing nodes or leaves."""
        tree = SubgoalTree("goal")
        with pytest.raises(UnknownParent):
            tree.add_child("n42", "text")
        child = tree.add_child(tree.root, "walk to table")
        tree.mark_leaf(child, walk("table_1"))
        with pytest.raises(ParentIsLeaf):
            tree.add_child(child, "text")
        with pytest.raises(UnknownNode):
            tree.node("n42")

    def test_advance_needs_done_cursor(self):
        """Test the cursor only advances past a Done node."""
        tree = SubgoalTree("goal")
        tree.add_child(tree.root, "walk to table")
        with pytest.raises(CursorNotTerminal):
            tree.advance_cursor()

    def test_cursor_walk(self):
        """Test the cursor moves over siblings and climbs finished levels."""
        tree = SubgoalTree("goal")
        sub = tree.add_child(tree.root, "fetch cup")
        leaf = tree.add_child(sub, "walk to table")
        move = execute(tree, leaf, walk("table_1"))
        assert (move.kind, move.node_id, move.slot) == (NEXT_SIBLING, sub, 1)
        assert tree.cursor == sub

        second = tree.add_child(sub, "grasp cup")
        assert tree.left_sibling(second).node_id == leaf
        execute(tree, second, grasp("cup_1"))
        tree.node(sub).siblings_exhausted = True
        tree.cursor = second
        move = tree.advance_cursor()
        assert move.kind == RETURN_TO_PARENT_NEXT
        assert move.node_id == tree.root
        assert tree.node(sub).status is NodeStatus.DONE

        move = tree.close_level(tree.root)
        assert move.kind == ROOT_COMPLETE
        assert tree.root_node.status is NodeStatus.DONE
        assert tree.leaf_sequence() == [walk("table_1"), grasp("cup_1")]

    def test_close_level_without_children(self):
        """Test closing an empty level."""
        tree = SubgoalTree("goal")
        child = tree.add_child(tree.root, "fetch cup")
        assert tree.close_level(child) is None
        empty = SubgoalTree("goal")
        assert empty.close_level(empty.root).kind == ROOT_COMPLETE
        assert empty.root_node.status is NodeStatus.DONE

    def test_replan_reset(self):
        """Test a failed subtree is pruned and the parent reopened."""
        tree = SubgoalTree("goal")
        keep = tree.add_child(tree.root, "walk to table")
        execute(tree, keep, walk("table_1"))
        failed = tree.add_child(tree.root, "fetch cup")
        doomed = tree.add_child(failed, "grasp cup")
        tree.node(tree.root).siblings_exhausted = True

        parent = tree.replan_reset(failed)
        assert parent == tree.root
        assert tree.cursor == tree.root
        assert failed not in tree.nodes and doomed not in tree.nodes
        assert [node.node_id for node in tree.pruned] == [failed, doomed]
        assert all(node.status is NodeStatus.FAILED for node in tree.pruned)
        assert tree.root_node.children == [keep]
        assert tree.root_node.replans == 1
        assert not tree.root_node.siblings_exhausted

        again = tree.add_child(tree.root, "grasp cup")
        assert tree.node(again).sibling_index == 1

    def test_replan_reindexes_siblings(self):
        """Test sibling indices stay dense after pruning."""
        tree = SubgoalTree("goal")
        first = tree.add_child(tree.root, "a")
        tree.cursor = tree.root
        second = tree.add_child(tree.root, "b")
        tree.replan_reset(first)
        assert tree.node(second).sibling_index == 0

    def test_replan_at_root(self):
        """Test the root cannot replan."""
        tree = SubgoalTree("goal")
        with pytest.raises(ReplanAtRoot):
            tree.replan_reset(tree.root)

    def test_snapshot_is_a_copy(self):
        """Test snapshots do not change with the tree."""
        tree = SubgoalTree("goal")
        child = tree.add_child(tree.root, "walk to table")
        snapshot = tree.snapshot()
        execute(tree, child, walk("table_1"))
        assert snapshot["nodes"][1]["status"] == "Open"
        assert tree.snapshot()["nodes"][1]["action"] == {
            "kind": "Walk",
            "args": ["table_1"],
        }
        assert snapshot["cursor"] == child
