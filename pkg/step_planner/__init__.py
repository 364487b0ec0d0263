"""Subgoal tree planner for household tasks."""
