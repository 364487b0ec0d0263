"""Tests for the step_planner package."""
