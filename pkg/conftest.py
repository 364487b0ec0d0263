"""Root conftest; puts step_planner on the import path for the tests."""
