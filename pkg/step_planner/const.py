"""Constants for the step_planner package."""
import os

PLATFORM = "step_planner"
VERSION = "1.0.0"

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
DEFAULT_RECIPES = os.path.join(DATA_DIR, "recipes.json")
DEFAULT_SUITE = os.path.join(DATA_DIR, "tasks")

DEFAULT_MAX_DEPTH = 6
DEFAULT_MAX_REPLANS = 3
DEFAULT_MAX_STEPS = 200
DEFAULT_ORACLE_DEPTH = 8
DEFAULT_LLM_RETRIES = 2
DEFAULT_LLM_TIMEOUT = 30
DEFAULT_LLM_TEMPERATURE = 0.0

TRACE_VERSION = 1

ENV_LLM_BASE_URL = "STEP_LLM_BASE_URL"
ENV_LLM_MODEL = "STEP_LLM_MODEL"
ENV_LLM_API_KEY = "STEP_LLM_API_KEY"
ENV_LLM_TIMEOUT = "STEP_LLM_TIMEOUT"
ENV_LLM_TEMPERATURE = "STEP_LLM_TEMPERATURE"
ENV_LLM_RETRIES = "STEP_LLM_RETRIES"
