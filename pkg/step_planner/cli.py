"""Command line entry point for the subgoal tree planner.

Exit codes: 0 when every episode finished (whether or not it succeeded),
1 when the tool itself failed (configuration, files, backend), 2 when the
oracle finds no plan.
"""
import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import voluptuous as vol
from voluptuous.humanize import humanize_error

from .completion import (
    Cassette,
    CassetteFileError,
    CompletionClient,
    LLMSettings,
    TransportMode,
)
from .const import (
    DEFAULT_MAX_DEPTH,
    DEFAULT_MAX_REPLANS,
    DEFAULT_MAX_STEPS,
    DEFAULT_ORACLE_DEPTH,
    DEFAULT_RECIPES,
    VERSION,
)
from .decompose import BackendUnavailable, ContextMode
from .decompositionpolicy import DecompositionPolicy
from .evaluation import (
    TaskFileError,
    classify_error,
    compute_metrics,
    load_suite,
    load_task,
)
from .oracle import oracle_search
from .planner import (
    PlannerConfig,
    SchemaMismatch,
    load_trace,
    run_episode,
    run_flat_baseline,
)
from .recipes import RecipeFileError
from .report import FORMAT_CSV, FORMAT_JSON, FORMAT_MARKDOWN, emit_report
from .world import WorldFileError

_LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNREACHABLE = 2

BACKENDS = ("scripted", "llm")
REPORT_FILES = {
    FORMAT_JSON: "report.json",
    FORMAT_CSV: "report.csv",
    FORMAT_MARKDOWN: "report.md",
}

CONF_SUITE = "suite"
CONF_BACKEND = "backend"
CONF_MODE = "mode"
CONF_TRANSPORT = "transport"
CONF_CASSETTE = "cassette"
CONF_OUT = "out"
CONF_SEED = "seed"
CONF_MAX_DEPTH = "max_depth"
CONF_MAX_REPLANS = "max_replans"
CONF_MAX_STEPS = "max_steps"
CONF_PARALLELISM = "parallelism"
CONF_RECIPES = "recipes"
CONF_WITH_ORACLE = "with_oracle"
CONF_LLM = "llm"

_FLAG_KEYS = (
    CONF_SUITE,
    CONF_BACKEND,
    CONF_MODE,
    CONF_TRANSPORT,
    CONF_CASSETTE,
    CONF_OUT,
    CONF_SEED,
    CONF_MAX_DEPTH,
    CONF_MAX_REPLANS,
    CONF_MAX_STEPS,
    CONF_PARALLELISM,
    CONF_RECIPES,
    CONF_WITH_ORACLE,
)

_POSITIVE = vol.All(vol.Coerce(int), vol.Range(min=1))

RUN_CONFIG_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_SUITE): vol.All(str, vol.Length(min=1)),
        vol.Optional(CONF_BACKEND, default="scripted"): vol.In(BACKENDS),
        vol.Optional(CONF_MODE, default=ContextMode.FULL_STEP.value): vol.In(
            [mode.value for mode in ContextMode]
        ),
        vol.Optional(
            CONF_TRANSPORT, default=TransportMode.LIVE.value
        ): vol.In([mode.value for mode in TransportMode]),
        vol.Optional(CONF_CASSETTE, default=None): vol.Any(None, str),
        vol.Optional(CONF_OUT, default="out"): str,
        vol.Optional(CONF_SEED, default=0): vol.Coerce(int),
        vol.Optional(CONF_MAX_DEPTH, default=DEFAULT_MAX_DEPTH): _POSITIVE,
        vol.Optional(CONF_MAX_REPLANS, default=DEFAULT_MAX_REPLANS): _POSITIVE,
        vol.Optional(CONF_MAX_STEPS, default=DEFAULT_MAX_STEPS): _POSITIVE,
        vol.Optional(CONF_PARALLELISM, default=1): _POSITIVE,
        vol.Optional(CONF_RECIPES, default=DEFAULT_RECIPES): str,
        vol.Optional(CONF_WITH_ORACLE, default=False): bool,
        vol.Optional(CONF_LLM, default={}): dict,
    }
)


class ConfigError(ValueError):
    """Raised when a run cannot be configured."""


@dataclass(frozen=True)
class RunConfig:
    """Everything one suite run needs."""

    suite: str
    backend: str = "scripted"
    mode: ContextMode = ContextMode.FULL_STEP
    transport: TransportMode = TransportMode.LIVE
    cassette: Optional[str] = None
    out: str = "out"
    seed: int = 0
    max_depth: int = DEFAULT_MAX_DEPTH
    max_replans: int = DEFAULT_MAX_REPLANS
    max_steps: int = DEFAULT_MAX_STEPS
    parallelism: int = 1
    recipes: str = DEFAULT_RECIPES
    with_oracle: bool = False
    llm: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict, source: str = "<config>") -> "RunConfig":
        """Validate a run configuration mapping.

        :raises ConfigError: with the offending key and the reason
        """
        try:
            data = RUN_CONFIG_SCHEMA(data)
        except vol.Invalid as error:
            raise ConfigError(
                f"{source}: {humanize_error(data, error)}"
            ) from error
        config = cls(
            **dict(
                data,
                mode=ContextMode(data[CONF_MODE]),
                transport=TransportMode(data[CONF_TRANSPORT]),
            )
        )
        config.check()
        return config

    def check(self):
        """Check the cross-field rules and that the inputs exist."""
        if not os.path.exists(self.suite):
            raise ConfigError(f"suite path {self.suite} does not exist")
        if (
            self.backend == "llm"
            and self.transport is not TransportMode.LIVE
            and not self.cassette
        ):
            raise ConfigError(
                f"--transport {self.transport.value} needs --cassette"
            )
        if self.backend == "scripted" and not os.path.exists(self.recipes):
            raise ConfigError(f"recipe file {self.recipes} does not exist")

    def planner_config(self, mode: Optional[ContextMode] = None) -> PlannerConfig:
        """Return the budgets as a PlannerConfig."""
        return PlannerConfig(
            max_depth=self.max_depth,
            max_replans_per_node=self.max_replans,
            max_total_steps=self.max_steps,
            mode=mode or self.mode,
            seed=self.seed,
        )


def build_policy(config: RunConfig):
    """Instantiate the configured decomposition backend."""
    if config.backend == "scripted":
        return DecompositionPolicy.get_instance(
            "scripted", config.recipes, config.seed or None
        )
    try:
        settings = LLMSettings.from_env(overrides=config.llm)
    except vol.Invalid as error:
        raise ConfigError(
            f"llm settings: {humanize_error(config.llm, error)}"
        ) from error
    try:
        cassette = Cassette(config.cassette) if config.cassette else None
    except CassetteFileError as error:
        raise ConfigError(f"cassette {error}") from error
    client = CompletionClient(
        _LOGGER, "llm", settings, config.transport, cassette
    )
    return DecompositionPolicy.get_instance("llm", client, settings.retries)


def run_suite(config: RunConfig, tasks: list, mode: ContextMode) -> list:
    """Run every task in mode, returning the traces in suite order.

    :raises BackendUnavailable: if the backend cannot answer
    """
    policy = build_policy(config)
    planner_config = config.planner_config(mode)
    runner = (
        run_flat_baseline if mode is ContextMode.FLAT_BASELINE else run_episode
    )

    def _run(task):
        return runner(task, policy, planner_config)

    with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
        return list(pool.map(_run, tasks))


def write_traces(traces: list, directory: str):
    """Write one trace file per task."""
    os.makedirs(directory, exist_ok=True)
    for trace in traces:
        trace.write(os.path.join(directory, f"{trace.task_id}.jsonl"))


def write_reports(results: list, directory: str):
    """Write the report in every format."""
    os.makedirs(directory, exist_ok=True)
    for fmt, name in REPORT_FILES.items():
        with open(
            os.path.join(directory, name), "w", encoding="utf-8"
        ) as file_handle:
            file_handle.write(emit_report(results, fmt))


def _oracle_plans(config: RunConfig, tasks: list) -> dict:
    if not config.with_oracle:
        return {}
    return {task.id: oracle_search(task) for task in tasks}


def _evaluate(config: RunConfig, modes) -> list:
    tasks = load_suite(config.suite)
    oracle_plans = _oracle_plans(config, tasks)
    results = []
    for mode in modes:
        traces = run_suite(config, tasks, mode)
        directory = config.out
        if len(modes) > 1:
            directory = os.path.join(config.out, mode.value)
        write_traces(traces, os.path.join(directory, "traces"))
        results.append(
            compute_metrics(traces, tasks, oracle_plans, method=mode.value)
        )
    write_reports(results, config.out)
    print(emit_report(results, FORMAT_MARKDOWN), end="")
    return results


def cmd_run(config: RunConfig) -> int:
    """Run the suite in the configured mode.

    :returns: the exit code
    :rtype: int
    """
    _evaluate(config, [config.mode])
    return EXIT_OK


def cmd_ablate(config: RunConfig) -> int:
    """Run the suite in every context mode into one report."""
    _evaluate(config, list(ContextMode))
    return EXIT_OK


def cmd_oracle(task_path: str, depth_limit: int = DEFAULT_ORACLE_DEPTH) -> int:
    """Print the minimal plan of a task and its length."""
    task = load_task(task_path)
    plan = oracle_search(task, depth_limit)
    if plan is None:
        print(
            f"{task.id}: no plan within {depth_limit} step(s)", file=sys.stderr
        )
        return EXIT_UNREACHABLE
    for action in plan:
        print(action)
    print(f"length: {len(plan)}")
    return EXIT_OK


def cmd_classify(trace_path: str, task_path: str, with_oracle=False) -> int:
    """Print the error class of a finished trace, or success."""
    trace = load_trace(trace_path)
    task = load_task(task_path)
    outcome = trace.outcome
    if outcome is not None and outcome.success:
        print("success")
        return EXIT_OK
    plan = oracle_search(task) if with_oracle else None
    print(classify_error(trace, task, plan).value)
    return EXIT_OK


def _add_run_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--suite", help="task directory or task file")
    parser.add_argument("--backend", choices=BACKENDS)
    parser.add_argument("--mode", choices=[mode.value for mode in ContextMode])
    parser.add_argument(
        "--transport", choices=[mode.value for mode in TransportMode]
    )
    parser.add_argument("--cassette", help="record/replay cassette file")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--max-depth", dest=CONF_MAX_DEPTH, type=int)
    parser.add_argument("--max-replans", dest=CONF_MAX_REPLANS, type=int)
    parser.add_argument("--max-steps", dest=CONF_MAX_STEPS, type=int)
    parser.add_argument("--parallelism", type=int)
    parser.add_argument("--recipes", help="recipe file of the scripted backend")
    parser.add_argument(
        "--with-oracle",
        dest=CONF_WITH_ORACLE,
        action="store_true",
        default=None,
        help="search oracle plans for length buckets and order checks",
    )
    parser.add_argument("--config", help="JSON run configuration file")


def build_parser() -> argparse.ArgumentParser:
    """Return the argument parser."""
    parser = argparse.ArgumentParser(
        prog="step_planner", description="Subgoal tree planner."
    )
    parser.add_argument("--version", action="version", version=VERSION)
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="log debug messages"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run a suite in one mode")
    _add_run_arguments(run)
    ablate = commands.add_parser("ablate", help="run a suite in every mode")
    _add_run_arguments(ablate)

    oracle = commands.add_parser("oracle", help="print a minimal plan")
    oracle.add_argument("task", help="task file")
    oracle.add_argument("--depth", type=int, default=DEFAULT_ORACLE_DEPTH)

    classify = commands.add_parser("classify", help="classify a failed trace")
    classify.add_argument("trace", help="trace file")
    classify.add_argument("task", help="task file")
    classify.add_argument("--with-oracle", action="store_true")
    return parser


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the --config file and the flags, in that order."""
    data = {}
    source = "<flags>"
    if args.config:
        source = args.config
        try:
            with open(args.config, encoding="utf-8") as file_handle:
                data = json.load(file_handle)
        except (OSError, json.JSONDecodeError) as error:
            raise ConfigError(f"{args.config}: {error}") from error
        if not isinstance(data, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
    flags = {
        key: value
        for key, value in vars(args).items()
        if key in _FLAG_KEYS and value is not None
    }
    data.update(flags)
    if CONF_SUITE not in data:
        raise ConfigError("no suite given (--suite or the config file)")
    return RunConfig.from_dict(data, source)


def main(argv=None) -> int:
    """Run the command line interface.

    :returns: the exit code
    :rtype: int
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "oracle":
            return cmd_oracle(args.task, args.depth)
        if args.command == "classify":
            return cmd_classify(args.trace, args.task, args.with_oracle)
        config = load_run_config(args)
        _LOGGER.debug("Run configuration %s", asdict(config))
        if args.command == "ablate":
            return cmd_ablate(config)
        return cmd_run(config)
    except ConfigError as error:
        _LOGGER.error("Invalid configuration: %s", error)
    except (
        TaskFileError,
        WorldFileError,
        RecipeFileError,
        SchemaMismatch,
        OSError,
    ) as error:
        _LOGGER.error("%s", error)
    except BackendUnavailable as error:
        _LOGGER.error("Backend unavailable: %s", error)
    return EXIT_ERROR
