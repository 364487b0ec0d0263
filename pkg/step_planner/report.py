"""Provide report emission for suite results."""
import csv
import io
import json

from .evaluation import (
    CATEGORIES,
    ERROR_GROUPS,
    ErrorClass,
    SuiteResult,
    format_percent,
)

FORMAT_JSON = "json"
FORMAT_CSV = "csv"
FORMAT_MARKDOWN = "markdown"
FORMATS = (FORMAT_JSON, FORMAT_CSV, FORMAT_MARKDOWN)

CSV_HEADER = (
    "method",
    "episodes",
    "sr",
    "ssr",
    "ssr_macro",
    "grammar_error",
    "missing_state",
    "missing_relation",
    "missing_goal_action",
    "wrong_order",
    "additional_or_missing_step",
    "affordance_error",
)
_CSV_ERRORS = (
    ErrorClass.GRAMMAR_ERROR,
    ErrorClass.MISSING_STATE,
    ErrorClass.MISSING_RELATION,
    ErrorClass.MISSING_GOAL_ACTION,
    ErrorClass.WRONG_ORDER,
    ErrorClass.ADDITIONAL_OR_MISSING_STEP,
    ErrorClass.AFFORDANCE_ERROR,
)


def _as_list(results) -> list:
    if isinstance(results, SuiteResult):
        return [results]
    return list(results)


def _table(header: list, rows: list) -> list:
    lines = ["| " + " | ".join(header) + " |"]
    lines.append("|" + "|".join(" --- " for _ in header) + "|")
    lines.extend("| " + " | ".join(row) + " |" for row in rows)
    return lines


def _json(results: list) -> str:
    document = {"methods": [result.to_dict() for result in results]}
    return json.dumps(document, indent=2) + "\n"


def _csv(results: list) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for result in results:
        writer.writerow(
            [
                result.method,
                result.episodes,
                format_percent(result.sr),
                format_percent(result.ssr),
                format_percent(result.ssr_macro),
            ]
            + [format_percent(result.error_rate(error)) for error in _CSV_ERRORS]
        )
    return buffer.getvalue()


def _markdown(results: list) -> str:
    lines = ["## Performance", ""]
    lines += _table(
        ["Method", "SR.", "SSR.", "SSR. (macro)", "Grammar Error"],
        [
            [
                result.method,
                format_percent(result.sr),
                format_percent(result.ssr),
                format_percent(result.ssr_macro),
                format_percent(result.error_rate(ErrorClass.GRAMMAR_ERROR)),
            ]
            for result in results
        ],
    )

    grouped = [error for _, errors in ERROR_GROUPS for error in errors]
    lines += ["", "## Error types", ""]
    lines += [
        f"{group}: {', '.join(error.label for error in errors)}."
        for group, errors in ERROR_GROUPS
    ]
    lines.append("")
    lines += _table(
        ["Method"] + [error.label for error in grouped],
        [
            [result.method]
            + [format_percent(result.error_rate(error)) for error in grouped]
            for result in results
        ],
    )

    lines += ["", "## Categories", ""]
    lines += _table(
        ["Method"] + list(CATEGORIES),
        [
            [result.method]
            + [
                "{}/{}".format(*result.categories[category])
                if category in result.categories
                else "-"
                for category in CATEGORIES
            ]
            for result in results
        ],
    )

    bucketed = [result for result in results if result.buckets]
    if bucketed:
        deciles = [f"{decile}%" for decile, _ in bucketed[0].buckets]
        lines += ["", "## SSR by plan length", ""]
        lines += _table(
            ["Method"] + deciles,
            [
                [result.method]
                + [format_percent(ssr) for _, ssr in result.buckets]
                for result in bucketed
            ],
        )
    return "\n".join(lines) + "\n"


def emit_report(results, fmt: str = FORMAT_JSON) -> str:
    """Render one or more suite results.

    :param results: A SuiteResult, or one per method
    :type results: SuiteResult or list[SuiteResult]
    :param fmt: json, csv or markdown
    :type fmt: str
    :returns: the document
    :rtype: str
    """
    results = _as_list(results)
    if fmt == FORMAT_JSON:
        return _json(results)
    if fmt == FORMAT_CSV:
        return _csv(results)
    if fmt == FORMAT_MARKDOWN:
        return _markdown(results)
    raise ValueError(f"unknown report format {fmt!r}")


def load_report(text: str) -> list:
    """Parse a JSON report back into suite results."""
    return [
        SuiteResult.from_dict(method) for method in json.loads(text)["methods"]
    ]
