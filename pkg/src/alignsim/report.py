"""Rendering of simulation results and run states: table, JSON, CSV.

The CSV form is a flat ``section,metric,value`` table chosen so that
parse -> render -> parse is the identity; the table form is for terminals.
Figure rendering lives in :mod:`alignsim.figures` and is attached by the CLI
when an output path is given.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .dispatcher import JOURNAL_SCHEMA
from .errors import SchemaError
from .simulator import RESULT_SCHEMA, summarize_dict

FORMATS = ("json", "csv", "table")


def load_report_input(path: str | Path) -> dict:
    """Load a SimResult JSON or a run-state journal and summarize it."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise SchemaError("input file is empty", path=path)
    first_line = text.lstrip().splitlines()[0]
    if first_line.lstrip().startswith("{") and '"schema"' in first_line and JOURNAL_SCHEMA in first_line:
        return _summarize_journal(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"cannot parse as JSON: {exc}", path=path) from exc
    schema = doc.get("schema")
    if schema == RESULT_SCHEMA:
        return summarize_dict(doc)
    if schema == "alignsim/summary-v1":
        return doc
    raise SchemaError(f"unknown schema version {schema!r}", path=path)


def _summarize_journal(path: Path) -> dict:
    from .dispatcher import read_journal

    records = read_journal(path)
    header = records[0]
    counts: dict[str, int] = {}
    statuses: dict[str, str] = {}
    interruptions = 0
    index_loads = 0
    workers: set[int] = set()
    for rec in records[1:]:
        event = rec.get("event")
        if event == "terminal":
            statuses[rec["accession"]] = rec["status"]
        elif event == "requeue" and rec.get("cause") == "interruption":
            interruptions += 1
        elif event == "index_load":
            index_loads += 1
        elif event == "provision":
            workers.add(rec["worker"])
    for status in statuses.values():
        counts[status] = counts.get(status, 0) + 1
    return {
        "schema": "alignsim/summary-v1",
        "campaign_id": header.get("campaign_id"),
        "files": len(statuses),
        "worker_count": len(workers),
        "index_loads": index_loads,
        "interruptions": interruptions,
        "outcome_counts": dict(sorted(counts.items())),
    }


def flatten(summary: dict) -> list[tuple[str, str, str]]:
    """Flatten a summary into (section, metric, value) rows, stable order."""
    rows: list[tuple[str, str, str]] = []

    def emit(section: str, metric: str, value) -> None:
        if isinstance(value, float):
            rows.append((section, metric, f"{value:.6f}"))
        else:
            rows.append((section, metric, str(value)))

    for key in ("campaign_id", "seed", "files", "worker_count", "makespan_h",
                "aggregate_task_hours", "index_loads", "interruptions"):
        if key in summary:
            emit("run", key, summary[key])
    for outcome, count in summary.get("outcome_counts", {}).items():
        emit("outcomes", outcome, count)
    for stage, hours in summary.get("stage_hours", {}).items():
        emit("stage_hours", stage, hours)
    for stage, share in summary.get("stage_shares", {}).items():
        emit("stage_shares", stage, share)
    cost = summary.get("cost")
    if cost:
        emit("cost", "compute_usd", cost["compute_usd"])
        emit("cost", "storage_usd", cost["storage_usd"])
        emit("cost", "total_usd", cost["total_usd"])
        for item in cost.get("line_items", []):
            emit("cost_lines", item["label"], item["usd"])
    return rows


def render(summary: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("section", "metric", "value"))
        writer.writerows(flatten(summary))
        return buf.getvalue()
    if fmt == "table":
        rows = flatten(summary)
        width_section = max(len(r[0]) for r in rows)
        width_metric = max(len(r[1]) for r in rows)
        lines = []
        previous = None
        for section, metric, value in rows:
            shown = section if section != previous else ""
            previous = section
            lines.append(f"{shown:<{width_section}}  {metric:<{width_metric}}  {value}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}; choose from {FORMATS}")


def parse_csv(text: str) -> dict[tuple[str, str], str]:
    """Inverse of the CSV rendering: rows keyed by (section, metric)."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != ["section", "metric", "value"]:
        raise SchemaError(f"unexpected CSV header {header}")
    return {(section, metric): value for section, metric, value in reader}
