"""Rendering a ScoreTable as markdown, csv or json.

Rows are approach x generator x evaluator and the six metric columns follow
the usual report order. A metric the approach cannot have renders as ``--``;
an applicable metric that ended up with no graded answers renders as ``n/a``.
"""

from __future__ import annotations

import csv
import io
import json
from typing import Any

from ..settings import parse_setting
from .aggregate import Cell, ScoreTable
from .metrics import METRICS, Metric

NOT_APPLICABLE = "--"
NO_DATA = "n/a"
FORMATS = ("markdown", "csv", "json")

_KEY_COLUMNS = ("setting", "generator", "judge")


def _fmt(value: float | None, applicable: bool) -> str:
    if not applicable:
        return NOT_APPLICABLE
    if value is None:
        return NO_DATA
    return f"{value:.2f}"


def _md_table(header: list[str], rows: list[list[str]]) -> list[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return lines


def _markdown(table: ScoreTable) -> str:
    labels = [m.label for m in METRICS]
    out = ["# Evaluation report", ""]
    judges = table.judges
    if len(judges) == 1:
        out += [f"Single-judge mode: every score below comes from {judges[0]} alone, "
                "so self-preference of that judge is not averaged out.", ""]

    rows = []
    for (setting, generator, judge), cells in table:
        rows.append([parse_setting(setting).label, generator, judge]
                    + [_fmt(cells[m].mean, cells[m].applicable) for m in METRICS])
    out += ["## Scores per evaluator", ""]
    out += _md_table(["Approach", "Generator", "Evaluator", *labels], rows)

    combined = table.combined()
    rows = []
    for (setting, generator), means in combined.items():
        s = parse_setting(setting)
        first = next(c for (st, g, _), c in table if st == setting and g == generator)
        rows.append([s.label, generator] + [_fmt(means[m], first[m].applicable) for m in METRICS])
    out += ["", "## Combined (mean over evaluators)", ""]
    out += _md_table(["Approach", "Generator", *labels], rows)

    rows = []
    for (setting, generator, judge), cells in table:
        row = [parse_setting(setting).label, generator, judge]
        for m in METRICS:
            c = cells[m]
            row.append(NOT_APPLICABLE if not c.applicable else
                       f"{c.n}" + (f" (+{c.errors} err)" if c.errors else ""))
        rows.append(row)
    out += ["", "## Graded answers per cell", ""]
    out += _md_table(["Approach", "Generator", "Evaluator", *labels], rows)
    return "\n".join(out) + "\n"


def _csv(table: ScoreTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = list(_KEY_COLUMNS)
    for m in METRICS:
        header += [m.value, f"{m.value}_positives", f"{m.value}_n", f"{m.value}_errors"]
    w.writerow(header)
    for key, cells in table:
        row = list(key)
        for m in METRICS:
            c = cells[m]
            if c.applicable:
                row += [_fmt(c.mean, True), c.positives, c.n, c.errors]
            else:
                row += [NOT_APPLICABLE, "", "", ""]
        w.writerow(row)
    return buf.getvalue()


def _json(table: ScoreTable) -> str:
    def cell(c: Cell) -> Any:
        if not c.applicable:
            return NOT_APPLICABLE
        return {"mean": c.mean, "positives": c.positives, "n": c.n, "errors": c.errors}

    doc = {
        "metrics": [{"id": m.value, "label": m.label} for m in METRICS],
        "single_judge": len(table.judges) == 1,
        "rows": [
            {"setting": s, "approach": parse_setting(s).label, "generator": g, "judge": j,
             "scores": {m.value: cell(cells[m]) for m in METRICS}}
            for (s, g, j), cells in table
        ],
        "combined": [
            {"setting": s, "generator": g,
             "scores": {m.value: means[m] for m in METRICS}}
            for (s, g), means in table.combined().items()
        ],
        "error_fractions": {m.value: f for m, f in table.error_fractions().items()},
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def render_report(table: ScoreTable, format: str = "markdown") -> str:
    if format in ("md", "markdown"):
        return _markdown(table)
    if format == "csv":
        return _csv(table)
    if format == "json":
        return _json(table)
    raise ValueError(f"unknown report format {format!r}; expected one of {FORMATS}")


def table_from_csv(text: str) -> ScoreTable:
    """Parse the csv form back into a ScoreTable."""
    reader = csv.DictReader(io.StringIO(text))
    rows: dict[tuple[str, str, str], dict[Metric, Cell]] = {}
    for rec in reader:
        key = (rec["setting"], rec["generator"], rec["judge"])
        cells = {}
        for m in METRICS:
            if rec[m.value] == NOT_APPLICABLE:
                cells[m] = Cell(False)
            else:
                cells[m] = Cell(True, int(rec[f"{m.value}_positives"]), int(rec[f"{m.value}_n"]),
                                int(rec[f"{m.value}_errors"]))
        if key in rows:
            raise ValueError(f"duplicate row {key} in csv report")
        rows[key] = cells
    return ScoreTable(rows)
