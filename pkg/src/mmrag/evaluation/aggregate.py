"""Folding a judgment log into per-row metric means."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Iterator

from ..settings import SettingId, parse_setting
from .judge import Judgment
from .metrics import METRICS, Metric, applicable

RowKey = tuple[str, str, str]  # (setting, generator, judge)


@dataclass(frozen=True)
class Cell:
    """Counts behind one table entry. ``mean`` is None when nothing was graded."""

    applicable: bool
    positives: int = 0
    n: int = 0
    errors: int = 0

    @property
    def mean(self) -> float | None:
        if not self.applicable or self.n == 0:
            return None
        return self.positives / self.n


def _setting(name: str) -> SettingId:
    return parse_setting(name)


def row_sort_key(key: RowKey) -> tuple:
    setting, generator, judge = key
    return (_setting(setting).order, generator, judge)


class ScoreTable:
    """Rows keyed by (setting, generator, judge); one Cell per metric."""

    def __init__(self, rows: dict[RowKey, dict[Metric, Cell]]) -> None:
        for key, cells in rows.items():
            s = _setting(key[0])
            for m in METRICS:
                cell = cells.get(m)
                if cell is None or cell.applicable != applicable(s, m):
                    raise ValueError(f"row {key}: cell for {m.value} missing or has wrong applicability")
        self.rows = {k: dict(rows[k]) for k in sorted(rows, key=row_sort_key)}

    def __iter__(self) -> Iterator[tuple[RowKey, dict[Metric, Cell]]]:
        return iter(self.rows.items())

    def __len__(self) -> int:
        return len(self.rows)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ScoreTable) and self.rows == other.rows

    @property
    def judges(self) -> list[str]:
        return sorted({k[2] for k in self.rows})

    def mean(self, setting: str, generator: str, judge: str, metric: Metric) -> float | None:
        return self.rows[(setting, generator, judge)][metric].mean

    def combined(self) -> dict[tuple[str, str], dict[Metric, float | None]]:
        """Per (setting, generator): the mean over judges of each judge's mean.

        Judges with no graded answers for a metric are left out of that
        metric's average; a metric no judge could grade maps to None.
        """
        groups: dict[tuple[str, str], list[dict[Metric, Cell]]] = defaultdict(list)
        for (setting, generator, _), cells in self.rows.items():
            groups[(setting, generator)].append(cells)
        out: dict[tuple[str, str], dict[Metric, float | None]] = {}
        for key, rows in groups.items():
            merged: dict[Metric, float | None] = {}
            for m in METRICS:
                means = [r[m].mean for r in rows if r[m].mean is not None]
                merged[m] = sum(means) / len(means) if means else None
            out[key] = merged
        return out

    def error_fractions(self) -> dict[Metric, float]:
        """Share of error rows among all judgments of each metric."""
        out = {}
        for m in METRICS:
            errors = sum(c[m].errors for _, c in self)
            total = errors + sum(c[m].n for _, c in self)
            out[m] = errors / total if total else 0.0
        return out


def aggregate(judgments: Iterable[Judgment]) -> ScoreTable:
    """Fold judgments into a ScoreTable.

    Raises ValueError on an empty log, a repeated (qid, setting, generator,
    judge, metric) key, or a judgment for a metric the setting does not have.
    """
    seen: set[tuple[str, str, str, str, str]] = set()
    counts: dict[RowKey, dict[Metric, list[int]]] = {}
    for j in judgments:
        if j.key in seen:
            raise ValueError(f"duplicate judgment {j.key}")
        seen.add(j.key)
        setting = _setting(j.setting)
        if not applicable(setting, j.metric):
            raise ValueError(f"{j.metric.value} does not apply to {setting.value} (qid {j.qid})")
        row = counts.setdefault((j.setting, j.generator, j.judge), {m: [0, 0, 0] for m in METRICS})
        c = row[j.metric]
        if j.grade is None:
            c[2] += 1
        else:
            if j.grade not in (0, 1):
                raise ValueError(f"grade {j.grade!r} outside {{0, 1}} in {j.key}")
            c[0] += j.grade
            c[1] += 1
    if not seen:
        raise ValueError("cannot aggregate an empty judgment log")
    rows = {}
    for key, row in counts.items():
        s = _setting(key[0])
        rows[key] = {m: Cell(applicable(s, m), *row[m]) for m in METRICS}
    return ScoreTable(rows)


def combine_means(means: Iterable[float]) -> float:
    """Average of per-judge means, the dual-judge combination rule."""
    values = list(means)
    if not values:
        raise ValueError("no judge means to combine")
    return sum(values) / len(values)
