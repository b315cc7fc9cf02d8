from .aggregate import Cell, ScoreTable, aggregate, combine_means
from .judge import JudgeTemplates, Judgment, default_templates, evaluate, parse_judgment
from .metrics import METRICS, Metric, applicable, metrics_for
from .report import NOT_APPLICABLE, render_report, table_from_csv

__all__ = [
    "Cell",
    "JudgeTemplates",
    "Judgment",
    "METRICS",
    "Metric",
    "NOT_APPLICABLE",
    "ScoreTable",
    "aggregate",
    "applicable",
    "combine_means",
    "default_templates",
    "evaluate",
    "metrics_for",
    "parse_judgment",
    "render_report",
    "table_from_csv",
]
