from __future__ import annotations

import enum

from ..settings import SettingId

Q, GA, RA, TEXT_CTX, IMAGE_CTX = "question", "generated_answer", "reference_answer", "text_context", "image_context"


class Metric(str, enum.Enum):
    ANSWER_CORRECTNESS = "answer_correctness"
    ANSWER_RELEVANCY = "answer_relevancy"
    TEXT_FAITHFULNESS = "text_faithfulness"
    TEXT_CONTEXT_RELEVANCY = "text_context_relevancy"
    IMAGE_FAITHFULNESS = "image_faithfulness"
    IMAGE_CONTEXT_RELEVANCY = "image_context_relevancy"

    @property
    def required_inputs(self) -> frozenset[str]:
        return _INPUTS[self]

    @property
    def modality(self) -> str | None:
        """Context modality the metric judges, or None for answer-only metrics."""
        if IMAGE_CTX in self.required_inputs:
            return "image"
        if TEXT_CTX in self.required_inputs:
            return "text"
        return None

    @property
    def label(self) -> str:
        return _LABELS[self]

    @property
    def combine_any(self) -> bool:
        """Per-image grades combine with OR (relevancy) rather than AND (faithfulness)."""
        return self in (Metric.IMAGE_CONTEXT_RELEVANCY, Metric.TEXT_CONTEXT_RELEVANCY)


# report column order
METRICS = tuple(Metric)

_INPUTS = {
    Metric.ANSWER_CORRECTNESS: frozenset({Q, GA, RA}),
    Metric.ANSWER_RELEVANCY: frozenset({Q, GA}),
    Metric.TEXT_FAITHFULNESS: frozenset({GA, TEXT_CTX}),
    Metric.IMAGE_FAITHFULNESS: frozenset({GA, IMAGE_CTX}),
    Metric.TEXT_CONTEXT_RELEVANCY: frozenset({Q, TEXT_CTX}),
    Metric.IMAGE_CONTEXT_RELEVANCY: frozenset({Q, IMAGE_CTX}),
}

_LABELS = {
    Metric.ANSWER_CORRECTNESS: "Ans. Corr.",
    Metric.ANSWER_RELEVANCY: "Ans. Rel.",
    Metric.TEXT_FAITHFULNESS: "Text Faith.",
    Metric.TEXT_CONTEXT_RELEVANCY: "Text Ctx. Rel.",
    Metric.IMAGE_FAITHFULNESS: "Img. Faith.",
    Metric.IMAGE_CONTEXT_RELEVANCY: "Img. Ctx. Rel.",
}


def applicable(setting: SettingId, metric: Metric) -> bool:
    return metric.modality is None or metric.modality in setting.modalities


def metrics_for(setting: SettingId) -> list[Metric]:
    return [m for m in METRICS if applicable(setting, m)]
