"""Per-metric LLM judges producing a binary grade and a reason."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Mapping

from ..backends import ChatMessage, ChatModel
from ..corpus import ImageAsset
from ..errors import JudgeParseError
from ..prompts import PromptTemplate, load_template
from .metrics import IMAGE_CTX, Metric

FORMAT_REMINDER = (
    "Your previous reply could not be parsed. Reply again with only a JSON object "
    'of the form {"grade": 0 or 1, "reason": "<one sentence>"} and nothing else.'
)

_decoder = json.JSONDecoder()


@dataclass(frozen=True)
class Judgment:
    qid: str
    setting: str
    generator: str
    judge: str
    metric: Metric
    grade: int | None
    reason: str
    error: str | None = None

    @property
    def key(self) -> tuple[str, str, str, str, str]:
        return (self.qid, self.setting, self.generator, self.judge, self.metric.value)

    def to_json(self) -> dict[str, Any]:
        row = asdict(self)
        row["metric"] = self.metric.value
        return row

    @classmethod
    def from_json(cls, row: Mapping[str, Any]) -> "Judgment":
        return cls(row["qid"], row["setting"], row["generator"], row["judge"], Metric(row["metric"]),
                   row["grade"], row["reason"], row.get("error"))


def parse_judgment(raw: str) -> tuple[int, str]:
    """Extract ``(grade, reason)`` from the first JSON object in ``raw``.

    Surrounding prose and code fences are ignored. Raises JudgeParseError if no
    object parses, or the first one has a grade outside {0, 1} or an empty reason.
    """
    if not isinstance(raw, str):
        raise JudgeParseError("judge output is not text")
    obj = None
    pos = raw.find("{")
    while pos != -1:
        try:
            candidate, _ = _decoder.raw_decode(raw, pos)
        except json.JSONDecodeError:
            pos = raw.find("{", pos + 1)
            continue
        if isinstance(candidate, dict):
            obj = candidate
            break
        pos = raw.find("{", pos + 1)
    if obj is None:
        raise JudgeParseError(f"no JSON object in judge output: {raw[:200]!r}")
    if "grade" not in obj:
        raise JudgeParseError("judge output lacks 'grade'")
    if "reason" not in obj:
        raise JudgeParseError("judge output lacks 'reason'")
    grade = obj["grade"]
    if isinstance(grade, bool) or not isinstance(grade, int) or grade not in (0, 1):
        raise JudgeParseError(f"grade must be 0 or 1, got {grade!r}")
    reason = obj["reason"]
    if not isinstance(reason, str) or not reason.strip():
        raise JudgeParseError("reason must be a non-empty string")
    return grade, reason.strip()


# Fixed parser conformance cases: raw judge output -> expected (grade, reason),
# or None where parsing must fail.
PARSE_CONFORMANCE: tuple[tuple[str, tuple[int, str] | None], ...] = (
    ('{"grade":1,"reason":"matches reference"}', (1, "matches reference")),
    ('{"grade": 0, "reason": "contradicts context"}', (0, "contradicts context")),
    ('Sure! {"grade":0,"reason":"contradicts context"} hope this helps', (0, "contradicts context")),
    ('```json\n{"grade": 1, "reason": "supported by the image"}\n```', (1, "supported by the image")),
    ('Reasoning {not json} then {"grade": 1, "reason": "ok"}', (1, "ok")),
    ('{"grade":2,"reason":"x"}', None),
    ('{"grade":-1,"reason":"x"}', None),
    ('{"grade":true,"reason":"x"}', None),
    ('{"grade":"1","reason":"x"}', None),
    ('{"grade":0.5,"reason":"x"}', None),
    ('{"reason":"no grade given"}', None),
    ('{"grade":1}', None),
    ('{"grade":1,"reason":"   "}', None),
    ("grade: 1, reason: looks right", None),
    ("", None),
)


class JudgeTemplates:
    """One prompt template per metric, bundled defaults or files in ``directory``."""

    def __init__(self, directory: str | Path | None = None) -> None:
        self._templates: dict[Metric, PromptTemplate] = {}
        for metric in Metric:
            path = Path(directory) / f"{metric.value}.txt" if directory is not None else None
            if path is not None and not path.exists():
                path = None
            placeholders = metric.required_inputs - {IMAGE_CTX}
            if path is None:
                self._templates[metric] = load_template(f"judge/{metric.value}", placeholders)
            else:
                self._templates[metric] = load_template(metric.value, placeholders, path)

    def __getitem__(self, metric: Metric) -> PromptTemplate:
        return self._templates[metric]


_DEFAULT_TEMPLATES: JudgeTemplates | None = None


def default_templates() -> JudgeTemplates:
    global _DEFAULT_TEMPLATES
    if _DEFAULT_TEMPLATES is None:
        _DEFAULT_TEMPLATES = JudgeTemplates()
    return _DEFAULT_TEMPLATES


def _check_inputs(metric: Metric, inputs: Mapping[str, Any]) -> None:
    given = {k for k, v in inputs.items() if v is not None}
    missing = metric.required_inputs - given
    if missing:
        raise ValueError(f"{metric.value} requires {sorted(missing)}")
    extra = given - metric.required_inputs
    if extra:
        raise ValueError(f"{metric.value} does not take {sorted(extra)}")
    if IMAGE_CTX in metric.required_inputs and not inputs[IMAGE_CTX]:
        raise ValueError(f"{metric.value} needs at least one image")


def _ask(judge: ChatModel, messages: list[ChatMessage]) -> tuple[int, str]:
    raw = judge.complete(messages)
    try:
        return parse_judgment(raw)
    except JudgeParseError:
        retry = messages + [ChatMessage("assistant", (raw,)), ChatMessage.user(FORMAT_REMINDER)]
        return parse_judgment(judge.complete(retry))


def evaluate(judge: ChatModel, metric: Metric, inputs: Mapping[str, Any], *,
             templates: JudgeTemplates | None = None, qid: str = "", setting: str = "",
             generator: str = "") -> Judgment:
    """Grade one answer on one metric.

    ``inputs`` must hold exactly the metric's required inputs; ``image_context``
    is a list of images. When the judge accepts fewer images than supplied,
    each image is judged separately and the grades are combined with OR for
    relevancy and AND for faithfulness.
    """
    _check_inputs(metric, inputs)
    template = (templates or default_templates())[metric]
    text_values = {k: v for k, v in inputs.items() if k != IMAGE_CTX and v is not None}
    user_text = template.render(**text_values)
    system = ChatMessage.system(template.system_text)
    images: list[ImageAsset] = list(inputs.get(IMAGE_CTX) or [])

    if len(images) <= judge.max_images:
        grade, reason = _ask(judge, [system, ChatMessage.user(user_text, *images)])
    else:
        grades, reasons = [], []
        for n, image in enumerate(images, start=1):
            g, r = _ask(judge, [system, ChatMessage.user(user_text, image)])
            grades.append(g)
            reasons.append(f"image {n}: {r}")
        grade = int(any(grades)) if metric.combine_any else int(all(grades))
        reason = "; ".join(reasons)
    return Judgment(qid, setting, generator, judge.profile.name, metric, grade, reason)
