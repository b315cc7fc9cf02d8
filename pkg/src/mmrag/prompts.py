"""Prompt template files and the section layout they share.

A template file has a ``[system]`` block and a ``[user]`` block. The user
block may reference placeholders such as ``{question}``; each declared
placeholder must appear exactly once. Inputs are rendered as labelled,
fenced sections so both real models and the offline mocks can find them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

QUESTION_LABEL = "Question:"
JUDGE_METRIC_RE = re.compile(r"^Metric: (\w+)\s*$", re.MULTILINE)
_SECTION_RE = re.compile(r"^([A-Z][A-Za-z ]*):\n<<<\n(.*?)\n?>>>$", re.MULTILINE | re.DOTALL)
_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")

KNOWN_PLACEHOLDERS = frozenset(
    {"question", "text_context", "generated_answer", "reference_answer"}
)


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    system_text: str
    user_scaffold: str
    placeholders: frozenset[str]

    def __post_init__(self) -> None:
        found = _PLACEHOLDER_RE.findall(self.user_scaffold)
        for ph in self.placeholders:
            n = found.count(ph)
            if n != 1:
                raise TemplateError(f"template {self.name!r}: placeholder {{{ph}}} appears {n} times, expected once")
        stray = {f for f in found if f in KNOWN_PLACEHOLDERS} - self.placeholders
        if stray:
            raise TemplateError(f"template {self.name!r}: undeclared placeholders {sorted(stray)}")

    def render(self, **values: str) -> str:
        missing = self.placeholders - values.keys()
        if missing:
            raise TemplateError(f"template {self.name!r}: unresolved placeholders {sorted(missing)}")

        def sub(m: re.Match) -> str:
            key = m.group(1)
            return values[key] if key in self.placeholders else m.group(0)

        # single pass, so substituted text is never re-scanned
        return _PLACEHOLDER_RE.sub(sub, self.user_scaffold)


def parse_template(name: str, text: str, placeholders: frozenset[str] | set[str]) -> PromptTemplate:
    m = re.match(r"\s*\[system\]\n(.*?)\n\[user\]\n(.*)\Z", text, re.DOTALL)
    if not m:
        raise TemplateError(f"template {name!r} must contain a [system] block followed by a [user] block")
    return PromptTemplate(name, m.group(1).strip(), m.group(2).rstrip("\n"), frozenset(placeholders))


def load_template(name: str, placeholders: set[str] | frozenset[str], path: str | Path | None = None) -> PromptTemplate:
    """Load a template from ``path`` or from the bundled defaults."""
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
    else:
        text = resources.files("mmrag").joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")
    return parse_template(name, text, placeholders)


def section(label: str, body: str) -> str:
    return f"{label}:\n<<<\n{body}\n>>>"


def parse_sections(text: str) -> dict[str, str]:
    """Inverse of :func:`section` over a whole prompt; keys are snake_case labels."""
    return {m.group(1).strip().lower().replace(" ", "_"): m.group(2) for m in _SECTION_RE.finditer(text)}
