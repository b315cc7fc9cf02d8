"""The nine experimental settings and which context modalities each provides."""

from __future__ import annotations

import enum

from .retrieval import GoldMode, Strategy


class SettingId(str, enum.Enum):
    BASELINE = "Baseline"
    TEXT_ONLY_RAG = "TextOnlyRAG"
    IMAGE_ONLY_CLIP = "ImageOnlyClip"
    IMAGE_ONLY_SUMMARY = "ImageOnlySummary"
    MULTIMODAL_CLIP = "MultimodalClip"
    MULTIMODAL_SUMMARY = "MultimodalSummary"
    TEXT_GSC = "TextGSC"
    IMAGE_GSC = "ImageGSC"
    MULTIMODAL_GSC = "MultimodalGSC"

    @property
    def order(self) -> int:
        return list(SettingId).index(self)

    @property
    def label(self) -> str:
        return _LABELS[self]

    @property
    def modalities(self) -> frozenset[str]:
        return _MODALITIES[self]

    @property
    def strategy(self) -> Strategy | None:
        return _STRATEGY.get(self)

    @property
    def gold_mode(self) -> GoldMode | None:
        return _GOLD.get(self)

    @property
    def uses_summaries(self) -> bool:
        return self in (SettingId.IMAGE_ONLY_SUMMARY, SettingId.MULTIMODAL_SUMMARY)


ALL_SETTINGS = tuple(SettingId)

_LABELS = {
    SettingId.BASELINE: "Baseline",
    SettingId.TEXT_ONLY_RAG: "Text-Only RAG",
    SettingId.IMAGE_ONLY_CLIP: "Image-Only RAG Clip",
    SettingId.IMAGE_ONLY_SUMMARY: "Image-Only RAG Summaries",
    SettingId.MULTIMODAL_CLIP: "Multimodal RAG Clip",
    SettingId.MULTIMODAL_SUMMARY: "Multimodal RAG Summaries",
    SettingId.TEXT_GSC: "Text-Only GSC",
    SettingId.IMAGE_GSC: "Image-Only GSC",
    SettingId.MULTIMODAL_GSC: "Multimodal GSC",
}

_TEXT, _IMAGE = frozenset({"text"}), frozenset({"image"})
_MODALITIES = {
    SettingId.BASELINE: frozenset(),
    SettingId.TEXT_ONLY_RAG: _TEXT,
    SettingId.IMAGE_ONLY_CLIP: _IMAGE,
    SettingId.IMAGE_ONLY_SUMMARY: _IMAGE,
    SettingId.MULTIMODAL_CLIP: _TEXT | _IMAGE,
    SettingId.MULTIMODAL_SUMMARY: _TEXT | _IMAGE,
    SettingId.TEXT_GSC: _TEXT,
    SettingId.IMAGE_GSC: _IMAGE,
    SettingId.MULTIMODAL_GSC: _TEXT | _IMAGE,
}

_STRATEGY = {
    SettingId.TEXT_ONLY_RAG: Strategy.TEXT_ONLY,
    SettingId.IMAGE_ONLY_CLIP: Strategy.IMAGE_CLIP,
    SettingId.IMAGE_ONLY_SUMMARY: Strategy.IMAGE_SUMMARY,
    SettingId.MULTIMODAL_CLIP: Strategy.MULTIMODAL_SEPARATE,
    SettingId.MULTIMODAL_SUMMARY: Strategy.MULTIMODAL_COMBINED,
}

_GOLD = {
    SettingId.TEXT_GSC: GoldMode.TEXT,
    SettingId.IMAGE_GSC: GoldMode.IMAGE,
    SettingId.MULTIMODAL_GSC: GoldMode.MULTIMODAL,
}


def parse_setting(name: str) -> SettingId:
    """Accept the id (``TextOnlyRAG``) or the report label, case-insensitively."""
    key = name.strip().lower()
    for s in SettingId:
        if key in (s.value.lower(), s.label.lower()):
            return s
    raise ValueError(f"unknown setting {name!r}; expected one of {[s.value for s in SettingId]}")
