"""Run configuration: one JSON file, secrets from the environment.

Every field has a default, so an empty ``{}`` is a valid, fully offline
configuration using the mock backends.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .backends import GPT4V_PARAMS, LLAVA_PARAMS, BackendProfile, GenerationParams
from .corpus import ChunkConfig
from .errors import ConfigError
from .retrieval import RetrievalConfig, Strategy
from .settings import ALL_SETTINGS, SettingId, parse_setting
from .vectorstore import HnswParams


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BackendSpec(_Strict):
    kind: Literal["text_embed", "multimodal_embed", "chat"]
    endpoint: str = "mock"
    model_id: str
    temperature: Optional[float] = None
    top_p: Optional[float] = None
    max_tokens: Optional[int] = None
    max_images_per_prompt: int = Field(1, ge=1)
    api_key_env: str = "OPENAI_API_KEY"
    timeout_s: float = Field(60.0, gt=0)
    max_concurrency: int = Field(4, ge=1)
    dim: int = Field(64, ge=1)

    def profile(self, name: str) -> BackendProfile:
        params = None
        if self.kind == "chat":
            if None in (self.temperature, self.top_p, self.max_tokens):
                raise ConfigError(f"chat backend {name!r} needs temperature, top_p and max_tokens")
            params = GenerationParams(self.temperature, self.top_p, self.max_tokens)
        return BackendProfile(name, self.kind, self.endpoint, self.model_id, params,
                              self.max_images_per_prompt, self.api_key_env, self.timeout_s,
                              self.max_concurrency, self.dim)


def _chat(model_id: str, params: GenerationParams, max_images: int) -> BackendSpec:
    return BackendSpec(kind="chat", model_id=model_id, temperature=params.temperature, top_p=params.top_p,
                       max_tokens=params.max_tokens, max_images_per_prompt=max_images)


def default_backends() -> dict[str, BackendSpec]:
    return {
        "text-embed": BackendSpec(kind="text_embed", model_id="mock-text-embed"),
        "clip": BackendSpec(kind="multimodal_embed", model_id="mock-clip"),
        "gpt-4v": _chat("mock-gpt-4v", GPT4V_PARAMS, 4),
        "llava": _chat("mock-llava", LLAVA_PARAMS, 1),
    }


class ChunkingSpec(_Strict):
    window: int = 225
    stride: int = 180


class RetrievalSpec(_Strict):
    k_total: int = 4
    k_text: int = 2
    k_image: int = 2


class HnswSpec(_Strict):
    M: int = Field(16, ge=2)
    ef_construction: int = Field(200, ge=1)
    ef_search: int = Field(64, ge=1)


class TemplateSpec(_Strict):
    qa: Optional[Path] = None
    image_summary: Optional[Path] = None
    judge_dir: Optional[Path] = None


class GeneratorSpec(_Strict):
    """An answering model: a chat backend, optionally pinned to an image mode
    and limited to some settings (e.g. a single-image variant of a
    multi-image model that only matters where images are retrieved)."""

    name: str
    backend: str
    image_mode: Optional[Literal["single", "multi"]] = None
    settings: Optional[list[str]] = None

    @field_validator("settings")
    @classmethod
    def _known(cls, v: Optional[list[str]]) -> Optional[list[str]]:
        return None if v is None else [parse_setting(s).value for s in v]

    def runs(self, setting: SettingId) -> bool:
        return self.settings is None or setting.value in self.settings


_IMAGE_RETRIEVAL = [SettingId.IMAGE_ONLY_CLIP.value, SettingId.IMAGE_ONLY_SUMMARY.value,
                    SettingId.MULTIMODAL_CLIP.value, SettingId.MULTIMODAL_SUMMARY.value]


def default_generators() -> list[GeneratorSpec]:
    return [
        GeneratorSpec(name="gpt-4v", backend="gpt-4v"),
        GeneratorSpec(name="gpt-4v-si", backend="gpt-4v", image_mode="single", settings=_IMAGE_RETRIEVAL),
        GeneratorSpec(name="llava", backend="llava"),
    ]


class RunConfig(_Strict):
    corpus: Optional[Path] = None
    testset: Optional[Path] = None
    outdir: Path = Path("runs")
    backends: dict[str, BackendSpec] = Field(default_factory=default_backends)
    text_embed: str = "text-embed"
    multimodal_embed: str = "clip"
    generators: list[GeneratorSpec] = Field(default_factory=default_generators)
    judges: list[str] = Field(default_factory=lambda: ["gpt-4v", "llava"])
    settings: list[str] = Field(default_factory=lambda: [s.value for s in ALL_SETTINGS])
    chunking: ChunkingSpec = Field(default_factory=ChunkingSpec)
    retrieval: RetrievalSpec = Field(default_factory=RetrievalSpec)
    hnsw: HnswSpec = Field(default_factory=HnswSpec)
    templates: TemplateSpec = Field(default_factory=TemplateSpec)
    seed: int = Field(0, ge=0, lt=2**64)
    concurrency: int = Field(4, ge=1)
    question_timeout_s: float = Field(120.0, gt=0)
    char_budget: int = Field(12_000, ge=1)
    error_threshold: float = Field(0.1, ge=0, le=1)

    @field_validator("generators", mode="before")
    @classmethod
    def _generator_shorthand(cls, v):
        # a bare string names a backend used as-is
        if isinstance(v, list):
            return [{"name": g, "backend": g} if isinstance(g, str) else g for g in v]
        return v

    @field_validator("settings")
    @classmethod
    def _known_settings(cls, v: list[str]) -> list[str]:
        out = [parse_setting(s).value for s in v]
        if len(set(out)) != len(out):
            raise ValueError("settings listed twice")
        return out

    @model_validator(mode="after")
    def _references(self) -> "RunConfig":
        def need(name: str, kind: str, role: str) -> None:
            spec = self.backends.get(name)
            if spec is None:
                raise ValueError(f"{role} backend {name!r} is not defined under 'backends'")
            if spec.kind != kind:
                raise ValueError(f"{role} backend {name!r} has kind {spec.kind}, expected {kind}")

        need(self.text_embed, "text_embed", "text embedding")
        need(self.multimodal_embed, "multimodal_embed", "multimodal embedding")
        if not self.generators:
            raise ValueError("at least one generator is required")
        if not self.judges:
            raise ValueError("at least one judge is required")
        names = [g.name for g in self.generators]
        if len(set(names)) != len(names):
            raise ValueError("generator names must be unique")
        for g in self.generators:
            need(g.backend, "chat", "generator")
            if g.image_mode == "multi" and self.backends[g.backend].max_images_per_prompt < 2:
                raise ValueError(f"generator {g.name!r}: backend {g.backend!r} accepts a single image only")
        for j in self.judges:
            need(j, "chat", "judge")
        for name, spec in self.backends.items():
            spec.profile(name)  # raises on incomplete chat params
        return self

    # typed views -----------------------------------------------------------

    def profile(self, name: str) -> BackendProfile:
        return self.backends[name].profile(name)

    def generator_spec(self, name: str) -> GeneratorSpec:
        for g in self.generators:
            if g.name == name:
                return g
        raise ConfigError(f"no generator named {name!r}; configured: {[g.name for g in self.generators]}")

    @property
    def setting_ids(self) -> list[SettingId]:
        return [parse_setting(s) for s in self.settings]

    @property
    def chunk_config(self) -> ChunkConfig:
        return ChunkConfig(self.chunking.window, self.chunking.stride)

    @property
    def hnsw_params(self) -> HnswParams:
        return HnswParams(self.hnsw.M, self.hnsw.ef_construction, self.hnsw.ef_search)

    def retrieval_config(self, strategy: Strategy) -> RetrievalConfig:
        r = self.retrieval
        return RetrievalConfig(strategy, r.k_total, r.k_text, r.k_image)

    def check_files(self) -> None:
        """Referenced files must exist; called before any work starts."""
        paths = [("corpus", self.corpus), ("testset", self.testset), ("qa template", self.templates.qa),
                 ("summary template", self.templates.image_summary)]
        for label, p in paths:
            if p is not None and not p.is_file():
                raise ConfigError(f"{label} file not found: {p}")
        if self.templates.judge_dir is not None and not self.templates.judge_dir.is_dir():
            raise ConfigError(f"judge template directory not found: {self.templates.judge_dir}")


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    """Read ``path`` (or defaults) and apply non-None ``overrides`` on top.

    Relative file paths in the file are resolved against its directory.
    """
    raw: dict = {}
    base = Path.cwd()
    if path is not None:
        p = Path(path)
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {p}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {p} must hold a JSON object")
        base = p.resolve().parent
        for key in ("corpus", "testset", "outdir"):
            if isinstance(raw.get(key), str):
                raw[key] = str(base / raw[key])
        tpl = raw.get("templates")
        if isinstance(tpl, dict):
            raw["templates"] = {k: str(base / v) if isinstance(v, str) else v for k, v in tpl.items()}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
