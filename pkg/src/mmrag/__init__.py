"""Multimodal retrieval-augmented generation with an LLM-as-a-judge harness.

Typical offline use::

    from mmrag import RunConfig, make_synthetic, run_experiment

    data = make_synthetic()
    result = run_experiment(RunConfig(outdir="runs"), corpus=data.corpus, testset=data.testset)
"""

from importlib.metadata import PackageNotFoundError, version

from .config import RunConfig, load_config
from .corpus import Corpus, ImageAsset, PageRecord, QAQuadruple, load_corpus, load_testset
from .errors import ConfigError, MMRagError
from .pipeline import Backends, ExperimentResult, Workspace, answer_question, run_experiment
from .settings import SettingId
from .synth import make_synthetic

try:
    __version__ = version("mmrag")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

__all__ = [
    "Backends",
    "ConfigError",
    "Corpus",
    "ExperimentResult",
    "ImageAsset",
    "MMRagError",
    "PageRecord",
    "QAQuadruple",
    "RunConfig",
    "SettingId",
    "Workspace",
    "__version__",
    "answer_question",
    "load_config",
    "load_corpus",
    "load_testset",
    "make_synthetic",
    "run_experiment",
]
