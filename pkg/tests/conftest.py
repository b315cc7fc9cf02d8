import pytest

from mmrag.backends import GPT4V_PARAMS, LLAVA_PARAMS, BackendProfile, make_backend
from mmrag.synth import make_synthetic


def chat_profile(name="gpt-4v", max_images=4, params=GPT4V_PARAMS, **kw):
    return BackendProfile(name, "chat", "mock", f"mock-{name}", params, max_images, **kw)


def text_profile(**kw):
    return BackendProfile("text-embed", "text_embed", "mock", "mock-text", **kw)


def mm_profile(**kw):
    return BackendProfile("clip", "multimodal_embed", "mock", "mock-clip", **kw)


@pytest.fixture
def text_backend():
    return make_backend(text_profile(), seed=0)


@pytest.fixture
def mm_backend():
    return make_backend(mm_profile(), seed=0)


@pytest.fixture
def gpt4v():
    return make_backend(chat_profile(), seed=0)


@pytest.fixture
def llava():
    return make_backend(chat_profile("llava", 1, LLAVA_PARAMS), seed=0)


@pytest.fixture(scope="session")
def synthetic():
    return make_synthetic(20, 5, seed=0)


# acceptance lines, echoed once more at the end of the session
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
