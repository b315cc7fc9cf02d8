import json

import httpx
import pytest

from mmrag.backends import LLAVA_PARAMS, ChatMessage, make_backend
from mmrag.backends.base import ChatModel
from mmrag.backends.mock import tagged_image
from mmrag.backends.openai_compat import HttpChatModel
from mmrag.errors import EmptyCompletion
from mmrag.generation import (
    ImageMode,
    RagAnswer,
    baseline_prompt,
    build_qa_prompt,
    default_qa_template,
    select_context,
    synthesize_answer,
)
from mmrag.prompts import PromptTemplate, TemplateError, load_template, parse_sections, parse_template, section
from mmrag.retrieval import ContextBundle, ContextItem

from conftest import chat_profile


def text_item(text, score, doc="d", ref=None):
    return ContextItem("text", text, (doc, 1), score, ref or f"{doc}/{score}")


def image_item(tag, score):
    img = tagged_image(tag, f"CTX[{tag}-fact]", image_id=tag, source=("d", 2))
    return ContextItem("image", img, img.source, score, img.key)


@pytest.fixture
def bundle():
    return ContextBundle("What is up?", (
        text_item("second CTX[t2]", 0.5), text_item("first CTX[t1]", 0.1),
        image_item("far", 0.9), image_item("near", 0.2),
    ))


class TestPrompt:
    def test_no_images_no_image_parts(self):
        b = ContextBundle("q?", (text_item("x", 0.1),))
        msgs = build_qa_prompt(default_qa_template(), "q?", b, ImageMode.MULTI, 4)
        assert sum(len(m.images) for m in msgs) == 0

    def test_single_mode_keeps_nearest(self, bundle):
        msgs = build_qa_prompt(default_qa_template(), bundle.question, bundle, ImageMode.SINGLE, 4)
        assert [i.image_id for i in msgs[-1].images] == ["near"]

    def test_multi_mode_score_order(self, bundle):
        msgs = build_qa_prompt(default_qa_template(), bundle.question, bundle, ImageMode.MULTI, 4)
        assert [i.image_id for i in msgs[-1].images] == ["near", "far"]

    def test_multi_mode_capped_by_backend(self, bundle):
        msgs = build_qa_prompt(default_qa_template(), bundle.question, bundle, ImageMode.MULTI, 1)
        assert len(msgs[-1].images) == 1

    def test_texts_nearest_first_with_sources(self, bundle):
        user = build_qa_prompt(default_qa_template(), bundle.question, bundle)[-1].text
        assert user.index("first CTX[t1]") < user.index("second CTX[t2]")
        assert "[source: d, page 1]" in user
        sections = parse_sections(user)
        assert sections["question"] == "What is up?"

    def test_char_budget_drops_whole_items(self, bundle):
        ctx = select_context(bundle, ImageMode.MULTI, 4, char_budget=40)
        assert [i.payload for i in ctx.texts] == ["first CTX[t1]"]
        assert select_context(bundle, ImageMode.MULTI, 4, char_budget=5).texts == ()

    def test_baseline_is_question_only(self):
        msgs = baseline_prompt("Why is the sky blue?")
        assert len(msgs) == 1 and msgs[0].text == "Why is the sky blue?" and msgs[0].images == []


class TestTemplates:
    def test_parse_and_render(self):
        t = parse_template("t", "[system]\nBe brief.\n[user]\nQ: {question}\n", {"question"})
        assert t.system_text == "Be brief."
        assert t.render(question="x {text_context}") == "Q: x {text_context}"

    def test_missing_placeholder(self):
        with pytest.raises(TemplateError):
            parse_template("t", "[system]\ns\n[user]\nno slot\n", {"question"})

    def test_unresolved_value(self):
        t = parse_template("t", "[system]\ns\n[user]\n{question}\n", {"question"})
        with pytest.raises(TemplateError):
            t.render()

    def test_override_file(self, tmp_path):
        path = tmp_path / "qa.txt"
        path.write_text("[system]\nCustom.\n[user]\n{text_context}\n---\n{question}\n")
        t = load_template("qa", {"question", "text_context"}, path)
        assert isinstance(t, PromptTemplate) and t.system_text == "Custom."

    def test_sections_round_trip(self):
        text = section("Generated answer", "a\nb") + "\n" + section("Question", "q")
        assert parse_sections(text) == {"generated_answer": "a\nb", "question": "q"}


class _Flaky(ChatModel):
    def __init__(self, replies):
        super().__init__(chat_profile())
        self.replies = list(replies)

    def _complete(self, messages):
        return self.replies.pop(0)


class TestSynthesize:
    def test_echo_contains_gold_marker(self, gpt4v, bundle):
        msgs = build_qa_prompt(default_qa_template(), bundle.question, bundle, ImageMode.MULTI, 4)
        text, sent = synthesize_answer(gpt4v, msgs)
        assert "ANS[t1]" in text and "ANS[near-fact]" in text
        assert sent == 2

    def test_empty_completion_retried_once(self):
        chat = _Flaky(["", "second try"])
        assert synthesize_answer(chat, [ChatMessage.user("q")]) == ("second try", 0)

    def test_empty_completion_twice_fails(self):
        with pytest.raises(EmptyCompletion):
            synthesize_answer(_Flaky(["", " "]), [ChatMessage.user("q")])

    def test_params_forwarded_verbatim(self, monkeypatch):
        monkeypatch.setenv("K", "x")
        bodies = []

        def handler(request):
            bodies.append(json.loads(request.content))
            return httpx.Response(200, json={"choices": [{"message": {"content": "a"}}]})

        profile = chat_profile("live", 1, LLAVA_PARAMS, api_key_env="K")
        profile = type(profile)(**{**profile.__dict__, "endpoint": "http://x"})
        synthesize_answer(HttpChatModel(profile, httpx.MockTransport(handler)), baseline_prompt("q"))
        assert {k: bodies[0][k] for k in ("temperature", "top_p", "max_tokens")} == {
            "temperature": 1.0, "top_p": 1.0, "max_tokens": 300}


class TestRagAnswer:
    def test_json_round_trip(self, bundle):
        ans = RagAnswer("q1", "MultimodalClip", "gpt-4v", "text", bundle, images_sent=1, texts_sent=2)
        images = {i.payload.key: i.payload for i in bundle.images}
        back = RagAnswer.from_json(json.loads(json.dumps(ans.to_json())), lambda ref, key: images[key])
        assert back.to_json() == ans.to_json()
        assert [i.image_id for i in back.image_context] == ["near"]
        assert [i.payload for i in back.text_context] == ["first CTX[t1]", "second CTX[t2]"]

    def test_changed_image_detected(self, bundle):
        ans = RagAnswer("q1", "MultimodalClip", "gpt-4v", "text", bundle, 2, 2)
        other = tagged_image("other")
        with pytest.raises(ValueError, match="changed"):
            RagAnswer.from_json(ans.to_json(), lambda ref, key: other)


def test_single_image_profile_in_multi_mode_still_one_image(bundle):
    llava = make_backend(chat_profile("llava", 1, LLAVA_PARAMS))
    msgs = build_qa_prompt(default_qa_template(), bundle.question, bundle, ImageMode.MULTI, llava.max_images)
    _, sent = synthesize_answer(llava, msgs)
    assert sent == 1
