"""Seeded synthetic corpus and test set for offline runs.

Each question has one gold page whose text and image both carry the answer
as a ``CTX[...]`` fact, in the form the mock backends understand. Easy
questions name their gold page's topic. Hard questions name a decoy topic
instead: several decoy pages about it hold wrong facts, so retrieval lands on
them while gold-context prompting still sees the right page.
"""

from __future__ import annotations

import random
import string
from dataclasses import dataclass

from .backends.mock import tagged_image
from .corpus import ChunkConfig, Corpus, PageRecord, QAQuadruple

FILLER = ("The section covers maintenance intervals, safety notes and the usual inspection "
          "checklist used by field engineers.")


@dataclass(frozen=True)
class SyntheticSet:
    corpus: Corpus
    testset: list[QAQuadruple]
    hard_qids: frozenset[str]


def _words(rng: random.Random, n: int, length: int = 8) -> list[str]:
    out: list[str] = []
    while len(out) < n:
        w = "".join(rng.choice(string.ascii_lowercase) for _ in range(length))
        # no word may contain another, so substring checks stay unambiguous
        if all(w not in o and o not in w for o in out):
            out.append(w)
    return out


def _page(doc_id: str, topic: str, fact: str) -> PageRecord:
    text = f"This page describes the {topic} assembly. The {topic} rating is CTX[{fact}]. {FILLER}"
    image = tagged_image(topic, f"CTX[{fact}]", image_id="fig1", source=(doc_id, 1))
    return PageRecord(doc_id, 1, text, image)


def make_synthetic(n_questions: int = 20, n_hard: int = 5, decoys_per_hard: int = 4, seed: int = 0,
                   chunking: ChunkConfig | None = None) -> SyntheticSet:
    if not 0 <= n_hard <= n_questions or n_questions < 1:
        raise ValueError("need 1 <= n_questions and 0 <= n_hard <= n_questions")
    rng = random.Random(seed)
    n_decoys = n_hard * decoys_per_hard
    words = _words(rng, 2 * n_questions + n_hard + n_decoys)
    topics = words[:n_questions]
    answers = words[n_questions : 2 * n_questions]
    decoy_topics = words[2 * n_questions : 2 * n_questions + n_hard]
    wrong = words[2 * n_questions + n_hard :]
    hard = set(rng.sample(range(n_questions), n_hard))

    pages: list[PageRecord] = []
    testset: list[QAQuadruple] = []
    hard_qids = set()
    d = 0
    for i in range(n_questions):
        page = _page(f"doc{i:03d}", topics[i], answers[i])
        pages.append(page)
        qid = f"q{i:03d}"
        asked = topics[i]
        if i in hard:
            hard_qids.add(qid)
            asked = decoy_topics[len(hard_qids) - 1]
            for j in range(decoys_per_hard):
                pages.append(_page(f"decoy{d:03d}", asked, wrong[d]))
                d += 1
        testset.append(QAQuadruple(qid, f"What is the rating of the {asked} assembly?", answers[i],
                                   page.page_text, page.image, page.source))
    return SyntheticSet(Corpus.from_pages(pages, chunking), testset, frozenset(hard_qids))
