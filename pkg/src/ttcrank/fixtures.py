"""Deterministic synthetic retrieval benchmarks.

Words are synthetic tokens (``a3t7``, ``af120``) so that topic overlap is
under exact control. Generation uses integer arithmetic only
(:class:`random.Random` draws), so tasks are identical across platforms.

Variants:

* ``topical``: docs are sentences on one topic mixed with filler
  sentences at ``distractor_rate``; relevant docs share the query topic.
* ``needle``: long docs of filler sentences; a relevant doc hides one
  sentence holding the query phrase.
* ``mismatch``: each relevant doc states the query's head phrase in one
  sentence but uses unseen variants for the remaining query words; a
  lexical decoy per topic scatters every query word across its sentences.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .tasks import Task

VARIANTS = ("topical", "needle", "mismatch")


@dataclass(frozen=True)
class FixtureSpec:
    seed: int = 0
    variant: str = "topical"
    n_queries: int = 50
    n_docs: int = 50
    docs_per_topic: int = 2
    topic_vocab: int = 12
    query_terms: int = 4
    filler_vocab: int = 3000
    sentence_words: int = 25
    doc_sentences: int = 8
    paragraph_sentences: int = 4
    distractor_rate: float = 0.5
    family: str = "a"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.n_queries < 1 or self.n_docs < self.docs_per_topic:
            raise ValueError("need at least one query and one topic")
        if not 0.0 <= self.distractor_rate <= 1.0:
            raise ValueError("distractor_rate must lie in [0, 1]")
        if not 2 <= self.query_terms <= self.topic_vocab:
            raise ValueError("query_terms must lie in [2, topic_vocab]")
        if not self.family.isalpha() or not self.family.islower():
            raise ValueError("family must be lowercase letters")

    @property
    def n_topics(self) -> int:
        return self.n_docs // self.docs_per_topic

    @classmethod
    def from_dict(cls, d: dict) -> "FixtureSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown fixture fields: {', '.join(sorted(unknown))}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


class _Words:
    def __init__(self, spec: FixtureSpec, rng: random.Random):
        self.spec = spec
        self.rng = rng
        f = spec.family

        self.topic = [[f"{f}{t}t{w}" for w in range(spec.topic_vocab)] for t in range(spec.n_topics)]
        self.filler = [f"{f}f{j}" for j in range(spec.filler_vocab)]

    def filler_words(self, n: int) -> list[str]:
        return [self.filler[self.rng.randrange(len(self.filler))] for _ in range(n)]

    def sentence(self, words: list[str]) -> str:
        return " ".join(words).capitalize() + "."

    def filler_sentence(self) -> str:
        return self.sentence(self.filler_words(self.spec.sentence_words))

    def embed_phrase(self, phrase: list[str]) -> str:
        """A sentence with ``phrase`` contiguous at a random position."""
        n = max(0, self.spec.sentence_words - len(phrase))
        pad = self.filler_words(n)
        at = self.rng.randrange(n + 1)
        return self.sentence(pad[:at] + phrase + pad[at:])

    def scatter(self, words: list[str]) -> str:
        """Topic words spread through filler, order shuffled."""
        out = self.filler_words(self.spec.sentence_words)
        ws = list(words)
        self.rng.shuffle(ws)
        slots = sorted(self.rng.sample(range(len(out)), min(len(ws), len(out))))
        for w, s in zip(ws, slots):
            out[s] = w
        return self.sentence(out)


def _layout(sentences: list[str], per_paragraph: int) -> str:
    paras = [" ".join(sentences[i:i + per_paragraph]) for i in range(0, len(sentences), per_paragraph)]
    return "\n\n".join(paras)


def _query_phrases(spec: FixtureSpec, words: _Words, rng: random.Random):
    """One phrase (ordered topic-word list) per query, cycling over topics."""
    out = []
    for qi in range(spec.n_queries):
        t = qi % spec.n_topics
        out.append((t, rng.sample(words.topic[t], spec.query_terms)))
    return out


def _topical(spec, words, rng, phrases):
    threshold = int(round(spec.distractor_rate * 1000))
    docs, doc_topic = [], []
    for t in range(spec.n_topics):
        for _ in range(spec.docs_per_topic):
            sents, on_topic = [], 0
            for _ in range(spec.doc_sentences):
                if rng.randrange(1000) < threshold:
                    sents.append(words.filler_sentence())
                else:
                    k = rng.randrange(2, spec.query_terms + 1)
                    sents.append(words.scatter(rng.sample(words.topic[t], k)))
                    on_topic += 1
            if not on_topic:
                sents[rng.randrange(len(sents))] = words.scatter(rng.sample(words.topic[t], 2))
            docs.append(_layout(sents, spec.paragraph_sentences))
            doc_topic.append(t)
    qrels = {}
    for qi, (t, _) in enumerate(phrases):
        qrels[qi] = {d: 1 for d, dt in enumerate(doc_topic) if dt == t}
    return docs, qrels


def _needle(spec, words, rng, phrases):
    by_topic: dict[int, list[list[str]]] = {}
    for t, ph in phrases:
        by_topic.setdefault(t, []).append(ph)
    docs, needles = [], []
    for t in range(spec.n_topics):
        for j in range(spec.docs_per_topic):
            sents = [words.filler_sentence() for _ in range(spec.doc_sentences)]
            own = by_topic.get(t) or [rng.sample(words.topic[t], spec.query_terms)]
            phrase = own[j % len(own)]
            sents[rng.randrange(len(sents))] = words.embed_phrase(phrase)
            docs.append(_layout(sents, spec.paragraph_sentences))
            needles.append((t, phrase))
    # grade 2 for the doc holding the query's own phrase, 1 for its topic siblings
    qrels = {qi: {d: 2 if ph == dph else 1 for d, (dt, dph) in enumerate(needles) if dt == t}
             for qi, (t, ph) in enumerate(phrases)}
    return docs, qrels


def _mismatch(spec, words, rng, phrases):
    # per topic: docs_per_topic - 1 relevant docs and one lexical decoy
    docs, role = [], []
    for t in range(spec.n_topics):
        ph = next((p for tt, p in phrases if tt == t), rng.sample(words.topic[t], spec.query_terms))
        head = ph[:2]
        for j in range(spec.docs_per_topic):
            sents = [words.filler_sentence() for _ in range(spec.doc_sentences)]
            if j < spec.docs_per_topic - 1:
                # head phrase intact; the other query words never appear
                variants = [w + "x" for w in ph[2:]]
                sents[rng.randrange(len(sents))] = words.embed_phrase(head + variants)
                role.append((t, 2))
            else:
                # every query word, in two separate sentences
                for w in ph:
                    for s in rng.sample(range(len(sents)), min(2, len(sents))):
                        toks = sents[s][:-1].split(" ")
                        toks[rng.randrange(1, len(toks))] = w
                        sents[s] = " ".join(toks) + "."
                role.append((t, 0))
            docs.append(_layout(sents, spec.paragraph_sentences))
    qrels = {}
    for qi, (t, _) in enumerate(phrases):
        qrels[qi] = {d: g for d, (dt, g) in enumerate(role) if dt == t and g > 0}
    return docs, qrels


def generate(spec: FixtureSpec) -> Task:
    """Build a task; a pure function of ``spec``."""
    rng = random.Random(f"{spec.family}:{spec.variant}:{spec.seed}")
    words = _Words(spec, rng)
    phrases = _query_phrases(spec, words, rng)
    build = {"topical": _topical, "needle": _needle, "mismatch": _mismatch}[spec.variant]
    docs, qrels = build(spec, words, rng, phrases)
    queries = {f"q{qi}": " ".join(ph) for qi, (_, ph) in enumerate(phrases)}
    corpus = {f"d{d}": text for d, text in enumerate(docs)}
    qrels_ids = {f"q{qi}": {f"d{d}": g for d, g in rel.items()} for qi, rel in qrels.items()}
    task_id = f"synthetic-{spec.family}-{spec.variant}-{spec.seed}"
    return Task(task_id, queries, corpus, qrels_ids)


def load_spec(path) -> FixtureSpec:
    return FixtureSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# Task sizes of the fourteen evaluation tasks: (name, |Q|, |D|, mean doc words).
TASK_SIZES = (
    ("AILACasedocs", 50, 186, 4637),
    ("AILAStatutes", 50, 82, 337),
    ("BarExamQA", 117, 116, 109),
    ("LegalSummarization", 284, 438, 102),
    ("FinanceBenchRetrieval", 150, 145, 230),
    ("FinQARetrieval", 1138, 380, 660),
    ("HC3FinanceRetrieval", 415, 415, 175),
    ("LEMBNarrativeQA", 10449, 355, 50474),
    ("LEMBNeedle", 50, 100, 769),
    ("LEMBPasskey", 50, 100, 759),
    ("LEMBQMSum", 1527, 197, 10058),
    ("LEMBSummScreenFD", 336, 336, 5582),
    ("LEMBWikimQA", 300, 300, 6132),
    ("LIMITSmall", 1000, 46, 73),
)


def table1_profile() -> list[tuple[int, int, int]]:
    return [(q, d, w) for _, q, d, w in TASK_SIZES]
