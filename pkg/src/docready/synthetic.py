"""Deterministic planted-topic corpus generator for tests and demos.

Builds a vocabulary of disjoint per-topic word blocks plus a small shared
background block, then samples documents whose tokens come mostly from one
planted topic. Three labeled sets exercise the scoring pipeline: set A is
drawn from the query's topic, set B is an even split between that topic
and a second one, and set C comes from a third, disjoint topic with more
background noise and shorter documents. A small unlabeled filler batch
covers the remaining topics so every vocabulary term occurs in training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import RawDocument
from .lda import spawn_rng

__all__ = [
    "PlantedCorpusConfig",
    "topic_word",
    "background_word",
    "planted_corpus",
    "planted_query",
    "save_jsonl",
]


@dataclass(frozen=True)
class PlantedCorpusConfig:
    """Shape of the generated corpus.

    Defaults give 5 topics over a 100-term vocabulary (5 blocks of 18
    topic words plus 10 shared background words). Background words are
    sampled at the same rate in every set so they stay topically neutral.
    Set C is deliberately noisier than A and B through shorter documents,
    so its projections wobble more and the set scores higher disparity.
    Filler documents top every topic up to the token mass of the query
    topic; without that balance the heaviest topic tends to split across
    two learned topics while two light ones merge.
    """

    n_topics: int = 5
    words_per_topic: int = 18
    n_background: int = 10
    docs_per_set: int = 200
    doc_length: int = 12
    background_fraction: float = 0.10
    noisy_doc_length: int = 7
    noisy_background_fraction: float = 0.10
    noisy_admix_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_topics < 3:
            raise ValueError("need at least 3 topics for the A/B/C construction")
        if min(self.words_per_topic, self.n_background, self.docs_per_set) < 1:
            raise ValueError("words_per_topic, n_background, docs_per_set must be >= 1")
        if min(self.doc_length, self.noisy_doc_length) < 2:
            raise ValueError("document lengths must be >= 2")
        fracs = (
            self.background_fraction,
            self.noisy_background_fraction,
            self.noisy_admix_fraction,
        )
        for frac in fracs:
            if not 0 <= frac < 1:
                raise ValueError(f"mixture fractions must be in [0, 1), got {frac}")

    @property
    def vocabulary_size(self) -> int:
        return self.n_topics * self.words_per_topic + self.n_background


def topic_word(k: int, j: int) -> str:
    """The j-th word of topic k's block."""
    return f"t{k}w{j:02d}"


def background_word(j: int) -> str:
    """The j-th shared background word."""
    return f"bg{j:02d}"


def _sample_doc(rng: np.random.Generator, cfg: PlantedCorpusConfig, topic: int,
                length: int, bg_frac: float, admix_topic: int | None = None,
                admix_frac: float = 0.0) -> str:
    tokens = []
    for _ in range(length):
        u = rng.random()
        if u < bg_frac:
            tokens.append(background_word(int(rng.integers(cfg.n_background))))
        elif admix_topic is not None and u < bg_frac + admix_frac:
            tokens.append(topic_word(admix_topic, int(rng.integers(cfg.words_per_topic))))
        else:
            tokens.append(topic_word(topic, int(rng.integers(cfg.words_per_topic))))
    return " ".join(tokens)


def planted_corpus(cfg: PlantedCorpusConfig | None = None) -> list[RawDocument]:
    """Generate the labeled A/B/C sets plus mass-balancing filler.

    A: docs_per_set documents from topic 0. B: half topic 0, half topic 1.
    C: topic 2, with shorter documents and a per-document admixture from
    one of the remaining topics, so its members genuinely disagree with
    each other. Filler ("bg" set) adds plain documents until every topic
    carries about as many topical tokens as topic 0, which keeps the
    learned topics aligned one-to-one with the planted blocks.
    Deterministic for a given config.
    """
    cfg = cfg or PlantedCorpusConfig()
    rng = spawn_rng(cfg.seed)
    docs: list[RawDocument] = []
    topic_tokens = [0.0] * cfg.n_topics

    for i in range(cfg.docs_per_set):
        docs.append(RawDocument(
            id=f"A-{i:04d}",
            text=_sample_doc(rng, cfg, 0, cfg.doc_length, cfg.background_fraction),
            set_key="A",
        ))
        topic_tokens[0] += cfg.doc_length * (1 - cfg.background_fraction)
    for i in range(cfg.docs_per_set):
        topic = 0 if i < cfg.docs_per_set // 2 else 1
        docs.append(RawDocument(
            id=f"B-{i:04d}",
            text=_sample_doc(rng, cfg, topic, cfg.doc_length, cfg.background_fraction),
            set_key="B",
        ))
        topic_tokens[topic] += cfg.doc_length * (1 - cfg.background_fraction)
    admix_choices = list(range(3, cfg.n_topics)) or [1]
    for i in range(cfg.docs_per_set):
        admix = admix_choices[i % len(admix_choices)]
        docs.append(RawDocument(
            id=f"C-{i:04d}",
            text=_sample_doc(
                rng, cfg, 2, cfg.noisy_doc_length, cfg.noisy_background_fraction,
                admix_topic=admix, admix_frac=cfg.noisy_admix_fraction,
            ),
            set_key="C",
        ))
        topical = cfg.noisy_doc_length * (1 - cfg.noisy_background_fraction)
        topic_tokens[2] += topical - cfg.noisy_doc_length * cfg.noisy_admix_fraction
        topic_tokens[admix] += cfg.noisy_doc_length * cfg.noisy_admix_fraction

    i = 0
    target = max(topic_tokens)
    per_filler_doc = cfg.doc_length * (1 - cfg.background_fraction)
    for topic in range(1, cfg.n_topics):
        while topic_tokens[topic] + per_filler_doc <= target:
            docs.append(RawDocument(
                id=f"F-{i:04d}",
                text=_sample_doc(rng, cfg, topic, cfg.doc_length, cfg.background_fraction),
                set_key="bg",
            ))
            topic_tokens[topic] += per_filler_doc
            i += 1
    return docs


def planted_query(cfg: PlantedCorpusConfig | None = None, n_background: int = 6) -> str:
    """A query anchored on topic 0 by its first block word.

    One topic keyword plus ``n_background`` distinct background words;
    with the defaults that is a 7-token query whose only topical signal
    is the keyword, so deleting it is the most disruptive edit.
    """
    cfg = cfg or PlantedCorpusConfig()
    if n_background > cfg.n_background:
        raise ValueError(
            f"n_background={n_background} exceeds the {cfg.n_background} background words"
        )
    return " ".join([topic_word(0, 0)] + [background_word(j) for j in range(n_background)])


def save_jsonl(docs: list[RawDocument], path: str | Path) -> None:
    """Write documents in the JSONL shape the ingest step reads."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for d in docs:
            record = {"id": d.id, "text": d.text}
            if d.set_key is not None:
                record["set_key"] = d.set_key
            fh.write(json.dumps(record, sort_keys=True) + "\n")
