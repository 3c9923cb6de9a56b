"""Shared fixtures: the planted corpus at full and reduced scale."""

from __future__ import annotations

import pytest

from docready import corpus, lda, synthetic

# One line per acceptance criterion, echoed after the run summary so the
# pass/fail verdicts stay visible under output capture.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def planted():
    """Full-size planted corpus: raws, bows, vocab, query, labeled sets."""
    cfg = synthetic.PlantedCorpusConfig(seed=7)
    raws = synthetic.planted_corpus(cfg)
    pre = corpus.PreprocessConfig()
    docs, vocab = corpus.preprocess(raws, pre)
    q_text = synthetic.planted_query(cfg)
    q_tokens = corpus.content_tokens(q_text, pre)
    q_bow, _ = corpus.preprocess_query(q_text, vocab, pre)
    sets = {s.key: s for s in corpus.partition(docs, raws)}
    return {
        "cfg": cfg,
        "raws": raws,
        "docs": docs,
        "vocab": vocab,
        "pre": pre,
        "q_text": q_text,
        "q_tokens": q_tokens,
        "q_bow": q_bow,
        "sets": sets,
    }


@pytest.fixture(scope="session")
def planted_lda_config():
    return lda.LdaConfig(
        K=5, alpha=0.1, beta=0.01, train_iterations=500, infer_iterations=100, seed=123
    )


@pytest.fixture(scope="session")
def planted_model(planted, planted_lda_config):
    """One trained model on the full fixture, shared across tests."""
    return lda.train(planted["docs"], planted["vocab"], planted_lda_config)


@pytest.fixture(scope="session")
def mini_fixture(tmp_path_factory):
    """Small corpus file plus config dict for fast CLI round-trips."""
    cfg = synthetic.PlantedCorpusConfig(
        seed=3, docs_per_set=30, doc_length=8, noisy_doc_length=6, words_per_topic=8
    )
    raws = synthetic.planted_corpus(cfg)
    root = tmp_path_factory.mktemp("mini")
    corpus_path = root / "corpus.jsonl"
    synthetic.save_jsonl(raws, corpus_path)
    config = {
        "input_path": str(corpus_path),
        "query_text": synthetic.planted_query(cfg, n_background=4),
        "n_runs": 3,
        "master_seed": 11,
        "preprocess": {"min_doc_freq": 3},
        "lda": {
            "K": 5,
            "alpha": 0.1,
            "beta": 0.01,
            "train_iterations": 150,
            "infer_iterations": 60,
        },
    }
    return {"root": root, "corpus_path": corpus_path, "config": config, "cfg": cfg}
