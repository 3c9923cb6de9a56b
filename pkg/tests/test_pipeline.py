"""Config loading, report assembly, and CLI end-to-end tests."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from docready.cli import main
from docready.corpus import Vocabulary
from docready.lda import TopicModel
from docready.metrics import SetScore, rank_sets
from docready.pipeline import (
    ConfigError,
    REPORT_FORMAT_VERSION,
    config_hash,
    equivalence_classes,
    load_run_config,
)


def write_config(dir_path: Path, base: dict, **updates) -> Path:
    cfg = {**base, **updates}
    p = dir_path / "config.json"
    p.write_text(json.dumps(cfg), encoding="utf-8")
    return p


MINIMAL = {"input_path": "corpus.jsonl", "query_text": "hello world"}


class TestLoadRunConfig:
    def test_defaults(self, tmp_path):
        cfg = load_run_config(write_config(tmp_path, MINIMAL))
        assert cfg.n_runs == 20
        assert cfg.delta == 0.0
        assert cfg.master_seed == 0
        assert cfg.workers == 1
        assert cfg.reuse_model is False
        assert cfg.lda.K == 50
        assert cfg.jr.renyi_order == 0.5
        assert cfg.preprocess.min_doc_freq == 5

    def test_nested_sections(self, tmp_path):
        p = write_config(
            tmp_path, MINIMAL,
            lda={"K": 7, "alpha": 0.2},
            jr={"renyi_order": 0.3, "weights": None},
            preprocess={"min_doc_freq": 2, "charset_filter": False},
        )
        cfg = load_run_config(p)
        assert cfg.lda.K == 7 and cfg.lda.alpha == 0.2
        assert cfg.jr.renyi_order == 0.3
        assert cfg.preprocess.min_doc_freq == 2
        assert cfg.preprocess.charset_filter is False

    def test_overrides(self, tmp_path):
        p = write_config(tmp_path, MINIMAL, master_seed=5, output_dir="a")
        cfg = load_run_config(p, seed_override=99, output_dir_override="b")
        assert cfg.master_seed == 99
        assert cfg.output_dir == "b"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            load_run_config(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "config.json"
        p.write_text("{broken")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_run_config(p)

    def test_non_object(self, tmp_path):
        p = tmp_path / "config.json"
        p.write_text("[1, 2]")
        with pytest.raises(ConfigError, match="JSON object"):
            load_run_config(p)

    def test_missing_required_key(self, tmp_path):
        p = write_config(tmp_path, {"input_path": "x"})
        with pytest.raises(ConfigError, match="query_text"):
            load_run_config(p)

    def test_unknown_keys_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown config keys: tpyo"):
            load_run_config(write_config(tmp_path, MINIMAL, tpyo=1))
        with pytest.raises(ConfigError, match="unknown lda keys"):
            load_run_config(write_config(tmp_path, MINIMAL, lda={"kay": 5}))
        with pytest.raises(ConfigError, match="unknown preprocess keys"):
            load_run_config(write_config(tmp_path, MINIMAL, preprocess={"stopwords": []}))

    def test_lda_seed_not_configurable(self, tmp_path):
        p = write_config(tmp_path, MINIMAL, lda={"seed": 4})
        with pytest.raises(ConfigError, match="master_seed"):
            load_run_config(p)

    def test_invalid_values_wrapped(self, tmp_path):
        with pytest.raises(ConfigError, match="n_runs"):
            load_run_config(write_config(tmp_path, MINIMAL, n_runs=0))
        with pytest.raises(ConfigError, match="renyi_order"):
            load_run_config(write_config(tmp_path, MINIMAL, jr={"renyi_order": 1.5}))

    def test_stopwords_path(self, tmp_path):
        words = tmp_path / "stop.txt"
        words.write_text("foo\nbar\n\n")
        p = write_config(tmp_path, MINIMAL, preprocess={"stopwords_path": str(words)})
        cfg = load_run_config(p)
        assert cfg.preprocess.stopword_list == frozenset({"foo", "bar"})

    def test_stopwords_path_missing(self, tmp_path):
        p = write_config(tmp_path, MINIMAL, preprocess={"stopwords_path": "gone.txt"})
        with pytest.raises(ConfigError, match="stopwords_path"):
            load_run_config(p)

    def test_jr_weights_list_accepted(self, tmp_path):
        p = write_config(tmp_path, MINIMAL, jr={"weights": [0.5, 0.5]})
        assert load_run_config(p).jr.weights == (0.5, 0.5)


class TestConfigHash:
    def base(self, tmp_path, **updates):
        return load_run_config(write_config(tmp_path, MINIMAL, **updates))

    def test_shape(self, tmp_path):
        h = config_hash(self.base(tmp_path))
        assert len(h) == 64 and int(h, 16) >= 0

    def test_ignores_paths_seeds_and_workers(self, tmp_path):
        h0 = config_hash(self.base(tmp_path))
        same = [
            self.base(tmp_path, master_seed=9),
            self.base(tmp_path, workers=4),
            self.base(tmp_path, output_dir="elsewhere"),
            self.base(tmp_path, input_path="other.jsonl"),
            self.base(tmp_path, delta=0.2),
        ]
        assert all(config_hash(c) == h0 for c in same)

    def test_tracks_scoring_semantics(self, tmp_path):
        h0 = config_hash(self.base(tmp_path))
        different = [
            self.base(tmp_path, query_text="other question"),
            self.base(tmp_path, n_runs=7),
            self.base(tmp_path, lda={"K": 9}),
            self.base(tmp_path, preprocess={"min_doc_freq": 2}),
            self.base(tmp_path, jr={"renyi_order": 0.4}),
        ]
        hashes = {config_hash(c) for c in different}
        assert h0 not in hashes and len(hashes) == len(different)


def score(key, rel, dd=0.5):
    return SetScore(
        set_key=key, relevance=rel, disparity=dd,
        coherence=1.0 / dd, n_docs_scored=1, n_docs_skipped=0,
    )


class TestEquivalenceClasses:
    def test_zero_delta_groups_exact_ties_only(self):
        ranked = rank_sets([score("a", 0.50), score("b", 0.50, dd=0.6), score("c", 0.30)])
        assert equivalence_classes(ranked, 0.0) == [["a", "b"], ["c"]]

    def test_delta_groups_near_scores(self):
        ranked = rank_sets([score("a", 0.50), score("b", 0.48), score("c", 0.30)])
        assert equivalence_classes(ranked, 0.03) == [["a", "b"], ["c"]]

    def test_greedy_requires_pairwise_closeness(self):
        # 0.46 is within delta of 0.48 but not of 0.50, so it cannot join.
        ranked = rank_sets([score("a", 0.50), score("b", 0.48), score("c", 0.46)])
        assert equivalence_classes(ranked, 0.03) == [["a", "b"], ["c"]]

    def test_empty(self):
        assert equivalence_classes([], 0.1) == []

    def test_classes_are_pairwise_within_delta(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            delta = float(rng.uniform(0, 0.2))
            scores = [score(f"s{i}", float(rng.random())) for i in range(8)]
            ranked = rank_sets(scores)
            rel = {s.set_key: s.relevance for s in ranked}
            classes = equivalence_classes(ranked, delta)
            assert [k for c in classes for k in c] == [s.set_key for s in ranked]
            for c in classes:
                for x in c:
                    for y in c:
                        assert abs(rel[x] - rel[y]) <= delta
            for prev, nxt in zip(classes, classes[1:]):
                head = nxt[0]
                assert any(abs(rel[head] - rel[m]) > delta for m in prev)


def run_cli(argv, capsys=None):
    code = main(argv)
    if capsys is None:
        return code, ""
    return code, capsys.readouterr()


@pytest.fixture(scope="module")
def mini_paths(mini_fixture, tmp_path_factory):
    """Config file plus a trained model shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = write_config(root, mini_fixture["config"])
    train_dir = root / "trained"
    assert main(["train", "--config", str(cfg_path), "--output-dir", str(train_dir)]) == 0
    return {
        "config": cfg_path,
        "train_dir": train_dir,
        "model": train_dir / "model.json",
        "root": root,
    }


class TestCmdTrain:
    def test_artifacts_exist_and_reload(self, mini_paths):
        vocab = Vocabulary.load(mini_paths["train_dir"] / "vocab.json")
        model = TopicModel.load(mini_paths["model"], vocab)
        assert model.K == 5
        assert json.loads((mini_paths["train_dir"] / "timings.json").read_text()).keys() == {
            "train_seconds"
        }

    def test_summary_printed(self, mini_paths, capsys):
        code = main(
            ["train", "--config", str(mini_paths["config"]),
             "--output-dir", str(mini_paths["root"] / "t2")]
        )
        out = capsys.readouterr().out
        assert code == 0
        assert "vocabulary:" in out
        assert "topic 0:" in out

    def test_rerun_is_byte_identical(self, mini_paths, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--config", str(mini_paths["config"]), "--output-dir", str(a)]) == 0
        assert main(["train", "--config", str(mini_paths["config"]), "--output-dir", str(b)]) == 0
        assert (a / "model.json").read_bytes() == (b / "model.json").read_bytes()
        assert (a / "vocab.json").read_bytes() == (b / "vocab.json").read_bytes()

    def test_missing_input_exits_2_naming_path(self, tmp_path, capsys):
        p = write_config(tmp_path, MINIMAL, input_path=str(tmp_path / "absent.jsonl"))
        code = main(["train", "--config", str(p), "--output-dir", str(tmp_path / "o")])
        assert code == 2
        assert "absent.jsonl" in capsys.readouterr().err

    def test_missing_config_exits_2(self, tmp_path, capsys):
        code = main(["train", "--config", str(tmp_path / "no.json")])
        assert code == 2
        assert "does not exist" in capsys.readouterr().err


def read_csv(path):
    with Path(path).open(encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def scored(mini_paths):
    out = mini_paths["root"] / "scored"
    code = main(["score", "--config", str(mini_paths["config"]), "--output-dir", str(out)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    return {"dir": out, "report": report}


class TestCmdScore:
    def test_emits_all_files(self, scored):
        for name in ("report.json", "scores.csv", "timeseries.csv", "timings.json"):
            assert (scored["dir"] / name).is_file()

    def test_report_schema(self, scored):
        rep = scored["report"]
        assert rep["format_version"] == REPORT_FORMAT_VERSION
        assert len(rep["config_hash"]) == 64
        assert rep["mode"] == "retrain-per-run"
        assert rep["n_runs"] == 3
        assert rep["query"]["dropped_terms"] == []
        assert sum(rep["query"]["mean_theta"]) == pytest.approx(1.0, abs=1e-9)
        keys = {row["set_key"] for row in rep["sets"]}
        assert {"A", "B", "C"} <= keys
        for row in rep["sets"]:
            assert row["relevance_var"] >= 0.0
            assert row["disparity_var"] >= 0.0
            assert row["n_docs_scored"] >= 2
            coh = row["coherence"]
            assert coh == "inf" or coh > 0

    def test_ranking_matches_rank_sets_of_means(self, scored):
        rep = scored["report"]
        rebuilt = rank_sets(
            [
                SetScore(
                    set_key=row["set_key"],
                    relevance=row["relevance_mean"],
                    disparity=row["disparity_mean"],
                    coherence=1.0,
                    n_docs_scored=row["n_docs_scored"],
                    n_docs_skipped=row["n_docs_skipped"],
                )
                for row in rep["sets"]
            ]
        )
        assert [s.set_key for s in rebuilt] == rep["ranking"]
        by_rank = sorted(rep["sets"], key=lambda r: r["rank"])
        assert [r["set_key"] for r in by_rank] == rep["ranking"]

    def test_timeseries_reproduces_means_and_vars(self, scored):
        rep = scored["report"]
        rows = read_csv(scored["dir"] / "timeseries.csv")
        assert len(rows) == rep["n_runs"] * len(rep["sets"])
        per_set: dict[str, list[float]] = {}
        per_set_dd: dict[str, list[float]] = {}
        for row in rows:
            per_set.setdefault(row["set_key"], []).append(float(row["relevance"]))
            per_set_dd.setdefault(row["set_key"], []).append(float(row["disparity"]))
        for row in rep["sets"]:
            rels = per_set[row["set_key"]]
            dds = per_set_dd[row["set_key"]]
            mean = sum(rels) / len(rels)
            var = sum((x - mean) ** 2 for x in rels) / len(rels)
            assert row["relevance_mean"] == pytest.approx(mean, abs=1e-12)
            assert row["relevance_var"] == pytest.approx(var, abs=1e-12)
            dd_mean = sum(dds) / len(dds)
            assert row["disparity_mean"] == pytest.approx(dd_mean, abs=1e-12)

    def test_scores_csv_matches_report(self, scored):
        rep = scored["report"]
        rows = read_csv(scored["dir"] / "scores.csv")
        assert [r["set_key"] for r in rows] == rep["ranking"]
        by_key = {row["set_key"]: row for row in rep["sets"]}
        for r in rows:
            assert float(r["relevance_mean"]) == by_key[r["set_key"]]["relevance_mean"]
            assert int(r["rank"]) == by_key[r["set_key"]]["rank"]

    def test_determinism_byte_identical(self, mini_paths, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(
                ["score", "--config", str(mini_paths["config"]), "--output-dir", str(out)]
            ) == 0
        for name in ("report.json", "scores.csv", "timeseries.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_reuse_model_mode_is_labeled(self, mini_paths, tmp_path):
        out = tmp_path / "reused"
        code = main(
            ["score", "--config", str(mini_paths["config"]),
             "--output-dir", str(out), "--model", str(mini_paths["model"])]
        )
        assert code == 0
        rep = json.loads((out / "report.json").read_text())
        assert rep["mode"] == "reuse-model"

    def test_worker_count_does_not_change_results(self, mini_fixture, mini_paths, tmp_path):
        serial, parallel = tmp_path / "w1", tmp_path / "w2"
        pcfg = write_config(tmp_path, mini_fixture["config"], workers=2)
        assert main(
            ["score", "--config", str(mini_paths["config"]), "--output-dir", str(serial)]
        ) == 0
        assert main(["score", "--config", str(pcfg), "--output-dir", str(parallel)]) == 0
        assert (serial / "report.json").read_bytes() == (parallel / "report.json").read_bytes()

    def test_oov_query_exits_1(self, mini_fixture, tmp_path, capsys):
        p = write_config(tmp_path, mini_fixture["config"], query_text="qqqq zzzz")
        code = main(["score", "--config", str(p), "--output-dir", str(tmp_path / "o")])
        assert code == 1
        err = capsys.readouterr().err
        assert "no in-vocabulary" in err and "zzzz" in err


def write_tiny_corpus(path: Path):
    """Three sets: one matching the query exactly, one disjoint, one too small."""
    rows = []
    for i in range(8):
        rows.append({"id": f"q{i}", "text": "alpha beta", "set_key": "match"})
        rows.append({"id": f"o{i}", "text": "gamma delta", "set_key": "other"})
    rows.append({"id": "lone", "text": "alpha gamma", "set_key": "tiny"})
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")


@pytest.fixture()
def tiny_config(tmp_path):
    corpus = tmp_path / "tiny.jsonl"
    write_tiny_corpus(corpus)
    return write_config(
        tmp_path,
        {
            "input_path": str(corpus),
            "query_text": "alpha beta",
            "n_runs": 2,
            "master_seed": 3,
            "lda": {"K": 2, "alpha": 0.5, "train_iterations": 80, "infer_iterations": 40},
        },
    )


class TestDegenerateCorpus:
    def test_query_matching_set_ranks_first(self, tiny_config, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["score", "--config", str(tiny_config), "--output-dir", str(out)]) == 0
        rep = json.loads((out / "report.json").read_text())
        assert rep["ranking"][0] == "match"
        by_key = {row["set_key"]: row for row in rep["sets"]}
        assert by_key["match"]["relevance_mean"] > 0.9
        assert by_key["match"]["relevance_mean"] > by_key["other"]["relevance_mean"]

    def test_undersized_set_dropped_with_notice(self, tiny_config, tmp_path):
        out = tmp_path / "out"
        assert main(["score", "--config", str(tiny_config), "--output-dir", str(out)]) == 0
        rep = json.loads((out / "report.json").read_text())
        assert rep["dropped_sets"] == ["tiny"]
        assert "tiny" not in rep["ranking"]


class TestCmdPerturb:
    def test_empty_spec_list(self, mini_paths, tmp_path):
        spec = tmp_path / "p.json"
        spec.write_text("[]")
        out = tmp_path / "out"
        code = main(
            ["perturb", "--config", str(mini_paths["config"]), "--output-dir", str(out),
             "--perturbations", str(spec), "--model", str(mini_paths["model"])]
        )
        assert code == 0
        payload = json.loads((out / "sensitivity.json").read_text())
        assert payload["results"] == []
        rows = read_csv(out / "sensitivity.csv")
        assert rows == []

    def test_rows_and_errors_reported(self, mini_paths, tmp_path):
        spec = tmp_path / "p.json"
        spec.write_text(json.dumps([
            {"label": "rep0", "kind": "repetition", "position_or_term": 0},
            {"label": "bad", "kind": "wiggle", "position_or_term": 0},
            {"label": "del_far", "kind": "deletion", "position_or_term": 99},
        ]))
        out = tmp_path / "out"
        code = main(
            ["perturb", "--config", str(mini_paths["config"]), "--output-dir", str(out),
             "--perturbations", str(spec), "--model", str(mini_paths["model"])]
        )
        assert code == 0
        payload = json.loads((out / "sensitivity.json").read_text())
        assert len(payload["spec_errors"]) == 1 and "entry 1" in payload["spec_errors"][0]
        labels = [r["label"] for r in payload["results"]]
        assert labels == ["rep0", "del_far"]
        ok, bad = payload["results"]
        assert ok["error"] is None and ok["s1"] >= 0
        assert "out of range" in bad["error"] and bad["s1"] == "nan"
        rows = read_csv(out / "sensitivity.csv")
        assert [r["label"] for r in rows] == labels
        assert any(col.startswith("s2_") for col in rows[0])

    def test_missing_spec_file_exits_2(self, mini_paths, tmp_path, capsys):
        code = main(
            ["perturb", "--config", str(mini_paths["config"]),
             "--output-dir", str(tmp_path / "o"), "--perturbations", str(tmp_path / "no.json")]
        )
        assert code == 2
        assert "does not exist" in capsys.readouterr().err

    def test_sensitivity_deterministic(self, mini_paths, tmp_path):
        spec = tmp_path / "p.json"
        spec.write_text(json.dumps([
            {"label": "rep1", "kind": "repetition", "position_or_term": 1},
        ]))
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(
                ["perturb", "--config", str(mini_paths["config"]), "--output-dir", str(out),
                 "--perturbations", str(spec), "--model", str(mini_paths["model"])]
            ) == 0
        assert (a / "sensitivity.json").read_bytes() == (b / "sensitivity.json").read_bytes()


def fake_report(path: Path, sets: list[dict], chash="c" * 64, version=REPORT_FORMAT_VERSION):
    payload = {"format_version": version, "config_hash": chash, "sets": sets}
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def set_row(key, rel, dd=0.5, coh=2.0):
    return {
        "set_key": key, "relevance_mean": rel, "disparity_mean": dd,
        "coherence": coh, "n_docs_scored": 4, "n_docs_skipped": 0,
    }


class TestCmdRank:
    def test_merges_and_ranks(self, tmp_path, capsys):
        r1 = fake_report(tmp_path / "r1.json", [set_row("a", 0.9, dd=0.1), set_row("b", 0.5)])
        r2 = fake_report(tmp_path / "r2.json", [set_row("c", 0.7, coh="inf")])
        out = tmp_path / "out"
        code = main(["rank", str(r1), str(r2), "--delta", "0.0", "--output-dir", str(out)])
        assert code == 0
        payload = json.loads((out / "ranking.json").read_text())
        assert payload["ranking"] == ["a", "c", "b"]
        assert payload["equivalence_classes"] == [["a"], ["c"], ["b"]]
        assert payload["sets"][1]["coherence"] == "inf"
        assert "1. a:" in capsys.readouterr().out

    def test_delta_classes(self, tmp_path):
        r1 = fake_report(
            tmp_path / "r1.json",
            [set_row("a", 0.50), set_row("b", 0.48, dd=0.6), set_row("c", 0.30)],
        )
        out = tmp_path / "out"
        assert main(["rank", str(r1), "--delta", "0.03", "--output-dir", str(out)]) == 0
        payload = json.loads((out / "ranking.json").read_text())
        assert payload["equivalence_classes"] == [["a", "b"], ["c"]]

    def test_config_hash_mismatch_exits_2(self, tmp_path, capsys):
        r1 = fake_report(tmp_path / "r1.json", [set_row("a", 0.9)], chash="1" * 64)
        r2 = fake_report(tmp_path / "r2.json", [set_row("b", 0.8)], chash="2" * 64)
        assert main(["rank", str(r1), str(r2)]) == 2
        assert "different configs" in capsys.readouterr().err

    def test_duplicate_keys_exit_2(self, tmp_path, capsys):
        r1 = fake_report(tmp_path / "r1.json", [set_row("a", 0.9)])
        r2 = fake_report(tmp_path / "r2.json", [set_row("a", 0.8)])
        assert main(["rank", str(r1), str(r2)]) == 2
        assert "duplicate set key" in capsys.readouterr().err

    def test_missing_file_exits_2(self, tmp_path, capsys):
        assert main(["rank", str(tmp_path / "no.json")]) == 2
        assert "does not exist" in capsys.readouterr().err

    def test_bad_format_version_exits_2(self, tmp_path, capsys):
        r1 = fake_report(tmp_path / "r1.json", [set_row("a", 0.9)], version=99)
        assert main(["rank", str(r1)]) == 2
        assert "unsupported report format" in capsys.readouterr().err

    def test_negative_delta_exits_2(self, tmp_path, capsys):
        r1 = fake_report(tmp_path / "r1.json", [set_row("a", 0.9)])
        assert main(["rank", str(r1), "--delta", "-0.1"]) == 2
        assert "delta" in capsys.readouterr().err

    def test_infinite_coherence_survives_round_trip(self, tmp_path):
        r1 = fake_report(
            tmp_path / "r1.json",
            [set_row("a", 0.9, dd=0.0, coh="inf"), set_row("b", 0.9, dd=0.2)],
        )
        out = tmp_path / "out"
        assert main(["rank", str(r1), "--output-dir", str(out)]) == 0
        payload = json.loads((out / "ranking.json").read_text())
        # Equal relevance: the zero-disparity set wins the tie.
        assert payload["ranking"] == ["a", "b"]
        assert payload["sets"][0]["coherence"] == "inf"
