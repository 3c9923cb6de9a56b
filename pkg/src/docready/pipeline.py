"""End-to-end orchestration: preprocess, train, score, perturb, rank.

Implements the command bodies behind the CLI. Every run's randomness is
derived from the config's master seed, so a fixed (inputs, config) pair
yields byte-identical model and report files; wall-clock timings are the
one nondeterministic output and live in their own file.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .corpus import (
    BowDocument,
    DocumentSet,
    EmptyCorpusError,
    PreprocessConfig,
    Vocabulary,
    content_tokens,
    ingest,
    partition,
    preprocess,
    preprocess_query,
)
from .lda import LdaConfig, TopicModel, derive_seed, project, top_words, train
from .metrics import (
    JrParams,
    SetScore,
    coherence_from_disparity,
    disparity,
    informationally_equivalent,
    rank_sets,
    relevance,
)
from .sensitivity import load_perturbation_specs, sensitivity_report

logger = logging.getLogger(__name__)

__all__ = [
    "RunConfig",
    "ConfigError",
    "MetricFailure",
    "load_run_config",
    "config_hash",
    "equivalence_classes",
    "cmd_train",
    "cmd_score",
    "cmd_perturb",
    "cmd_rank",
]

REPORT_FORMAT_VERSION = 1


class ConfigError(Exception):
    """Bad configuration or unusable input file; maps to exit code 2."""


class MetricFailure(Exception):
    """Data admitted no meaningful score; maps to exit code 1."""


@dataclass(frozen=True)
class RunConfig:
    """Declarative description of one scoring pipeline invocation."""

    input_path: str
    query_text: str
    input_format: str = "jsonl"
    text_field: str = "text"
    id_field: str = "id"
    set_key_field: str = "set_key"
    n_runs: int = 20
    delta: float = 0.0
    master_seed: int = 0
    workers: int = 1
    reuse_model: bool = False
    output_dir: str = "out"
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    lda: LdaConfig = field(default_factory=LdaConfig)
    jr: JrParams = field(default_factory=JrParams)

    def __post_init__(self) -> None:
        if self.n_runs < 1:
            raise ValueError(f"n_runs must be >= 1, got {self.n_runs}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.delta < 0:
            raise ValueError(f"delta must be nonnegative, got {self.delta}")
        if not self.query_text.strip():
            raise ValueError("query_text must be nonempty")


_TOP_LEVEL_KEYS = {
    "input_path", "query_text", "input_format", "text_field", "id_field",
    "set_key_field", "n_runs", "delta", "master_seed", "workers",
    "reuse_model", "output_dir", "preprocess", "lda", "jr",
}
_PREPROCESS_KEYS = {
    "min_doc_freq", "min_doc_tokens", "lowercase", "strip_urls",
    "charset_filter", "stopwords_path",
}
_LDA_KEYS = {"K", "alpha", "beta", "train_iterations", "infer_iterations", "burn_in", "thin"}
_JR_KEYS = {"renyi_order", "weights"}


def _reject_unknown(section: str, given: dict, allowed: set[str]) -> None:
    unknown = set(given) - allowed
    if unknown:
        raise ConfigError(f"unknown {section} keys: {', '.join(sorted(unknown))}")


def _build_preprocess(raw: dict) -> PreprocessConfig:
    _reject_unknown("preprocess", raw, _PREPROCESS_KEYS)
    kwargs = dict(raw)
    stopwords_path = kwargs.pop("stopwords_path", None)
    if stopwords_path is not None:
        p = Path(stopwords_path)
        if not p.is_file():
            raise ConfigError(f"stopwords_path does not exist: {stopwords_path}")
        words = [w.strip() for w in p.read_text(encoding="utf-8").splitlines() if w.strip()]
        kwargs["stopword_list"] = frozenset(words)
    return PreprocessConfig(**kwargs)


def load_run_config(
    path: str | Path,
    *,
    seed_override: int | None = None,
    output_dir_override: str | None = None,
) -> RunConfig:
    """Read and validate a JSON config file, applying CLI overrides."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file does not exist: {path}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    _reject_unknown("config", raw, _TOP_LEVEL_KEYS)
    for req in ("input_path", "query_text"):
        if req not in raw:
            raise ConfigError(f"{path}: missing required key {req!r}")
    lda_raw = dict(raw.get("lda", {}))
    if "seed" in lda_raw:
        raise ConfigError("lda.seed is not configurable; seeds derive from master_seed")
    _reject_unknown("lda", lda_raw, _LDA_KEYS)
    jr_raw = dict(raw.get("jr", {}))
    _reject_unknown("jr", jr_raw, _JR_KEYS)
    if isinstance(jr_raw.get("weights"), list):
        jr_raw["weights"] = tuple(jr_raw["weights"])
    try:
        cfg = RunConfig(
            input_path=raw["input_path"],
            query_text=raw["query_text"],
            input_format=raw.get("input_format", "jsonl"),
            text_field=raw.get("text_field", "text"),
            id_field=raw.get("id_field", "id"),
            set_key_field=raw.get("set_key_field", "set_key"),
            n_runs=raw.get("n_runs", 20),
            delta=raw.get("delta", 0.0),
            master_seed=raw.get("master_seed", 0),
            workers=raw.get("workers", 1),
            reuse_model=raw.get("reuse_model", False),
            output_dir=raw.get("output_dir", "out"),
            preprocess=_build_preprocess(dict(raw.get("preprocess", {}))),
            lda=LdaConfig(**lda_raw),
            jr=JrParams(**jr_raw),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if seed_override is not None:
        cfg = replace(cfg, master_seed=seed_override)
    if output_dir_override is not None:
        cfg = replace(cfg, output_dir=output_dir_override)
    return cfg


def config_hash(cfg: RunConfig) -> str:
    """Hash of the scoring semantics: query, preprocessing, model, metric.

    Paths, seeds, worker counts, and output locations are excluded, so
    reports over different corpora scored the same way share a hash.
    """
    pre = asdict(cfg.preprocess)
    pre["stopword_list"] = sorted(pre["stopword_list"])
    lda = asdict(cfg.lda)
    lda.pop("seed")
    payload = {
        "query_text": cfg.query_text,
        "n_runs": cfg.n_runs,
        "preprocess": pre,
        "lda": lda,
        "jr": asdict(cfg.jr),
    }
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _json_default(obj: object) -> object:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _json_float(x: float) -> float | str:
    # Strict JSON has no Infinity/NaN literals; flag them as strings.
    if math.isinf(x):
        return "inf"
    if math.isnan(x):
        return "nan"
    return x


def _write_json(path: Path, obj: object) -> None:
    path.write_text(
        json.dumps(obj, sort_keys=True, indent=2, default=_json_default, allow_nan=False)
        + "\n",
        encoding="utf-8",
    )


def _load_corpus(cfg: RunConfig):
    try:
        raws = ingest(
            cfg.input_path,
            format=cfg.input_format,
            text_field=cfg.text_field,
            id_field=cfg.id_field,
            set_key_field=cfg.set_key_field,
        )
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        docs, vocab = preprocess(raws, cfg.preprocess)
    except EmptyCorpusError as exc:
        raise MetricFailure(str(exc)) from exc
    return raws, docs, vocab


def _prepare_query(cfg: RunConfig, vocab: Vocabulary) -> tuple[BowDocument, list[str]]:
    q_bow, dropped = preprocess_query(cfg.query_text, vocab, cfg.preprocess)
    if not q_bow.counts:
        raise MetricFailure(
            "query has no in-vocabulary terms; dropped: " + ", ".join(sorted(set(dropped)))
        )
    return q_bow, dropped


def cmd_train(cfg: RunConfig) -> int:
    """Preprocess the corpus, fit one model, and persist both artifacts."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    raws, docs, vocab = _load_corpus(cfg)
    lda_cfg = replace(cfg.lda, seed=derive_seed(cfg.master_seed, "train"))
    model = train(docs, vocab, lda_cfg)
    vocab.save(out / "vocab.json")
    model.save(out / "model.json")
    elapsed = time.perf_counter() - t0
    _write_json(out / "timings.json", {"train_seconds": elapsed})

    sets = partition(docs, raws)
    print(f"documents: {len(docs)} kept of {len(raws)} ingested")
    print(f"vocabulary: {len(vocab)} terms")
    print("sets: " + ", ".join(f"{s.key}={len(s.docs)}" for s in sets))
    print(f"topics: K={lda_cfg.K}")
    for k in range(lda_cfg.K):
        words = ", ".join(w for w, _ in top_words(model, k, 5))
        print(f"  topic {k}: {words}")
    print(f"wrote {out / 'model.json'} and {out / 'vocab.json'}")
    return 0


def _score_one_run(
    r: int,
    docs: list[BowDocument],
    vocab: Vocabulary,
    base_lda: LdaConfig,
    sets: list[tuple[str, list[BowDocument]]],
    q_bow: BowDocument,
    master_seed: int,
    jr: JrParams,
    fixed_phi: np.ndarray | None,
) -> tuple[int, dict[str, tuple[float, float]], np.ndarray]:
    """Train (or reuse) one model and score every set against the query."""
    run_seed = derive_seed(master_seed, "run", r)
    if fixed_phi is None:
        model = train(docs, vocab, replace(base_lda, seed=run_seed))
    else:
        model = TopicModel(phi=fixed_phi, vocab=vocab, cfg=base_lda)
    q_theta = project(model, q_bow, derive_seed(run_seed, "query"))
    per_set: dict[str, tuple[float, float]] = {}
    for key, members in sets:
        thetas = [project(model, d, derive_seed(run_seed, "doc", d.id)) for d in members]
        per_set[key] = (relevance(thetas, q_theta), disparity(thetas, jr))
    return r, per_set, q_theta


def _partition_scorable(
    docs: list[BowDocument], raws
) -> tuple[list[tuple[str, list[BowDocument]]], dict[str, int], list[str]]:
    """Split into sets, dropping those with fewer than 2 projectable docs."""
    sets = partition(docs, raws)
    scorable: list[tuple[str, list[BowDocument]]] = []
    skipped_docs: dict[str, int] = {}
    dropped_sets: list[str] = []
    for s in sets:
        projectable = [d for d in s.docs if d.counts]
        skipped_docs[s.key] = len(s.docs) - len(projectable)
        if len(projectable) < 2:
            logger.warning(
                "set %r has %d projectable documents (need 2); dropped from scoring",
                s.key,
                len(projectable),
            )
            dropped_sets.append(s.key)
            continue
        scorable.append((s.key, projectable))
    return scorable, skipped_docs, dropped_sets


def cmd_score(cfg: RunConfig, model_path: str | Path | None = None) -> int:
    """Score every document set over n_runs models and emit report files."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    raws, docs, vocab = _load_corpus(cfg)
    q_bow, dropped_terms = _prepare_query(cfg, vocab)
    scorable, skipped_docs, dropped_sets = _partition_scorable(docs, raws)
    if not scorable:
        raise MetricFailure("no set has the 2 projectable documents scoring requires")

    fixed_phi: np.ndarray | None = None
    base_lda = cfg.lda
    mode = "retrain-per-run"
    if model_path is not None:
        model = TopicModel.load(model_path, vocab)
        fixed_phi, base_lda = model.phi, model.cfg
        mode = "reuse-model"
    elif cfg.reuse_model:
        lda_cfg = replace(cfg.lda, seed=derive_seed(cfg.master_seed, "train"))
        fixed_phi, base_lda = train(docs, vocab, lda_cfg).phi, lda_cfg
        mode = "reuse-model"

    args = [
        (r, docs, vocab, base_lda, scorable, q_bow, cfg.master_seed, cfg.jr, fixed_phi)
        for r in range(1, cfg.n_runs + 1)
    ]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_score_one_run_star, args))
    else:
        results = [_score_one_run(*a) for a in args]
    results.sort(key=lambda t: t[0])

    keys = [key for key, _ in scorable]
    rel_runs = {k: [] for k in keys}
    disp_runs = {k: [] for k in keys}
    q_thetas = []
    for _r, per_set, q_theta in results:
        for k in keys:
            rel_runs[k].append(per_set[k][0])
            disp_runs[k].append(per_set[k][1])
        q_thetas.append(q_theta)

    scores = []
    for key, members in scorable:
        rel_mean = float(np.mean(rel_runs[key]))
        disp_mean = float(np.mean(disp_runs[key]))
        scores.append(
            SetScore(
                set_key=key,
                relevance=rel_mean,
                disparity=disp_mean,
                coherence=coherence_from_disparity(disp_mean),
                n_docs_scored=len(members),
                n_docs_skipped=skipped_docs[key],
            )
        )
    ranked = rank_sets(scores)
    rank_of = {s.set_key: i + 1 for i, s in enumerate(ranked)}
    classes = equivalence_classes(ranked, cfg.delta)
    q_theta_mean = np.mean(np.vstack(q_thetas), axis=0)

    chash = config_hash(cfg)
    report = {
        "format_version": REPORT_FORMAT_VERSION,
        "config_hash": chash,
        "mode": mode,
        "n_runs": cfg.n_runs,
        "master_seed": cfg.master_seed,
        "query": {
            "text": cfg.query_text,
            "dropped_terms": sorted(set(dropped_terms)),
            "mean_theta": q_theta_mean.tolist(),
        },
        "sets": [
            {
                "set_key": s.set_key,
                "relevance_mean": s.relevance,
                "relevance_var": float(np.var(rel_runs[s.set_key])),
                "disparity_mean": s.disparity,
                "disparity_var": float(np.var(disp_runs[s.set_key])),
                "coherence": _json_float(s.coherence),
                "n_docs_scored": s.n_docs_scored,
                "n_docs_skipped": s.n_docs_skipped,
                "rank": rank_of[s.set_key],
            }
            for s in scores
        ],
        "ranking": [s.set_key for s in ranked],
        "equivalence_classes": classes,
        "delta": cfg.delta,
        "dropped_sets": sorted(dropped_sets),
    }
    _write_json(out / "report.json", report)

    with (out / "scores.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            [
                "set_key", "relevance_mean", "relevance_var", "disparity_mean",
                "disparity_var", "coherence", "n_docs_scored", "n_docs_skipped", "rank",
            ]
        )
        for s in ranked:
            w.writerow(
                [
                    s.set_key, repr(s.relevance), repr(float(np.var(rel_runs[s.set_key]))),
                    repr(s.disparity), repr(float(np.var(disp_runs[s.set_key]))),
                    repr(s.coherence), s.n_docs_scored, s.n_docs_skipped, rank_of[s.set_key],
                ]
            )

    with (out / "timeseries.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "set_key", "relevance", "disparity"])
        for r in range(cfg.n_runs):
            for key in keys:
                w.writerow([r + 1, key, repr(rel_runs[key][r]), repr(disp_runs[key][r])])

    _write_json(out / "timings.json", {"score_seconds": time.perf_counter() - t0, "workers": cfg.workers})

    for s in ranked:
        coh = "inf" if math.isinf(s.coherence) else f"{s.coherence:.4f}"
        print(
            f"{rank_of[s.set_key]}. {s.set_key}: relevance={s.relevance:.4f} "
            f"disparity={s.disparity:.4f} coherence={coh}"
        )
    print(f"wrote report to {out / 'report.json'}")
    return 0


def _score_one_run_star(args):
    return _score_one_run(*args)


def cmd_perturb(cfg: RunConfig, spec_path: str | Path, model_path: str | Path | None = None) -> int:
    """Run the perturbation harness and emit sensitivity files."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    spec_file = Path(spec_path)
    if not spec_file.is_file():
        raise ConfigError(f"perturbation spec does not exist: {spec_path}")
    try:
        specs, row_errors = load_perturbation_specs(spec_file)
    except (ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{spec_path}: {exc}") from exc
    for msg in row_errors:
        logger.error("%s: %s", spec_path, msg)

    raws, docs, vocab = _load_corpus(cfg)
    _q_bow, _dropped = _prepare_query(cfg, vocab)
    q_tokens = content_tokens(cfg.query_text, cfg.preprocess)
    scorable, _skipped, _dropped_sets = _partition_scorable(docs, raws)
    sets = [DocumentSet(key=k, docs=tuple(members)) for k, members in scorable]

    if model_path is not None:
        model = TopicModel.load(model_path, vocab)
    else:
        lda_cfg = replace(cfg.lda, seed=derive_seed(cfg.master_seed, "train"))
        model = train(docs, vocab, lda_cfg)

    results = sensitivity_report(
        model, q_tokens, specs, sets, runs=cfg.n_runs, master_seed=cfg.master_seed
    )

    set_keys = [k for k, _ in scorable]
    payload = {
        "format_version": REPORT_FORMAT_VERSION,
        "config_hash": config_hash(cfg),
        "n_runs": cfg.n_runs,
        "master_seed": cfg.master_seed,
        "query_tokens": q_tokens,
        "spec_errors": row_errors,
        "results": [
            {
                "label": res.label,
                "word_space_distance": _json_float(res.word_space_distance),
                "semantic_distance": _json_float(res.semantic_distance),
                "s1": _json_float(res.s1),
                "s2_per_set": {k: _json_float(v) for k, v in res.s2_per_set.items()},
                "s1_runs": list(res.s1_runs),
                "s2_runs_per_set": {k: list(v) for k, v in res.s2_runs_per_set.items()},
                "error": res.error,
            }
            for res in results
        ],
    }
    _write_json(out / "sensitivity.json", payload)

    with (out / "sensitivity.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            ["label", "word_space_distance", "semantic_distance", "s1"]
            + [f"s2_{k}" for k in set_keys]
            + ["error"]
        )
        for res in results:
            w.writerow(
                [res.label, repr(res.word_space_distance), repr(res.semantic_distance), repr(res.s1)]
                + [repr(res.s2_per_set.get(k, math.nan)) for k in set_keys]
                + [res.error or ""]
            )

    _write_json(out / "timings.json", {"perturb_seconds": time.perf_counter() - t0})

    for res in results:
        if res.error is not None:
            print(f"{res.label}: failed ({res.error})")
        else:
            s2s = " ".join(f"s2[{k}]={v:.4f}" for k, v in sorted(res.s2_per_set.items()))
            print(f"{res.label}: s1={res.s1:.4f} {s2s}")
    print(f"wrote sensitivity report to {out / 'sensitivity.json'}")
    return 0


def equivalence_classes(ranked: list[SetScore], delta: float) -> list[list[str]]:
    """Group a ranked score list into greedy pairwise-within-delta classes.

    Walking in rank order, a set joins the open class only if it is within
    delta of every member; otherwise it opens a new class. Greedy grouping
    resolves the non-transitivity of the underlying relation.
    """
    classes: list[list[SetScore]] = []
    current: list[SetScore] = []
    for s in ranked:
        if current and all(
            informationally_equivalent(s.relevance, m.relevance, delta) for m in current
        ):
            current.append(s)
        else:
            if current:
                classes.append(current)
            current = [s]
    if current:
        classes.append(current)
    return [[m.set_key for m in c] for c in classes]


def cmd_rank(score_files: list[str | Path], delta: float, output_dir: str | Path | None = None) -> int:
    """Merge score reports into one ranking with delta-equivalence classes."""
    if not score_files:
        raise ConfigError("no score files given")
    if delta < 0:
        raise ConfigError(f"delta must be nonnegative, got {delta}")
    merged: list[SetScore] = []
    seen_keys: set[str] = set()
    hashes: set[str] = set()
    for path in score_files:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"score file does not exist: {path}")
        try:
            report = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
        if report.get("format_version") != REPORT_FORMAT_VERSION:
            raise ConfigError(f"{path}: unsupported report format")
        hashes.add(report["config_hash"])
        if len(hashes) > 1:
            raise ConfigError(
                "score files were produced under different configs; refusing to merge"
            )
        for row in report["sets"]:
            if row["set_key"] in seen_keys:
                raise ConfigError(f"duplicate set key across score files: {row['set_key']!r}")
            seen_keys.add(row["set_key"])
            coh = row["coherence"]
            merged.append(
                SetScore(
                    set_key=row["set_key"],
                    relevance=row["relevance_mean"],
                    disparity=row["disparity_mean"],
                    coherence=math.inf if coh == "inf" else float(coh),
                    n_docs_scored=row["n_docs_scored"],
                    n_docs_skipped=row["n_docs_skipped"],
                )
            )
    ranked = rank_sets(merged)
    classes = equivalence_classes(ranked, delta)
    payload = {
        "format_version": REPORT_FORMAT_VERSION,
        "config_hash": next(iter(hashes)),
        "delta": delta,
        "ranking": [s.set_key for s in ranked],
        "equivalence_classes": classes,
        "sets": [
            {
                "set_key": s.set_key,
                "relevance_mean": s.relevance,
                "disparity_mean": s.disparity,
                "coherence": _json_float(s.coherence),
                "rank": i + 1,
            }
            for i, s in enumerate(ranked)
        ],
    }
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "ranking.json", payload)
        print(f"wrote merged ranking to {out / 'ranking.json'}")
    for i, s in enumerate(ranked):
        print(f"{i + 1}. {s.set_key}: relevance={s.relevance:.4f} disparity={s.disparity:.4f}")
    print("equivalence classes: " + "; ".join("{" + ", ".join(c) + "}" for c in classes))
    return 0
