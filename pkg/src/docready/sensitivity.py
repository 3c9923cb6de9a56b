"""Query-perturbation harness and sensitivity quotients.

Measures how stable the pipeline is under small edits to the query:
s1 compares the relative change of the query's topic-space projection to
the relative change of its bag-of-words vector, and s2 does the same for
the relevance score of each document set. Values below 1 mean the
pipeline dampens the perturbation rather than amplifying it.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import BowDocument, DocumentSet, Vocabulary
from .lda import TopicModel, UnprojectableDocumentError, derive_seed, project
from .metrics import relevance

logger = logging.getLogger(__name__)

__all__ = [
    "Perturbation",
    "SensitivityResult",
    "ZeroPerturbationError",
    "perturb_query",
    "s1_quotient",
    "s2_quotient",
    "sensitivity_report",
    "parse_perturbation",
    "load_perturbation_specs",
]

KINDS = ("repetition", "replacement", "deletion")


class ZeroPerturbationError(ValueError):
    """The perturbed query equals the original in word space."""


@dataclass(frozen=True)
class Perturbation:
    """One query edit: duplicate, replace, or delete tokens.

    ``position_or_term`` selects the target: an integer position or a
    token string for repetition/deletion, or an (old, new) pair for
    replacement where either side may be a multi-token phrase (for
    example replacing "world cup" with a single synonym).
    """

    kind: str
    position_or_term: int | str | tuple[str, str]
    label: str

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "replacement":
            pot = self.position_or_term
            if not (isinstance(pot, tuple) and len(pot) == 2
                    and all(isinstance(s, str) and s.strip() for s in pot)):
                raise ValueError("replacement needs an (old, new) pair of nonempty strings")
        elif not isinstance(self.position_or_term, (int, str)):
            raise ValueError(f"{self.kind} needs an integer position or a token string")


@dataclass(frozen=True)
class SensitivityResult:
    """Per-perturbation quotients, averaged over runs.

    ``s1_runs`` and ``s2_runs_per_set`` keep the per-run values behind the
    means. A failed perturbation (invalid position, no word-space change,
    unprojectable result) carries the message in ``error`` and NaN in the
    numeric fields.
    """

    label: str
    word_space_distance: float
    semantic_distance: float
    s1: float
    s2_per_set: dict[str, float]
    s1_runs: tuple[float, ...] = ()
    s2_runs_per_set: dict[str, tuple[float, ...]] = field(default_factory=dict)
    error: str | None = None


def _resolve_position(q_tokens: list[str], pot: int | str, kind: str) -> int:
    if isinstance(pot, int):
        if not 0 <= pot < len(q_tokens):
            raise ValueError(
                f"{kind} position {pot} out of range for a {len(q_tokens)}-token query"
            )
        return pot
    try:
        return q_tokens.index(pot)
    except ValueError:
        raise ValueError(f"{kind} target {pot!r} does not occur in the query") from None


def perturb_query(q_tokens: list[str], spec: Perturbation) -> list[str]:
    """Apply one perturbation to a token list, returning the edited copy.

    Repetition duplicates the selected token in place, deletion removes
    it, and replacement substitutes the first occurrence of the old
    phrase with the new one.
    """
    if not q_tokens:
        raise ValueError("cannot perturb an empty query")
    if spec.kind == "repetition":
        i = _resolve_position(q_tokens, spec.position_or_term, spec.kind)
        return q_tokens[: i + 1] + [q_tokens[i]] + q_tokens[i + 1 :]
    if spec.kind == "deletion":
        i = _resolve_position(q_tokens, spec.position_or_term, spec.kind)
        out = q_tokens[:i] + q_tokens[i + 1 :]
        if not out:
            raise ValueError("deletion would leave an empty query")
        return out
    old, new = spec.position_or_term
    old_tokens = old.split()
    new_tokens = new.split()
    for i in range(len(q_tokens) - len(old_tokens) + 1):
        if q_tokens[i : i + len(old_tokens)] == old_tokens:
            return q_tokens[:i] + new_tokens + q_tokens[i + len(old_tokens) :]
    raise ValueError(f"replacement target {old!r} does not occur in the query")


def _count_norms(q: BowDocument, qp: BowDocument) -> tuple[int, int]:
    """Exact squared norms: (sum q_c^2, sum (q_c - qp_c)^2) over the union."""
    sq = sum(c * c for c in q.counts.values())
    keys = set(q.counts) | set(qp.counts)
    sd = sum((q.counts.get(k, 0) - qp.counts.get(k, 0)) ** 2 for k in keys)
    return sq, sd


def _word_ratio(q: BowDocument, qp: BowDocument) -> tuple[float, float]:
    """(word-space distance, ||q|| / ||q - qp||) with exact integer squares.

    Dividing the squared norms before the square root keeps the ratio
    bit-identical under uniform scaling of all counts.
    """
    sq, sd = _count_norms(q, qp)
    if sd == 0:
        raise ZeroPerturbationError(
            "perturbed query equals the original in word space (no in-vocabulary change)"
        )
    return math.sqrt(sd), math.sqrt(sq / sd)


def s1_quotient(model: TopicModel, q: BowDocument, qp: BowDocument, seed: int) -> float:
    """Relative semantic change per relative word-space change.

    Both projections use the same seed (common random numbers) so the
    quotient isolates the perturbation instead of sampler noise.
    """
    _, ratio = _word_ratio(q, qp)
    g_q = project(model, q, seed)
    g_qp = project(model, qp, seed)
    return float(np.linalg.norm(g_q - g_qp)) / float(np.linalg.norm(g_q)) * ratio


def s2_quotient(set_score: float, set_score_p: float, q: BowDocument, qp: BowDocument) -> float:
    """Relative relevance change per relative word-space change."""
    _, ratio = _word_ratio(q, qp)
    if set_score == 0:
        raise ValueError("base relevance is zero; s2 undefined")
    return abs(set_score - set_score_p) / abs(set_score) * ratio


def tokens_to_bow(tokens: list[str], vocab: Vocabulary, doc_id: str) -> tuple[BowDocument, list[str]]:
    """Map tokens onto vocabulary indices; returns (bow, out-of-vocabulary tokens)."""
    counts: Counter[int] = Counter()
    dropped: list[str] = []
    for t in tokens:
        idx = vocab.term_to_index.get(t)
        if idx is None:
            dropped.append(t)
        else:
            counts[idx] += 1
    return BowDocument.from_counts(doc_id, dict(counts)), dropped


def _failed(label: str, message: str) -> SensitivityResult:
    return SensitivityResult(
        label=label,
        word_space_distance=math.nan,
        semantic_distance=math.nan,
        s1=math.nan,
        s2_per_set={},
        error=message,
    )


def sensitivity_report(
    model: TopicModel,
    q_tokens: list[str],
    perturbations: list[Perturbation],
    sets: list[DocumentSet],
    runs: int,
    master_seed: int,
) -> list[SensitivityResult]:
    """Compute s1 and s2 for each perturbation, averaged over ``runs``.

    Takes the query as an ordered token list because repetition and
    deletion address tokens by position; the bag-of-words form is derived
    here. Each run draws fresh projection seeds from ``master_seed``, with
    the original and perturbed queries sharing a seed within a run.
    Failures of individual perturbations are recorded in their result
    rows; results keep the input order.
    """
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    q_bow, dropped = tokens_to_bow(q_tokens, model.vocab, "query")
    if dropped:
        logger.warning("query tokens not in vocabulary: %s", ", ".join(sorted(set(dropped))))
    if not q_bow.counts:
        raise UnprojectableDocumentError("query has no in-vocabulary tokens")

    prepared: list[tuple[Perturbation, BowDocument | None, float, float, str | None]] = []
    for spec in perturbations:
        try:
            qp_tokens = perturb_query(q_tokens, spec)
            qp_bow, qp_dropped = tokens_to_bow(qp_tokens, model.vocab, f"query:{spec.label}")
            if qp_dropped:
                logger.warning(
                    "%s: perturbed tokens not in vocabulary: %s",
                    spec.label,
                    ", ".join(sorted(set(qp_dropped))),
                )
            if not qp_bow.counts:
                raise UnprojectableDocumentError(
                    "perturbed query has no in-vocabulary tokens"
                )
            dist, ratio = _word_ratio(q_bow, qp_bow)
            prepared.append((spec, qp_bow, dist, ratio, None))
        except (ValueError, UnprojectableDocumentError) as exc:
            prepared.append((spec, None, math.nan, math.nan, str(exc)))

    scorable_sets = []
    for s in sets:
        projectable = [d for d in s.docs if d.counts]
        if not projectable:
            logger.warning("set %r has no projectable documents; skipped in s2", s.key)
            continue
        scorable_sets.append((s.key, projectable))

    s1_runs: dict[str, list[float]] = {spec.label: [] for spec, *_ in prepared}
    sem_runs: dict[str, list[float]] = {spec.label: [] for spec, *_ in prepared}
    s2_runs: dict[str, dict[str, list[float]]] = {
        spec.label: {key: [] for key, _ in scorable_sets} for spec, *_ in prepared
    }

    for r in range(1, runs + 1):
        run_seed = derive_seed(master_seed, "sensitivity", r)
        query_seed = derive_seed(run_seed, "query")
        g_q = project(model, q_bow, query_seed)
        g_q_norm = float(np.linalg.norm(g_q))
        set_thetas = {
            key: [project(model, d, derive_seed(run_seed, "doc", d.id)) for d in docs]
            for key, docs in scorable_sets
        }
        base_rel = {key: relevance(thetas, g_q) for key, thetas in set_thetas.items()}
        for spec, qp_bow, _dist, ratio, err in prepared:
            if err is not None:
                continue
            g_qp = project(model, qp_bow, query_seed)
            sem = float(np.linalg.norm(g_q - g_qp))
            s1_runs[spec.label].append(sem / g_q_norm * ratio)
            sem_runs[spec.label].append(sem)
            for key, _docs in scorable_sets:
                rel_p = relevance(set_thetas[key], g_qp)
                s2_runs[spec.label][key].append(
                    abs(base_rel[key] - rel_p) / abs(base_rel[key]) * ratio
                )

    results: list[SensitivityResult] = []
    for spec, _qp_bow, dist, _ratio, err in prepared:
        if err is not None:
            results.append(_failed(spec.label, err))
            continue
        label = spec.label
        results.append(
            SensitivityResult(
                label=label,
                word_space_distance=dist,
                semantic_distance=float(np.mean(sem_runs[label])),
                s1=float(np.mean(s1_runs[label])),
                s2_per_set={k: float(np.mean(v)) for k, v in s2_runs[label].items()},
                s1_runs=tuple(s1_runs[label]),
                s2_runs_per_set={k: tuple(v) for k, v in s2_runs[label].items()},
            )
        )
    return results


def parse_perturbation(obj: object) -> Perturbation:
    """Build a Perturbation from one decoded JSON entry."""
    if not isinstance(obj, dict):
        raise ValueError(f"perturbation entry must be an object, got {type(obj).__name__}")
    missing = {"label", "kind", "position_or_term"} - obj.keys()
    if missing:
        raise ValueError(f"perturbation entry missing fields: {', '.join(sorted(missing))}")
    label = obj["label"]
    if not isinstance(label, str) or not label:
        raise ValueError("label must be a nonempty string")
    pot = obj["position_or_term"]
    if isinstance(pot, list):
        if len(pot) != 2 or not all(isinstance(s, str) for s in pot):
            raise ValueError("a replacement pair must be two strings [old, new]")
        pot = (pot[0], pot[1])
    elif isinstance(pot, bool) or not isinstance(pot, (int, str)):
        raise ValueError("position_or_term must be an integer, a string, or [old, new]")
    return Perturbation(kind=obj["kind"], position_or_term=pot, label=label)


def load_perturbation_specs(path: str | Path) -> tuple[list[Perturbation], list[str]]:
    """Read a JSON perturbation list; invalid rows become error strings.

    Returns (valid perturbations, per-row error messages); the caller
    decides whether row errors are fatal.
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise ValueError(f"{path}: perturbation spec must be a JSON list")
    specs: list[Perturbation] = []
    errors: list[str] = []
    for i, entry in enumerate(raw):
        try:
            specs.append(parse_perturbation(entry))
        except ValueError as exc:
            errors.append(f"entry {i}: {exc}")
    return specs, errors
