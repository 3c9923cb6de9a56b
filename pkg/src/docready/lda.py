"""Latent Dirichlet Allocation via collapsed Gibbs sampling.

Provides deterministic, seedable training of topic-word distributions and
fold-in projection of individual documents (or queries) onto the topic
simplex. All randomness flows through numpy's PCG64 generator so that a
given (inputs, seed) pair reproduces bit-identical results across runs
and platforms.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .corpus import BowDocument, Vocabulary

logger = logging.getLogger(__name__)

__all__ = [
    "LdaConfig",
    "TopicModel",
    "UnprojectableDocumentError",
    "GibbsConsistencyError",
    "derive_seed",
    "spawn_rng",
    "train",
    "project",
    "top_words",
]

MODEL_FORMAT_VERSION = 1


class UnprojectableDocumentError(Exception):
    """The document has no in-vocabulary tokens to assign topics to."""


class GibbsConsistencyError(RuntimeError):
    """Sampler count tables disagree with the topic assignments."""


def derive_seed(*parts: int | str) -> int:
    """Fold a tuple of labels into a stable 64-bit seed.

    Uses blake2b, so derived seeds are reproducible across platforms and
    Python versions. This is how per-run and per-document seeds are split
    off a master seed.
    """
    joined = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.blake2b(joined.encode("utf-8"), digest_size=8).digest(), "big")


def spawn_rng(seed: int) -> np.random.Generator:
    """Build the project-wide PRNG (PCG64) from a 64-bit seed."""
    return np.random.Generator(np.random.PCG64(seed & 0xFFFFFFFFFFFFFFFF))


@dataclass(frozen=True)
class LdaConfig:
    """Hyperparameters and sampling schedule for training and inference.

    ``alpha`` defaults to 50/K and ``burn_in`` to half the training
    iterations when left unset. ``thin`` controls how often a post-burn-in
    state contributes to the averaged estimates.
    """

    K: int = 50
    alpha: float | None = None
    beta: float = 0.01
    train_iterations: int = 1000
    infer_iterations: int = 100
    burn_in: int | None = None
    thin: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.K < 2:
            raise ValueError(f"K must be >= 2, got {self.K}")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.train_iterations < 1 or self.infer_iterations < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.burn_in is not None and not 0 <= self.burn_in < self.train_iterations:
            raise ValueError(
                f"burn_in must be in [0, train_iterations), got {self.burn_in}"
            )
        if self.thin < 1:
            raise ValueError(f"thin must be >= 1, got {self.thin}")

    @property
    def alpha_value(self) -> float:
        return 50.0 / self.K if self.alpha is None else self.alpha

    @property
    def train_burn_in(self) -> int:
        return self.train_iterations // 2 if self.burn_in is None else self.burn_in


@dataclass
class TopicModel:
    """Trained topic-word distributions plus the vocabulary they live over."""

    phi: np.ndarray  # (K, V), rows on the simplex
    vocab: Vocabulary
    cfg: LdaConfig

    @property
    def K(self) -> int:
        return self.phi.shape[0]

    def save(self, path: str | Path) -> None:
        """Write the model as versioned JSON; byte-identical for equal models."""
        payload = {
            "format_version": MODEL_FORMAT_VERSION,
            "cfg": asdict(self.cfg),
            "vocab_sha256": self.vocab.sha256(),
            "phi": self.phi.tolist(),
        }
        Path(path).write_text(
            json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path, vocab: Vocabulary) -> TopicModel:
        """Load a model, refusing one trained against a different vocabulary."""
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported model format {payload.get('format_version')!r}")
        if payload["vocab_sha256"] != vocab.sha256():
            raise ValueError(
                f"{path}: model was trained on a different vocabulary "
                f"(hash {payload['vocab_sha256'][:12]}… != {vocab.sha256()[:12]}…)"
            )
        cfg = LdaConfig(**payload["cfg"])
        phi = np.asarray(payload["phi"], dtype=np.float64)
        if phi.shape != (cfg.K, len(vocab)):
            raise ValueError(f"{path}: phi has shape {phi.shape}, expected {(cfg.K, len(vocab))}")
        return cls(phi=phi, vocab=vocab, cfg=cfg)


@njit(cache=True)
def _train_sweep(doc_ids, word_ids, z, n_dk, n_kw, n_k, alpha, beta, u, probs):
    K = n_k.shape[0]
    V = n_kw.shape[1]
    vbeta = V * beta
    for i in range(doc_ids.shape[0]):
        d = doc_ids[i]
        w = word_ids[i]
        k = z[i]
        n_dk[d, k] -= 1
        n_kw[k, w] -= 1
        n_k[k] -= 1
        total = 0.0
        for j in range(K):
            total += (n_dk[d, j] + alpha) * (n_kw[j, w] + beta) / (n_k[j] + vbeta)
            probs[j] = total
        r = u[i] * total
        k = 0
        while probs[k] < r and k < K - 1:
            k += 1
        z[i] = k
        n_dk[d, k] += 1
        n_kw[k, w] += 1
        n_k[k] += 1


@njit(cache=True)
def _infer_chain(word_ids, phi, alpha, z, u, sample_mask, theta_acc):
    # Runs the whole fold-in chain for one document; phi stays fixed.
    K = phi.shape[0]
    n = word_ids.shape[0]
    n_k = np.zeros(K, dtype=np.int64)
    for i in range(n):
        n_k[z[i]] += 1
    probs = np.empty(K)
    denom = n + K * alpha
    n_samples = 0
    for t in range(u.shape[0]):
        for i in range(n):
            w = word_ids[i]
            k = z[i]
            n_k[k] -= 1
            total = 0.0
            for j in range(K):
                total += phi[j, w] * (n_k[j] + alpha)
                probs[j] = total
            r = u[t, i] * total
            k = 0
            while probs[k] < r and k < K - 1:
                k += 1
            z[i] = k
            n_k[k] += 1
        if sample_mask[t]:
            for j in range(K):
                theta_acc[j] += (n_k[j] + alpha) / denom
            n_samples += 1
    return n_samples


def _expand_tokens(corpus: list[BowDocument], V: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flatten counts into per-token (doc, word) index arrays.

    Token order is fixed — documents in corpus order, term indices ascending
    within a document — which pins the sampling order for determinism.
    """
    doc_ids: list[int] = []
    word_ids: list[int] = []
    lengths = np.empty(len(corpus), dtype=np.int64)
    for d_idx, doc in enumerate(corpus):
        n = 0
        for w_idx in sorted(doc.counts):
            count = doc.counts[w_idx]
            if not 0 <= w_idx < V:
                raise ValueError(f"document {doc.id!r}: term index {w_idx} out of range for V={V}")
            doc_ids.extend([d_idx] * count)
            word_ids.extend([w_idx] * count)
            n += count
        lengths[d_idx] = n
    return (
        np.asarray(doc_ids, dtype=np.int32),
        np.asarray(word_ids, dtype=np.int32),
        lengths,
    )


def _sample_schedule(iterations: int, burn_in: int, thin: int) -> np.ndarray:
    """Mask of iterations (1-based) whose state enters the averaged estimate.

    Falls back to the final iteration alone when the burn-in/thinning
    combination would otherwise select nothing.
    """
    mask = np.zeros(iterations, dtype=np.uint8)
    for t in range(burn_in + 1, iterations + 1):
        if (t - burn_in) % thin == 0:
            mask[t - 1] = 1
    if not mask.any():
        mask[-1] = 1
    return mask


def _check_counts(doc_ids, word_ids, z, n_dk, n_kw, n_k, lengths, iteration: int) -> None:
    K, V = n_kw.shape
    rebuilt_dk = np.zeros_like(n_dk)
    np.add.at(rebuilt_dk, (doc_ids, z), 1)
    rebuilt_kw = np.zeros_like(n_kw)
    np.add.at(rebuilt_kw, (z, word_ids), 1)
    problems = []
    if not np.array_equal(rebuilt_dk, n_dk):
        problems.append("document-topic table does not match assignments")
    if not np.array_equal(rebuilt_kw, n_kw):
        problems.append("topic-word table does not match assignments")
    if not np.array_equal(n_dk.sum(axis=1), lengths):
        problems.append("document-topic row sums != document lengths")
    if not np.array_equal(n_kw.sum(axis=1), n_k):
        problems.append("topic-word row sums != topic totals")
    if n_k.sum() != len(z):
        problems.append("topic totals do not sum to the token count")
    if problems:
        raise GibbsConsistencyError(f"iteration {iteration}: " + "; ".join(problems))


def train(
    corpus: list[BowDocument],
    vocab: Vocabulary,
    cfg: LdaConfig,
    *,
    check_every: int = 0,
) -> TopicModel:
    """Fit topic-word distributions by collapsed Gibbs sampling.

    Each token's topic assignment is resampled from its full conditional
    once per iteration. After burn-in, every ``cfg.thin``-th state
    contributes a smoothed count estimate (n_kw + beta) / (n_k + V*beta),
    and phi is the mean of those samples. Deterministic given ``cfg.seed``.

    ``check_every`` > 0 verifies count-table consistency at that iteration
    interval, raising GibbsConsistencyError on any violation.
    """
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    V = len(vocab)
    K = cfg.K
    if V < K:
        logger.warning("vocabulary size %d is smaller than K=%d; topics will be degenerate", V, K)

    alpha = cfg.alpha_value
    beta = cfg.beta
    doc_ids, word_ids, lengths = _expand_tokens(corpus, V)
    n_tokens = len(word_ids)

    rng = spawn_rng(cfg.seed)
    z = rng.integers(0, K, n_tokens, dtype=np.int32)
    n_dk = np.zeros((len(corpus), K), dtype=np.int64)
    n_kw = np.zeros((K, V), dtype=np.int64)
    np.add.at(n_dk, (doc_ids, z), 1)
    np.add.at(n_kw, (z, word_ids), 1)
    n_k = n_kw.sum(axis=1)

    mask = _sample_schedule(cfg.train_iterations, cfg.train_burn_in, cfg.thin)
    phi_acc = np.zeros((K, V))
    n_samples = 0
    probs = np.empty(K)
    for t in range(1, cfg.train_iterations + 1):
        u = rng.random(n_tokens)
        _train_sweep(doc_ids, word_ids, z, n_dk, n_kw, n_k, alpha, beta, u, probs)
        if check_every and t % check_every == 0:
            _check_counts(doc_ids, word_ids, z, n_dk, n_kw, n_k, lengths, t)
        if mask[t - 1]:
            phi_acc += (n_kw + beta) / (n_k + V * beta)[:, None]
            n_samples += 1

    phi = phi_acc / n_samples
    return TopicModel(phi=phi, vocab=vocab, cfg=cfg)


def project(model: TopicModel, d: BowDocument, seed: int) -> np.ndarray:
    """Fold a document into the topic simplex with phi held fixed.

    Returns theta, the averaged post-burn-in estimate of the document's
    topic distribution. Counts are first reduced by their greatest common
    divisor, so duplicating a document's entire content does not move its
    projection; this also makes the sensitivity quotients exactly invariant
    under uniform count scaling. Deterministic given (model, d, seed).
    """
    if not d.counts:
        raise UnprojectableDocumentError(
            f"document {d.id!r} has no in-vocabulary tokens; cannot project"
        )
    V = model.phi.shape[1]
    g = math.gcd(*d.counts.values())
    word_ids: list[int] = []
    for w_idx in sorted(d.counts):
        if not 0 <= w_idx < V:
            raise ValueError(f"document {d.id!r}: term index {w_idx} out of range for V={V}")
        word_ids.extend([w_idx] * (d.counts[w_idx] // g))
    word_arr = np.asarray(word_ids, dtype=np.int32)
    n = len(word_arr)

    cfg = model.cfg
    K = cfg.K
    alpha = cfg.alpha_value
    rng = spawn_rng(seed)
    z = rng.integers(0, K, n, dtype=np.int32)
    u = rng.random((cfg.infer_iterations, n))
    mask = _sample_schedule(cfg.infer_iterations, cfg.infer_iterations // 2, cfg.thin)
    theta_acc = np.zeros(K)
    n_samples = _infer_chain(word_arr, model.phi, alpha, z, u, mask, theta_acc)
    return theta_acc / n_samples


def top_words(model: TopicModel, k: int, n: int) -> list[tuple[str, float]]:
    """The ``n`` heaviest terms of topic ``k``, weight-descending.

    Ties break toward the lower vocabulary index; ``n`` larger than the
    vocabulary returns every term.
    """
    if not 0 <= k < model.K:
        raise ValueError(f"topic index {k} out of range for K={model.K}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    weights = model.phi[k]
    order = np.argsort(-weights, kind="stable")[: min(n, len(weights))]
    return [(model.vocab.terms[i], float(weights[i])) for i in order]
