"""Paragraph relation graphs: tf-idf similarity, LDA topic and discourse graphs."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ValidationError

GRAPH_TYPES = ("similarity", "topic", "discourse")

DEFAULT_MARKERS = ("however", "moreover", "therefore", "meanwhile", "furthermore",
                   "instead", "nevertheless", "consequently")

_SENT_END = {".", "!", "?"}


@dataclass
class GraphMatrix:
    weights: np.ndarray
    kind: str = "similarity"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def validate(self, atol: float = 1e-12) -> "GraphMatrix":
        w = self.weights
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 1:
            raise ValidationError(f"graph weights must be a non-empty square matrix, got {w.shape}")
        problems = []
        bad = np.argwhere(~np.isfinite(w) | (w < -atol) | (w > 1 + atol))
        if len(bad):
            problems.append(f"out of range at {[tuple(map(int, b)) for b in bad[:10]]}")
        asym = np.argwhere(np.abs(w - w.T) > atol)
        if len(asym):
            problems.append(f"asymmetric at {[tuple(map(int, b)) for b in asym[:10]]}")
        diag = np.flatnonzero(np.abs(np.diag(w) - 1.0) > atol)
        if len(diag):
            problems.append(f"diagonal != 1 at {diag[:10].tolist()}")
        if problems:
            raise ValidationError("invalid graph: " + "; ".join(problems))
        return self

    def to_json(self) -> dict:
        return {"size": self.size, "type": self.kind, "weights": self.weights.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "GraphMatrix":
        g = cls(np.array(obj["weights"], dtype=np.float64), obj.get("type", "similarity"))
        if g.weights.ndim != 2 or g.size != obj.get("size", g.size):
            raise ValidationError("graph 'size' does not match its weights")
        return g.validate()

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "GraphMatrix":
        return cls.from_json(json.loads(Path(path).read_text()))


def _finish(w: np.ndarray, kind: str) -> GraphMatrix:
    w = np.clip(w, 0.0, 1.0)
    w = np.maximum(w, w.T)
    np.fill_diagonal(w, 1.0)
    return GraphMatrix(w, kind)


def _cosine_matrix(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = vectors / safe[:, None]
    sims = unit @ unit.T
    zero = norms == 0
    sims[zero, :] = 0.0
    sims[:, zero] = 0.0
    return sims


def tfidf_vectors(paragraphs: Sequence[Sequence[str]]) -> np.ndarray:
    """Raw-count tf times ``ln(L / df)``; a term in every paragraph weighs 0."""
    L = len(paragraphs)
    vocab = sorted({t for p in paragraphs for t in p})
    col = {t: k for k, t in enumerate(vocab)}
    tf = np.zeros((L, len(vocab)))
    for i, p in enumerate(paragraphs):
        for t, c in Counter(p).items():
            tf[i, col[t]] = c
    df = (tf > 0).sum(axis=0)
    idf = np.log(L / np.maximum(df, 1))
    return tf * idf


def build_similarity_graph(paragraphs: Sequence[Sequence[str]]) -> GraphMatrix:
    if len(paragraphs) < 1:
        raise ValidationError("need at least one paragraph")
    return _finish(_cosine_matrix(tfidf_vectors(paragraphs)), "similarity")


@dataclass
class TopicModel:
    num_topics: int
    alpha: float
    beta: float
    seed: int
    vocab: list
    topic_word: np.ndarray   # K x W counts
    doc_topic: np.ndarray    # D x K counts

    @property
    def theta(self) -> np.ndarray:
        """Smoothed per-paragraph topic distributions, one row per paragraph."""
        smoothed = self.doc_topic + self.alpha
        return smoothed / smoothed.sum(axis=1, keepdims=True)


def fit_lda(paragraphs: Sequence[Sequence[str]], num_topics: int = 10, iterations: int = 500,
            alpha: float | None = None, beta: float = 0.01, seed: int = 0) -> TopicModel:
    """Collapsed Gibbs sampling for LDA over paragraphs treated as documents."""
    if num_topics < 2:
        raise ConfigError(f"need at least 2 topics, got {num_topics}")
    if not paragraphs or not any(paragraphs):
        raise ValidationError("cannot fit LDA on an empty corpus")
    alpha = 5.0 / num_topics if alpha is None else alpha
    vocab = sorted({t for p in paragraphs for t in p})
    if num_topics > len(vocab):
        raise ConfigError(f"{num_topics} topics exceed the vocabulary size {len(vocab)}")
    col = {t: k for k, t in enumerate(vocab)}
    K, W, D = num_topics, len(vocab), len(paragraphs)
    rng = np.random.default_rng(seed)

    doc_ids = np.array([d for d, p in enumerate(paragraphs) for _ in p], dtype=np.int64)
    word_ids = np.array([col[t] for p in paragraphs for t in p], dtype=np.int64)
    z = rng.integers(0, K, size=len(word_ids))
    nkw = np.zeros((K, W), dtype=np.int64)
    ndk = np.zeros((D, K), dtype=np.int64)
    nk = np.zeros(K, dtype=np.int64)
    np.add.at(nkw, (z, word_ids), 1)
    np.add.at(ndk, (doc_ids, z), 1)
    np.add.at(nk, z, 1)

    wbeta = W * beta
    for _ in range(iterations):
        uniforms = rng.random(len(word_ids))
        for n in range(len(word_ids)):
            w, d, k = word_ids[n], doc_ids[n], z[n]
            nkw[k, w] -= 1
            ndk[d, k] -= 1
            nk[k] -= 1
            prob = (nkw[:, w] + beta) / (nk + wbeta) * (ndk[d] + alpha)
            cdf = np.cumsum(prob)
            k = min(int(np.searchsorted(cdf, uniforms[n] * cdf[-1], side="right")), K - 1)
            z[n] = k
            nkw[k, w] += 1
            ndk[d, k] += 1
            nk[k] += 1
    return TopicModel(K, alpha, beta, seed, vocab, nkw, ndk)


def build_topic_graph(model_or_theta) -> GraphMatrix:
    theta = model_or_theta.theta if isinstance(model_or_theta, TopicModel) else np.asarray(model_or_theta, dtype=np.float64)
    return _finish(_cosine_matrix(theta), "topic")


def extract_entities(raw_tokens: Sequence[str], min_len: int = 1) -> set[str]:
    """Maximal runs of capitalized tokens, lowercased and space-joined.

    A single capitalized word at the start of a sentence is ambiguous and
    is skipped.
    """
    entities = set()
    run: list[tuple[int, str]] = []
    sentence_start = {0}
    for k, tok in enumerate(raw_tokens):
        if tok in _SENT_END:
            sentence_start.add(k + 1)

    def flush():
        if len(run) >= min_len and not (len(run) == 1 and run[0][0] in sentence_start):
            entities.add(" ".join(t.lower() for _, t in run))
        run.clear()

    for k, tok in enumerate(raw_tokens):
        if tok[:1].isupper() and tok[:1].isalpha():
            run.append((k, tok))
        elif run:
            flush()
    if run:
        flush()
    return entities


def build_discourse_graph(paragraphs: Sequence[Sequence[str]], origins: Sequence[int] | None = None,
                          marker_lexicon: Sequence[str] = DEFAULT_MARKERS, entity_min_len: int = 1,
                          marker_weight: float = 0.5, entity_weight: float = 0.5) -> GraphMatrix:
    """Approximate discourse graph from discourse markers and shared entities.

    ``paragraphs`` are case-preserving token lists. Paragraph ``j`` gets a
    marker edge from ``i`` when it opens with a lexicon marker and directly
    follows ``i`` in the same source document.
    """
    markers = {m.lower() for m in marker_lexicon}
    if not markers:
        raise ConfigError("discourse marker lexicon is empty")
    L = len(paragraphs)
    if L < 1:
        raise ValidationError("need at least one paragraph")
    origins = list(origins) if origins is not None else [0] * L
    ents = [extract_entities(p, entity_min_len) for p in paragraphs]
    ev = np.zeros((L, L))
    for j in range(1, L):
        first = paragraphs[j][0].lower() if paragraphs[j] else ""
        if first in markers and origins[j] == origins[j - 1]:
            ev[j - 1, j] += marker_weight
    for i in range(L):
        for j in range(L):
            if i != j and ents[i] and ents[j]:
                ev[i, j] += entity_weight * len(ents[i] & ents[j]) / len(ents[i] | ents[j])
    ev = np.maximum(ev, ev.T)
    np.fill_diagonal(ev, 0.0)
    top = ev.max()
    w = ev / top if top > 0 else ev
    np.fill_diagonal(w, 1.0)
    return _finish(w, "discourse")


def normalize_graph(g: GraphMatrix, threshold: float = 0.0) -> GraphMatrix:
    """Validate, clamp and zero off-diagonal weights below ``threshold``."""
    if not 0.0 <= threshold < 1.0:
        raise ConfigError(f"threshold must lie in [0, 1), got {threshold}")
    g.validate(atol=1e-9)
    w = np.clip(g.weights, 0.0, 1.0)
    w = np.where(w < threshold, 0.0, w)
    np.fill_diagonal(w, 1.0)
    return GraphMatrix(w, g.kind).validate()


def load_marker_lexicon(path) -> list[str]:
    words = [line.strip().lower() for line in Path(path).read_text().splitlines()]
    words = [w for w in words if w and not w.startswith("#")]
    if not words:
        raise ConfigError(f"marker lexicon {path} is empty")
    return words
