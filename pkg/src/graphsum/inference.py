"""Beam search with GNMT length penalty and trigram blocking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .config import DecodeConfig
from .errors import ConfigError, ValidationError
from .model import GraphSum
from .text import BOS, EOS, PAD, PBOUND, Instance, Vocabulary


def length_penalty(length: int, alpha: float) -> float:
    """``((5 + length) / 6) ** alpha``."""
    if length < 1:
        raise ValueError("length must be >= 1")
    return ((5.0 + length) / 6.0) ** alpha


def trigrams(ids: Sequence[int]) -> set[tuple[int, int, int]]:
    return {tuple(ids[k:k + 3]) for k in range(len(ids) - 2)}


@dataclass
class Hypothesis:
    tokens: list[int]
    logprob: float = 0.0
    seen: set = field(default_factory=set)
    finished: bool = False

    @property
    def length(self) -> int:
        """Generated tokens, BOS excluded."""
        return len(self.tokens) - 1

    def extend(self, token: int, logp: float) -> "Hypothesis":
        seen = set(self.seen)
        if len(self.tokens) >= 2:
            seen.add((self.tokens[-2], self.tokens[-1], token))
        return Hypothesis(self.tokens + [token], self.logprob + logp, seen, token == EOS)

    def score(self, alpha: float) -> float:
        return self.logprob / length_penalty(max(self.length, 1), alpha)


def block_trigrams(hyp: Hypothesis, logits: np.ndarray) -> np.ndarray:
    """Set to -inf every token that would repeat a trigram already in ``hyp``."""
    if len(hyp.tokens) < 2:
        return logits
    out = np.array(logits, dtype=np.float64, copy=True)
    a, b = hyp.tokens[-2], hyp.tokens[-1]
    for x, y, z in hyp.seen:
        if x == a and y == b:
            out[z] = -np.inf
    return out


StepFn = Callable[[list[list[int]]], np.ndarray]


def search(step_fn: StepFn, vocab_size: int, beam: int = 5, alpha: float = 0.6, max_len: int = 150,
           min_len: int = 0, block: bool = True, banned: Sequence[int] = (PAD, BOS, PBOUND)) -> Hypothesis:
    """Beam search over a generic scorer.

    ``step_fn`` maps a list of equal-length prefixes to a (B, V) array of
    next-token log-probabilities. Live hypotheses are ranked by cumulative
    log-probability (all have the same length), ties going to the lower
    token id and then the earlier beam slot. Finished hypotheses are ranked
    by ``logprob / length_penalty``.
    """
    if beam < 1:
        raise ConfigError("beam must be >= 1")
    if beam > vocab_size:
        raise ConfigError(f"beam {beam} larger than vocabulary {vocab_size}")
    alive = [Hypothesis([BOS])]
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        # live width shrinks as hypotheses finish; the finished pool never exceeds beam
        width = beam - len(finished)
        logp = np.asarray(step_fn([h.tokens for h in alive]), dtype=np.float64)
        cands = []
        for b, hyp in enumerate(alive):
            row = logp[b].copy()
            row[list(banned)] = -np.inf
            if hyp.length + 1 < min_len:
                row[EOS] = -np.inf
            if block:
                row = block_trigrams(hyp, row)
            for tok in np.flatnonzero(np.isfinite(row)):
                cands.append((-(hyp.logprob + row[tok]), int(tok), b, row[tok]))
        if not cands:
            break
        cands.sort(key=lambda c: (c[0], c[1], c[2]))
        next_alive = []
        for _, tok, b, lp in cands[:width]:
            new = alive[b].extend(tok, float(lp))
            (finished if tok == EOS else next_alive).append(new)
        alive = next_alive
        if not alive or len(finished) >= beam:
            break
    if finished:
        return max(finished, key=lambda h: (h.score(alpha), -len(h.tokens)))
    return max(alive, key=lambda h: h.score(alpha))


def greedy(step_fn: StepFn, vocab_size: int, max_len: int = 150, min_len: int = 0, block: bool = True,
           banned: Sequence[int] = (PAD, BOS, PBOUND)) -> Hypothesis:
    """Argmax decoding with the same masking rules as :func:`search`."""
    hyp = Hypothesis([BOS])
    for _ in range(max_len):
        row = np.asarray(step_fn([hyp.tokens]), dtype=np.float64)[0].copy()
        row[list(banned)] = -np.inf
        if hyp.length + 1 < min_len:
            row[EOS] = -np.inf
        if block:
            row = block_trigrams(hyp, row)
        if not np.isfinite(row).any():
            break
        tok = int(np.argmax(row))
        hyp = hyp.extend(tok, float(row[tok]))
        if tok == EOS:
            break
    return hyp


def model_step_fn(model: GraphSum, enc, graph) -> StepFn:
    def step(prefixes):
        with T.no_grad():
            logits = model.logits(np.asarray(prefixes, dtype=np.int64), enc, graph).data[:, -1, :]
        m = logits.max(axis=-1, keepdims=True)
        return logits - m - np.log(np.exp(logits - m).sum(axis=-1, keepdims=True))
    return step


def beam_search(model: GraphSum, enc, graph, beam: int = 5, alpha: float = 0.6, max_len: int = 150,
                min_len: int = 0, block: bool = True) -> list[int]:
    """Decode one instance; returns the token ids with BOS/EOS stripped."""
    hyp = search(model_step_fn(model, enc, graph), model.cfg.vocab_size, beam, alpha, max_len, min_len, block)
    return [t for t in hyp.tokens if t not in (BOS, EOS)]


def summarize_ids(model: GraphSum, instance: Instance, graph, decode: DecodeConfig | None = None) -> list[int]:
    decode = (decode or DecodeConfig()).validate()
    if not instance.paragraphs:
        raise ValidationError("instance has no paragraphs")
    if instance.num_paragraphs > model.cfg.max_paragraphs:
        raise ValidationError(f"{instance.num_paragraphs} paragraphs exceed the checkpoint cap {model.cfg.max_paragraphs}")
    with T.no_grad():
        enc = model.encode(instance.paragraphs, graph)
    return beam_search(model, enc, graph, decode.beam, decode.alpha, decode.max_len, decode.min_len,
                       decode.block_trigrams)


def summarize(model: GraphSum, instance: Instance, graph, vocab: Vocabulary,
              decode: DecodeConfig | None = None) -> str:
    """encode -> beam search -> space-joined tokens."""
    if len(vocab) != model.cfg.vocab_size:
        raise ValidationError(f"vocabulary of size {len(vocab)} does not match the checkpoint ({model.cfg.vocab_size})")
    return " ".join(vocab.decode(summarize_ids(model, instance, graph, decode)))
