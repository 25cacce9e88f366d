"""ROUGE-N, ROUGE-L (summary- and sentence-level) and the Lead baseline.

No stemming and no stopword removal; tokens are compared verbatim.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

from .errors import ConfigError, ValidationError
from .text import PBOUND, RESERVED

SENTENCE_END = {".", "!", "?"}


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, hits: float, cand_total: float, ref_total: float) -> "RougeScore":
        p = hits / cand_total if cand_total else 0.0
        r = hits / ref_total if ref_total else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return cls(p, r, f)


def ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[k:k + n]) for k in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence, reference: Sequence, n: int = 1) -> RougeScore:
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    c, r = ngrams(candidate, n), ngrams(reference, n)
    if not c or not r:
        return RougeScore(0.0, 0.0, 0.0)
    hits = sum((c & r).values())
    return RougeScore.from_counts(hits, sum(c.values()), sum(r.values()))


def lcs_table(a: Sequence, b: Sequence) -> list[list[int]]:
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i, x in enumerate(a, 1):
        row, prev = table[i], table[i - 1]
        for j, y in enumerate(b, 1):
            row[j] = prev[j - 1] + 1 if x == y else max(prev[j], row[j - 1])
    return table


def lcs_length(a: Sequence, b: Sequence) -> int:
    return lcs_table(a, b)[-1][-1]


def lcs_indices(a: Sequence, b: Sequence) -> list[int]:
    """Positions in ``a`` of one longest common subsequence with ``b``."""
    table = lcs_table(a, b)
    i, j, out = len(a), len(b), []
    while i and j:
        if a[i - 1] == b[j - 1]:
            out.append(i - 1)
            i -= 1
            j -= 1
        elif table[i - 1][j] >= table[i][j - 1]:
            i -= 1
        else:
            j -= 1
    return out[::-1]


def split_sentences(tokens: Sequence) -> list[list]:
    sents, cur = [], []
    for t in tokens:
        cur.append(t)
        if t in SENTENCE_END:
            sents.append(cur)
            cur = []
    if cur:
        sents.append(cur)
    return sents


def rouge_l(candidate: Sequence, reference: Sequence, mode: str = "summary") -> RougeScore:
    """ROUGE-L F1.

    ``sentence``: LCS of the two texts taken as flat token sequences.
    ``summary``: for each reference sentence, the union of its LCS positions
    with every candidate sentence; hits are clipped by token counts.
    """
    if mode not in ("summary", "sentence"):
        raise ConfigError(f"unknown ROUGE-L mode {mode!r}")
    if not candidate or not reference:
        return RougeScore(0.0, 0.0, 0.0)
    if mode == "sentence":
        return RougeScore.from_counts(lcs_length(candidate, reference), len(candidate), len(reference))
    cand_sents, ref_sents = split_sentences(candidate), split_sentences(reference)
    cand_left, ref_left = Counter(candidate), Counter(reference)
    hits = 0
    for ref in ref_sents:
        union = set()
        for cand in cand_sents:
            union.update(lcs_indices(ref, cand))
        for k in sorted(union):
            tok = ref[k]
            if cand_left[tok] > 0 and ref_left[tok] > 0:
                hits += 1
                cand_left[tok] -= 1
                ref_left[tok] -= 1
    return RougeScore.from_counts(hits, len(candidate), len(reference))


def lead_baseline(paragraphs: Sequence[Sequence], k_tokens: int) -> list:
    """First ``k_tokens`` tokens of the ranked paragraphs, boundary markers removed."""
    if k_tokens < 1:
        raise ConfigError("k must be >= 1")
    boundary = {PBOUND, RESERVED[PBOUND]}
    out = []
    for p in paragraphs:
        for t in p:
            if t in boundary:
                continue
            out.append(t)
            if len(out) == k_tokens:
                return out
    return out


METRICS = ("rouge-1", "rouge-2", "rouge-l", "rouge-l-sentence")


def score_pair(candidate: Sequence, reference: Sequence) -> dict[str, RougeScore]:
    return {
        "rouge-1": rouge_n(candidate, reference, 1),
        "rouge-2": rouge_n(candidate, reference, 2),
        "rouge-l": rouge_l(candidate, reference, "summary"),
        "rouge-l-sentence": rouge_l(candidate, reference, "sentence"),
    }


def evaluate_corpus(system: Sequence[Sequence], references: Sequence[Sequence]) -> dict:
    """Mean ROUGE over aligned summaries, reported x100 with two decimals.

    The per-instance scores are kept (unrounded, on the 0-1 scale).
    """
    if len(system) != len(references):
        raise ValidationError(f"{len(system)} system summaries but {len(references)} references")
    if not system:
        raise ValidationError("nothing to evaluate")
    per = [score_pair(c, r) for c, r in zip(system, references)]
    aggregate = {}
    for m in METRICS:
        aggregate[m] = {
            field: round(100.0 * sum(getattr(s[m], field) for s in per) / len(per), 2)
            for field in ("precision", "recall", "f1")
        }
    return {
        "count": len(per),
        "aggregate": aggregate,
        "instances": [{m: asdict(s[m]) for m in METRICS} for s in per],
    }
