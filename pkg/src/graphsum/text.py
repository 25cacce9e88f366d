"""Tokenization, paragraph splitting, vocabulary and instance encoding."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, ValidationError

PAD, BOS, EOS, UNK, PBOUND = 0, 1, 2, 3, 4
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>", "<p>")

DEFAULT_MAX_PARAGRAPHS = 40
DEFAULT_MAX_PARAGRAPH_TOKENS = 70
DEFAULT_MAX_SUMMARY_TOKENS = 150

# Words keep intra-word hyphens and apostrophes; any other symbol stands alone.
_TOKEN_RE = re.compile(r"\w+(?:[-']\w+)*|[^\w\s]")


def tokenize(text: str, lower: bool = True) -> list[str]:
    if lower:
        text = text.lower()
    return _TOKEN_RE.findall(text)


def _truncate_text(text: str, max_tokens: int) -> str:
    end = None
    for k, m in enumerate(_TOKEN_RE.finditer(text)):
        if k == max_tokens:
            break
        end = m.end()
    else:
        return text
    return text[:end]


def split_paragraphs(documents: Sequence[str], max_paragraphs: int = DEFAULT_MAX_PARAGRAPHS,
                     max_tokens_per_paragraph: int = DEFAULT_MAX_PARAGRAPH_TOKENS):
    """Split documents on line breaks and keep at most ``max_paragraphs`` of them.

    Paragraphs are taken round-robin over documents (first paragraph of each
    document, then the second, ...), which gives every document roughly
    ``max_paragraphs / len(documents)`` paragraphs. The result keeps the
    original reading order. Returns ``(paragraphs, origins)`` where
    ``origins[k]`` is the index of the source document.
    """
    if max_paragraphs < 1 or max_tokens_per_paragraph < 1:
        raise ConfigError("paragraph caps must be positive")
    per_doc = []
    for doc in documents:
        paras = [line.strip() for line in (doc or "").splitlines()]
        per_doc.append([p for p in paras if tokenize(p)])
    if not any(per_doc):
        raise ValidationError("all documents are blank")

    chosen: set[tuple[int, int]] = set()
    depth = 0
    while len(chosen) < max_paragraphs and any(depth < len(p) for p in per_doc):
        for d, paras in enumerate(per_doc):
            if depth < len(paras) and len(chosen) < max_paragraphs:
                chosen.add((d, depth))
        depth += 1

    paragraphs, origins = [], []
    for d, k in sorted(chosen):
        paragraphs.append(_truncate_text(per_doc[d][k], max_tokens_per_paragraph))
        origins.append(d)
    return paragraphs, origins


@dataclass
class Vocabulary:
    tokens: list[str]
    min_freq: int = 1
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[:len(RESERVED)]) != RESERVED:
            raise ValidationError("vocabulary must start with the reserved tokens")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValidationError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int], strip_special: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip_special and i in (PAD, BOS, EOS, PBOUND):
                continue
            out.append(self.tokens[i])
        return out

    def to_json(self) -> dict:
        return {"tokens": list(self.tokens), "min_freq": self.min_freq}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        return cls(list(obj["tokens"]), int(obj.get("min_freq", 1)))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), ensure_ascii=False))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_json(json.loads(Path(path).read_text()))


def build_vocab(corpus: Iterable[Sequence[str]], min_freq: int = 1, max_size: int = 30000) -> Vocabulary:
    """Frequency-ordered vocabulary; ties broken lexicographically.

    ``max_size`` counts the reserved entries too.
    """
    if max_size < len(RESERVED) + 1:
        raise ConfigError(f"max_size must be at least {len(RESERVED) + 1}, got {max_size}")
    counts = Counter()
    for stream in corpus:
        counts.update(stream)
    if not counts:
        raise ValidationError("cannot build a vocabulary from an empty corpus")
    for tok in RESERVED:
        counts.pop(tok, None)
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    kept = kept[:max_size - len(RESERVED)]
    return Vocabulary(list(RESERVED) + kept, min_freq)


@dataclass
class Instance:
    paragraphs: list[list[int]]
    summary: list[int]
    origins: list[int]
    raw_paragraphs: list[str] = field(default_factory=list, repr=False)

    @property
    def num_paragraphs(self) -> int:
        return len(self.paragraphs)


def encode_instance(paragraphs: Sequence[str], summary: str | None, vocab: Vocabulary,
                    origins: Sequence[int] | None = None,
                    max_paragraphs: int = DEFAULT_MAX_PARAGRAPHS,
                    max_tokens_per_paragraph: int = DEFAULT_MAX_PARAGRAPH_TOKENS,
                    max_summary_tokens: int = DEFAULT_MAX_SUMMARY_TOKENS,
                    training: bool = True) -> Instance:
    """Map already-split paragraphs and a summary to token ids.

    Each paragraph becomes ``[PBOUND, ids...]`` and the summary
    ``[BOS, ids..., EOS]``.
    """
    if not paragraphs:
        raise ValidationError("instance has no paragraphs")
    if len(paragraphs) > max_paragraphs:
        raise ValidationError(f"{len(paragraphs)} paragraphs exceed the cap of {max_paragraphs}")
    ids = []
    for k, p in enumerate(paragraphs):
        toks = tokenize(p)[:max_tokens_per_paragraph]
        if not toks:
            raise ValidationError(f"paragraph {k} is empty")
        ids.append([PBOUND] + vocab.encode(toks))
    summ = tokenize(summary or "")[:max_summary_tokens]
    if training and not summ:
        raise ValidationError("empty summary in training data")
    origins = list(origins) if origins is not None else [0] * len(paragraphs)
    return Instance(ids, [BOS] + vocab.encode(summ) + [EOS], origins, list(paragraphs))


def read_corpus(path) -> list[dict]:
    """Read a JSON-lines corpus: one ``{"documents": [...], "summary": ...}`` per line."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj.get("documents"), list):
                raise ValidationError(f"{path}:{lineno}: missing 'documents' list")
            records.append(obj)
    return records


def write_corpus(records: Iterable[dict], path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")


def prepare_record(record: dict, vocab: Vocabulary, max_paragraphs: int = DEFAULT_MAX_PARAGRAPHS,
                   max_tokens_per_paragraph: int = DEFAULT_MAX_PARAGRAPH_TOKENS,
                   max_summary_tokens: int = DEFAULT_MAX_SUMMARY_TOKENS,
                   training: bool = True) -> Instance:
    paras, origins = split_paragraphs(record["documents"], max_paragraphs, max_tokens_per_paragraph)
    return encode_instance(paras, record.get("summary"), vocab, origins, max_paragraphs,
                           max_tokens_per_paragraph, max_summary_tokens, training)


def corpus_token_streams(records: Iterable[dict], max_paragraphs: int = DEFAULT_MAX_PARAGRAPHS,
                         max_tokens_per_paragraph: int = DEFAULT_MAX_PARAGRAPH_TOKENS):
    for r in records:
        paras, _ = split_paragraphs(r["documents"], max_paragraphs, max_tokens_per_paragraph)
        for p in paras:
            yield tokenize(p)
        yield tokenize(r.get("summary") or "")
