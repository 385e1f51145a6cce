"""Bag-of-words featurization and reverse featurization of word deltas.

Tokenizer: lowercase, alphanumeric runs (underscores split). Vocabulary
is capped (50 words by default) and ordered by descending corpus
frequency with lexicographic tie-breaks; deltas are kept continuous by
the optimizer and only rounded when turned back into word edits.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import GroupShiftError

DEFAULT_VOCAB_CAP = 50

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocabulary:
    """Capped word list with corpus frequencies, in canonical order."""

    words: tuple[str, ...]
    frequencies: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.words)

    def index(self) -> dict[str, int]:
        return {w: i for i, w in enumerate(self.words)}


@dataclass
class BowDataset:
    """Per-document word counts aligned with a Vocabulary."""

    counts: np.ndarray
    doc_ids: list[int]


def build_vocab(
    source_texts: list[str], target_texts: list[str], cap: int = DEFAULT_VOCAB_CAP
) -> Vocabulary:
    """Top-``cap`` words over the union corpus by total occurrence count."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    docs = list(source_texts) + list(target_texts)
    if not docs:
        raise GroupShiftError("empty corpus: no documents to build a vocabulary from")
    counts: dict[str, int] = {}
    for doc in docs:
        for token in tokenize(doc):
            counts[token] = counts.get(token, 0) + 1
    if not counts:
        raise GroupShiftError("empty corpus: documents contain no tokens")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:cap]
    return Vocabulary(
        words=tuple(w for w, _ in ranked),
        frequencies=tuple(c for _, c in ranked),
    )


def featurize(texts: list[str], vocab: Vocabulary) -> BowDataset:
    """Count matrix over the vocabulary; out-of-vocabulary tokens drop."""
    index = vocab.index()
    counts = np.zeros((len(texts), vocab.size), dtype=np.int64)
    for i, doc in enumerate(texts):
        for token in tokenize(doc):
            j = index.get(token)
            if j is not None:
                counts[i, j] += 1
    return BowDataset(counts=counts, doc_ids=list(range(len(texts))))


@dataclass(frozen=True)
class WordEdit:
    word: str
    requested: int
    applied: int

    def __str__(self) -> str:
        return f"{self.requested:+d} {self.word}"


def edits_to_string(edits: list[WordEdit]) -> str:
    return ", ".join(str(e) for e in edits)


def reverse_featurize(
    text: str, delta: np.ndarray, vocab: Vocabulary
) -> tuple[str, list[WordEdit]]:
    """Turn a per-word delta into word edits on one document.

    Deltas round to the nearest integer. Positive k prepends the word k
    times; negative k removes up to |k| occurrences left to right (the
    whole whitespace token goes, matched on its tokenized form). The edit
    list puts additions first, then removals, each sorted by magnitude
    and then word; removing an absent word is a recorded no-op.
    """
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != (vocab.size,):
        raise ValueError(f"delta length {delta.shape} does not match vocab size {vocab.size}")
    rounded = np.rint(delta).astype(int)

    additions = [(vocab.words[j], int(k)) for j, k in enumerate(rounded) if k > 0]
    removals = [(vocab.words[j], int(-k)) for j, k in enumerate(rounded) if k < 0]
    additions.sort(key=lambda wk: (-wk[1], wk[0]))
    removals.sort(key=lambda wk: (-wk[1], wk[0]))

    pieces = text.split(" ")
    edits: list[WordEdit] = []
    for word, k in additions:
        pieces = [word] * k + pieces
        edits.append(WordEdit(word=word, requested=k, applied=k))
    for word, k in removals:
        remaining = k
        kept = []
        for piece in pieces:
            if remaining > 0 and tokenize(piece) == [word]:
                remaining -= 1
                continue
            kept.append(piece)
        pieces = kept
        edits.append(WordEdit(word=word, requested=-k, applied=-(k - remaining)))
    return " ".join(pieces), edits


def read_corpus(path: str) -> list[str]:
    """One document per line, UTF-8."""
    with open(path, "r", encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def read_labels(path: str) -> list[str]:
    """One group label per line, parallel to a corpus file."""
    with open(path, "r", encoding="utf-8") as fh:
        return [line.strip() for line in fh]
