"""Frequent-substructure featurization of SMILES strings and protein sequences.

A pair-merge vocabulary is learned from a corpus of character strings and each
string is then encoded as a multi-hot vector over the learned tokens. Diseases
get one-hot vectors.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "FeatureInputError",
    "SubstructureVocab",
    "FeatureVector",
    "train_vocab",
    "default_min_frequency",
    "segment",
    "encode",
    "encode_many",
    "one_hot",
]

log = logging.getLogger(__name__)

VOCAB_MAGIC = "#substructure-vocab"
VOCAB_VERSION = 1


class FeatureInputError(ValueError):
    pass


@dataclass(frozen=True)
class SubstructureVocab:
    tokens: tuple[str, ...]
    frequencies: tuple[int, ...]
    merges: tuple[tuple[str, str], ...]
    min_frequency: int
    max_vocab: int
    _index: dict = field(init=False, repr=False, compare=False)
    _ranks: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})
        object.__setattr__(self, "_ranks", {m: r for r, m in enumerate(self.merges)})

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    def index(self, token: str) -> int:
        return self._index[token]

    def frequency(self, token: str) -> int:
        return self.frequencies[self._index[token]]

    def to_text(self) -> str:
        lines = [
            f"{VOCAB_MAGIC} v{VOCAB_VERSION}\tmin_frequency={self.min_frequency}"
            f"\tmax_vocab={self.max_vocab}\ttokens={len(self.tokens)}\tmerges={len(self.merges)}"
        ]
        lines += [f"{_esc(t)}\t{f}" for t, f in zip(self.tokens, self.frequencies)]
        lines.append("#merges")
        lines += [f"{_esc(a)}\t{_esc(b)}" for a, b in self.merges]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SubstructureVocab":
        lines = text.rstrip("\n").split("\n")
        head = lines[0].split("\t")
        if not head[0].startswith(VOCAB_MAGIC):
            raise FeatureInputError("not a substructure vocabulary file")
        params = dict(kv.split("=", 1) for kv in head[1:])
        n_tok, n_merge = int(params["tokens"]), int(params["merges"])
        body = lines[1 : 1 + n_tok]
        if lines[1 + n_tok] != "#merges" or len(lines) != 2 + n_tok + n_merge:
            raise FeatureInputError("vocabulary file is truncated or malformed")
        tokens, freqs = [], []
        for line in body:
            tok, freq = line.rsplit("\t", 1)
            tokens.append(_unesc(tok))
            freqs.append(int(freq))
        merges = []
        for line in lines[2 + n_tok :]:
            a, b = line.split("\t")
            merges.append((_unesc(a), _unesc(b)))
        return cls(
            tuple(tokens),
            tuple(freqs),
            tuple(merges),
            int(params["min_frequency"]),
            int(params["max_vocab"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SubstructureVocab":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def _esc(token: str) -> str:
    return token.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unesc(token: str) -> str:
    out, i = [], 0
    while i < len(token):
        c = token[i]
        if c == "\\" and i + 1 < len(token):
            out.append({"t": "\t", "n": "\n", "\\": "\\"}[token[i + 1]])
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


@dataclass
class FeatureVector:
    values: np.ndarray
    unknown_chars: int = 0

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])


def default_min_frequency(corpus: Sequence[str]) -> int:
    """Threshold used when none is given: 1% of the corpus size, at least 2."""
    return max(2, math.ceil(0.01 * len(corpus)))


def _count_pairs(words: dict[tuple, int]) -> Counter:
    # non-overlapping, left to right, per pair type: "AAAA" has 2 (A, A) pairs
    counts: Counter = Counter()
    for word, mult in words.items():
        last_end: dict = {}
        for i in range(len(word) - 1):
            pair = (word[i], word[i + 1])
            if last_end.get(pair, 0) <= i:
                counts[pair] += mult
                last_end[pair] = i + 2
    return counts


def _merge_word(word: tuple, pair: tuple, merged: str) -> tuple:
    out, i, n = [], 0, len(word)
    a, b = pair
    while i < n:
        if i < n - 1 and word[i] == a and word[i + 1] == b:
            out.append(merged)
            i += 2
        else:
            out.append(word[i])
            i += 1
    return tuple(out)


def train_vocab(
    corpus: Sequence[str], min_frequency: int | None = None, max_vocab: int = 2048
) -> SubstructureVocab:
    """Learn a pair-merge substructure vocabulary.

    Starts from single characters and repeatedly merges the most frequent
    adjacent token pair while its count reaches ``min_frequency`` and the
    vocabulary is below ``max_vocab``. Equal counts go to the
    lexicographically smallest merged string.
    """
    corpus = [s for s in corpus]
    if not corpus:
        raise FeatureInputError("cannot train a vocabulary on an empty corpus")
    if min_frequency is None:
        min_frequency = default_min_frequency(corpus)
    if min_frequency < 1:
        raise FeatureInputError("min_frequency must be at least 1")
    if max_vocab < 1:
        raise FeatureInputError("max_vocab must be at least 1")

    words = Counter(tuple(s) for s in corpus if s)
    char_freq: Counter = Counter()
    for word, mult in words.items():
        for c in word:
            char_freq[c] += mult
    tokens = sorted(char_freq)
    freqs = [char_freq[c] for c in tokens]
    known = set(tokens)
    merges: list[tuple[str, str]] = []

    while len(tokens) < max_vocab:
        counts = _count_pairs(words)
        best = None
        for pair, n in counts.items():
            if n < min_frequency:
                continue
            key = (-n, pair[0] + pair[1], pair[0])
            if best is None or key < best[0]:
                best = (key, pair, n)
        if best is None:
            break
        _, pair, n = best
        merged = pair[0] + pair[1]
        merges.append(pair)
        if merged in known:
            # same string reached through a different split; keep tokens unique
            freqs[tokens.index(merged)] += n
        else:
            tokens.append(merged)
            freqs.append(n)
            known.add(merged)
        fresh: Counter = Counter()
        for word, mult in words.items():
            fresh[_merge_word(word, pair, merged)] += mult
        words = fresh

    return SubstructureVocab(tuple(tokens), tuple(freqs), tuple(merges), min_frequency, max_vocab)


def segment(sequence: str, vocab: SubstructureVocab) -> list[str]:
    """Split ``sequence`` by replaying the learned merges in order."""
    word = list(sequence)
    ranks = vocab._ranks
    while len(word) > 1:
        best_rank, best_pair = None, None
        for i in range(len(word) - 1):
            r = ranks.get((word[i], word[i + 1]))
            if r is not None and (best_rank is None or r < best_rank):
                best_rank, best_pair = r, (word[i], word[i + 1])
        if best_pair is None:
            break
        word = list(_merge_word(tuple(word), best_pair, best_pair[0] + best_pair[1]))
    return word


def encode(sequence: str, vocab: SubstructureVocab, counts: bool = False) -> FeatureVector:
    """Multi-hot (or count) vector of the tokens in ``sequence``'s segmentation.

    Pieces outside the vocabulary, which can only be unseen characters, set no
    bit and are tallied in ``unknown_chars``.
    """
    if not sequence:
        raise FeatureInputError("cannot encode an empty sequence")
    values = np.zeros(len(vocab), dtype=np.float64)
    unknown = 0
    for tok in segment(sequence, vocab):
        idx = vocab._index.get(tok)
        if idx is None:
            unknown += len(tok)
            continue
        values[idx] = values[idx] + 1.0 if counts else 1.0
    if unknown:
        log.warning("%d character(s) not in vocabulary while encoding %r", unknown, sequence[:40])
    return FeatureVector(values, unknown)


def encode_many(sequences: Iterable[str], vocab: SubstructureVocab, counts: bool = False) -> np.ndarray:
    rows = [encode(s, vocab, counts).values for s in sequences]
    if not rows:
        return np.zeros((0, len(vocab)))
    return np.vstack(rows)


def one_hot(index: int, dimension: int) -> FeatureVector:
    if not 0 <= index < dimension:
        raise FeatureInputError(f"one-hot index {index} out of range [0, {dimension})")
    v = np.zeros(dimension)
    v[index] = 1.0
    return FeatureVector(v)
