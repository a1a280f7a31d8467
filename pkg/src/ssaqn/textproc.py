"""Text preprocessing, vocabularies and index encoding."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyBatch

PAD_INDEX = 0
UNK_INDEX = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_SPECIAL = re.compile(r"[^\w\s'\"\-]|_")
_DIGIT = re.compile(r"\d")
_POSSESSIVE = re.compile(r"(?<=\w)'s\b")
_CONTRACTIONS = (
    (re.compile(r"'ll\b"), " will"),
    (re.compile(r"'ve\b"), " have"),
    (re.compile(r"'re\b"), " are"),
    (re.compile(r"'m\b"), " am"),
)


def preprocess(text: str) -> list[str]:
    """Lowercase, strip special characters, split digits and contractions.

    >>> preprocess("I'll take 42")
    ['i', 'will', 'take', '4', '2']
    """
    text = text.lower()
    text = _SPECIAL.sub("", text)
    text = _DIGIT.sub(r" \g<0> ", text)
    text = _POSSESSIVE.sub(" 's", text)
    for pattern, expansion in _CONTRACTIONS:
        text = pattern.sub(expansion, text)
    return text.split()


@dataclass(frozen=True)
class Vocabulary:
    index_to_token: tuple[str, ...]
    token_to_index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.index_to_token[:2] != (PAD_TOKEN, UNK_TOKEN):
            raise ValueError("vocabulary must start with the PAD and UNK tokens")
        mapping = {tok: i for i, tok in enumerate(self.index_to_token)}
        if len(mapping) != len(self.index_to_token):
            raise ValueError("duplicate tokens in vocabulary")
        object.__setattr__(self, "token_to_index", mapping)

    @property
    def size(self) -> int:
        return len(self.index_to_token)

    def __len__(self) -> int:
        return self.size

    @property
    def tokens(self) -> list[str]:
        """Regular tokens, i.e. everything from index 2 on."""
        return list(self.index_to_token[2:])

    def save(self, path) -> None:
        Path(path).write_text("".join(tok + "\n" for tok in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls.from_tokens([ln for ln in lines if ln])

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Vocabulary":
        return cls((PAD_TOKEN, UNK_TOKEN, *tokens))


def build_vocab(token_streams: Iterable[Iterable[str]]) -> Vocabulary:
    """Build a vocabulary with PAD=0, UNK=1 and the rest in lexicographic order."""
    unique = set()
    for stream in token_streams:
        unique.update(stream)
    unique.discard(PAD_TOKEN)
    unique.discard(UNK_TOKEN)
    return Vocabulary.from_tokens(sorted(unique))


def encode(vocab: Vocabulary, tokens: Sequence[str]) -> list[int]:
    lookup = vocab.token_to_index
    return [lookup.get(tok, UNK_INDEX) for tok in tokens]


def decode(vocab: Vocabulary, indices: Sequence[int]) -> list[str]:
    return [vocab.index_to_token[i] for i in indices]


def pad_batch(sequences: Sequence[Sequence[int]]) -> tuple[np.ndarray, list[int]]:
    """Left-pad every sequence with PAD to the longest one in the batch."""
    if len(sequences) == 0:
        raise EmptyBatch("cannot pad an empty batch")
    lengths = [len(s) for s in sequences]
    width = max(lengths)
    out = np.zeros((len(sequences), width), dtype=np.int64)
    for row, seq in enumerate(sequences):
        if len(seq):
            out[row, width - len(seq):] = seq
    return out, lengths
