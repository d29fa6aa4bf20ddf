"""Phase-tagged text for a series, the vocabulary, and joint prompt assembly."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParameterError

PAD, CLS, BOS, EOS, UNK = "[PAD]", "[CLS]", "[BOS]", "[EOS]", "[UNK]"
SPECIALS = (PAD, CLS, BOS, EOS, UNK)
PAD_ID, CLS_ID, BOS_ID, EOS_ID, UNK_ID = range(5)
TAGS = ("<start>", "</start>", "<middle>", "</middle>", "<end>", "</end>")
NUMBER_TOKENS = tuple(str(i) for i in range(101))
NUMBER_OFFSET = len(SPECIALS) + len(TAGS)  # ids of "0".."100" are NUMBER_OFFSET + value
PROMPT_HEAD = ("Describe", "this", "time", "series")
PROMPT_TAIL = ("encoded", "by")


def round_values(series: Sequence[float]) -> list[int]:
    # half-up rounding, clipped to the 0..100 numeric vocabulary
    return [int(min(100, max(0, np.floor(float(v) + 0.5)))) for v in series]


def phase_bounds(length: int) -> tuple[int, int]:
    if length < 3:
        raise ParameterError(f"phase tagging needs at least 3 values, got {length}")
    return length // 3, (2 * length) // 3


def phase_tag(series: Sequence[float]) -> str:
    """``<start> .. </start> <middle> .. </middle> <end> .. </end>`` over rounded values."""
    a, b = phase_bounds(len(series))
    vals = [str(v) for v in round_values(series)]
    return " ".join(["<start>", *vals[:a], "</start>", "<middle>", *vals[a:b], "</middle>", "<end>", *vals[b:], "</end>"])


def parse_tagged(text: str) -> list[int]:
    """Inverse of :func:`phase_tag`: the three runs concatenated."""
    toks = text.split()
    out = []
    inside = False
    for tok in toks:
        if tok in ("<start>", "<middle>", "<end>"):
            inside = True
        elif tok in ("</start>", "</middle>", "</end>"):
            inside = False
        elif inside:
            out.append(int(tok))
    return out


def normalize(text: str) -> str:
    return " ".join(text.split())


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]

    def __post_init__(self):
        if self.tokens[: len(SPECIALS)] != SPECIALS:
            raise ParameterError("vocabulary must start with the special tokens")
        if self.tokens[NUMBER_OFFSET : NUMBER_OFFSET + len(NUMBER_TOKENS)] != NUMBER_TOKENS:
            raise ParameterError("vocabulary must hold the tags then the number tokens after the specials")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def tokenize(self, text: str) -> list[int]:
        return [self._index.get(t, UNK_ID) for t in text.split()]

    def detokenize(self, ids: Iterable[int], skip_special: bool = False) -> str:
        n = len(self.tokens)
        out = []
        for i in ids:
            i = int(i)
            if not 0 <= i < n:
                raise IndexError(f"token id {i} outside vocabulary of size {n}")
            if skip_special and i < len(SPECIALS):
                continue
            out.append(self.tokens[i])
        return " ".join(out)

    def to_json(self) -> str:
        return json.dumps(list(self.tokens))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_list(cls, tokens: Sequence[str]) -> "Vocabulary":
        return cls(tuple(tokens))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_list(json.loads(Path(path).read_text(encoding="utf-8")))


def build_vocab(corpus: Sequence[str]) -> Vocabulary:
    """Specials, tags, numbers 0..100 and prompt words, then corpus words by frequency."""
    if not corpus:
        raise ParameterError("cannot build a vocabulary from an empty corpus")
    fixed = [*SPECIALS, *TAGS, *NUMBER_TOKENS, *PROMPT_HEAD, *PROMPT_TAIL]
    seen = set(fixed)
    counts = Counter(tok for text in corpus for tok in text.split() if tok not in seen)
    rest = sorted(counts, key=lambda t: (-counts[t], t))
    return Vocabulary(tuple(fixed + rest))


def joint_text(series: Sequence[float], variant: str = "joint") -> str:
    """Text half of the joint prompt; ``timeseries`` keeps only [CLS]."""
    if variant == "timeseries":
        return CLS
    return " ".join([CLS, *PROMPT_HEAD, phase_tag(series), *PROMPT_TAIL])


def assemble_joint_text(series: Sequence[float], vocab: Vocabulary, variant: str = "joint") -> list[int]:
    return vocab.tokenize(joint_text(series, variant))
