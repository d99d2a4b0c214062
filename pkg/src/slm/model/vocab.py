"""Subtoken vocabulary: reserved symbols plus the most frequent subtokens."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

PAD = "<pad>"
UNK = "<unk>"
EOS = "<eos>"
SPECIALS = (PAD, UNK, EOS)
PAD_ID, UNK_ID, EOS_ID = 0, 1, 2


@dataclass
class Vocab:
    words: list[str]

    def __post_init__(self):
        if tuple(self.words[:3]) != SPECIALS:
            raise ValueError("vocabulary must start with PAD, UNK, EOS")
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ValueError("duplicate vocabulary entries")

    def __len__(self):
        return len(self.words)

    def __contains__(self, w) -> bool:
        return w in self.index

    def id(self, w: str) -> int:
        return self.index.get(w, UNK_ID)

    @classmethod
    def build(cls, counts: Counter, size: int) -> "Vocab":
        """Top ``size - 3`` subtokens by frequency; ties broken alphabetically."""
        ranked = sorted((w for w in counts if w not in SPECIALS), key=lambda w: (-counts[w], w))
        return cls(list(SPECIALS) + ranked[:max(0, size - len(SPECIALS))])
