"""Tokenization and the token-to-id table.

Tokenizer: lowercase, strip punctuation except apostrophes, split on
whitespace.  Vocabulary files are plain text, one token per line, where the
line number is the id; ids 0..3 are the reserved <pad>, <bos>, <eos>, <unk>.
"""

from __future__ import annotations

import re
from pathlib import Path

from .errors import ValidationError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

_STRIP_RE = re.compile(r"[^a-z0-9'\s]")


def tokenize(text: str) -> list:
    return _STRIP_RE.sub(" ", text.lower()).split()


class Vocabulary:
    def __init__(self, tokens):
        """tokens: full id-ordered list including the four reserved entries."""
        tokens = list(tokens)
        if tokens[: len(RESERVED)] != list(RESERVED):
            raise ValidationError(f"vocabulary must start with {RESERVED}")
        self.tokens = tokens
        self.index = {tok: i for i, tok in enumerate(tokens)}
        if len(self.index) != len(tokens):
            raise ValidationError("vocabulary contains duplicate tokens")

    @classmethod
    def from_texts(cls, texts, min_count: int = 1) -> "Vocabulary":
        counts: dict = {}
        for text in texts:
            for tok in tokenize(text):
                counts[tok] = counts.get(tok, 0) + 1
        kept = [t for t, c in counts.items() if c >= min_count and t not in RESERVED]
        kept.sort(key=lambda t: (-counts[t], t))
        return cls(list(RESERVED) + kept)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token) -> bool:
        return token in self.index

    def encode(self, tokens, add_bos_eos: bool = False, allow_unk: bool = True):
        ids = []
        for tok in tokens:
            i = self.index.get(tok)
            if i is None:
                if not allow_unk:
                    raise ValidationError(f"unknown token {tok!r} with <unk> fallback disabled")
                i = UNK
            ids.append(i)
        if add_bos_eos:
            ids = [BOS] + ids + [EOS]
        return ids

    def decode(self, ids, strip_special: bool = True):
        out = []
        for i in ids:
            if not 0 <= i < len(self.tokens):
                raise ValidationError(f"token id {i} out of range [0, {len(self.tokens)})")
            tok = self.tokens[i]
            if strip_special and tok in RESERVED:
                continue
            out.append(tok)
        return out

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(lines)
