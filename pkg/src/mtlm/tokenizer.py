"""Character / word vocabularies and sentinel-wrapped id sequences."""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from mtlm.errors import InvalidInputError, OOVError, ParseError

SOS, EOS, MASK, PAD, BLANK = "<sos>", "<eos>", "<mask>", "<pad>", "<blank>"
SPECIALS = (SOS, EOS, MASK, PAD, BLANK)
SOS_ID, EOS_ID, MASK_ID, PAD_ID, BLANK_ID = range(5)
MODES = ("char", "word")

# BPE-7002 vocabulary size used at full scale; desk-scale runs use char/word vocabularies.
FULL_VOCAB_SIZE = 7002


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    mode: str = "char"
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"unknown tokenization mode {self.mode!r}")
        if tuple(self.tokens[:5]) != SPECIALS:
            raise InvalidInputError("vocab must start with the five special tokens")
        index = {t: i for i, t in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise InvalidInputError("vocab tokens must be unique")
        object.__setattr__(self, "index", index)

    def __len__(self):
        return len(self.tokens)

    sos = property(lambda self: 0)
    eos = property(lambda self: 1)
    mask = property(lambda self: 2)
    pad = property(lambda self: 3)
    blank = property(lambda self: 4)

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(range(len(SPECIALS)))

    @property
    def content_ids(self) -> list[int]:
        return list(range(len(SPECIALS), len(self.tokens)))

    def id(self, token: str) -> int:
        try:
            return self.index[token]
        except KeyError:
            raise OOVError(token) from None

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.mode.encode())
        for t in self.tokens:
            h.update(b"\x00" + t.encode("utf-8"))
        return h.hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for t in self.tokens:
                f.write(t + "\n")

    @classmethod
    def load(cls, path, mode: str = "char") -> "Vocab":
        with open(path, "r", encoding="utf-8", newline="\n") as f:
            lines = f.read().split("\n")
        if not lines or lines[-1] != "":
            raise ParseError("vocab file must be LF-terminated", line=len(lines))
        return cls(tuple(lines[:-1]), mode)


def split_items(text: str, mode: str) -> list[str]:
    if mode == "char":
        return list(text)
    return text.split()


def build_vocab(corpus: Iterable[str], mode: str = "char", max_size: int = 1 << 30) -> Vocab:
    """Specials first, then tokens by descending frequency, ties broken lexicographically."""
    if mode not in MODES:
        raise InvalidInputError(f"unknown tokenization mode {mode!r}")
    counts: Counter[str] = Counter()
    any_line = False
    for line in corpus:
        line = line.rstrip("\n")
        any_line = any_line or bool(line)
        counts.update(split_items(line, mode))
    if not any_line:
        raise InvalidInputError("corpus is empty")
    for s in SPECIALS:
        counts.pop(s, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    room = max(0, max_size - len(SPECIALS))
    return Vocab(SPECIALS + tuple(t for t, _ in ranked[:room]), mode)


def encode(vocab: Vocab, text: str) -> list[int]:
    return [vocab.sos] + [vocab.id(t) for t in split_items(text, vocab.mode)] + [vocab.eos]


def decode(vocab: Vocab, ids: Sequence[int]) -> str:
    """Surface text for ``ids``; sentinels and padding are dropped."""
    skip = {vocab.sos, vocab.eos, vocab.pad}
    out = []
    for i in ids:
        i = int(i)
        if i < 0 or i >= len(vocab):
            raise IndexError(f"token id {i} outside vocab of size {len(vocab)}")
        if i not in skip:
            out.append(vocab.tokens[i])
    return "".join(out) if vocab.mode == "char" else " ".join(out)


def read_corpus(path) -> list[str]:
    """One sentence per line; blank lines are ignored."""
    text = Path(path).read_text(encoding="utf-8")
    return [line for line in text.split("\n") if line.strip()]


def check_sequence(vocab: Vocab, ids: Sequence[int]) -> None:
    if len(ids) < 2 or ids[0] != vocab.sos or ids[-1] != vocab.eos:
        raise InvalidInputError("sequence must be <sos> ... <eos> with length >= 2")
    if any(i in (vocab.sos, vocab.eos) for i in ids[1:-1]):
        raise InvalidInputError("sentinels may only appear at the ends")
    if any(i < 0 or i >= len(vocab) for i in ids):
        raise InvalidInputError("token id outside vocabulary")


# Escaping used when tokens are written space-joined into text records.
_ESC = {"\\": "\\\\", " ": "\\s", "\t": "\\t", "\n": "\\n"}
_UNESC = {"\\": "\\", "s": " ", "t": "\t", "n": "\n"}


def escape_token(tok: str) -> str:
    return "".join(_ESC.get(c, c) for c in tok)


def unescape_token(s: str) -> str:
    out = []
    it = iter(s)
    for c in it:
        if c == "\\":
            nxt = next(it, None)
            if nxt not in _UNESC:
                raise ParseError(f"bad escape in token {s!r}")
            out.append(_UNESC[nxt])
        else:
            out.append(c)
    return "".join(out)
