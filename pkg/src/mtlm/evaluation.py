"""Word error rate with deletion / insertion / substitution breakdown by utterance length."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from mtlm.errors import InvalidInputError


@dataclass(frozen=True)
class ErrorCounts:
    deletions: int = 0
    insertions: int = 0
    substitutions: int = 0
    ref_len: int = 0

    @property
    def errors(self) -> int:
        return self.deletions + self.insertions + self.substitutions

    @property
    def wer(self) -> float:
        return self.errors / self.ref_len if self.ref_len else 0.0

    def __add__(self, other: "ErrorCounts") -> "ErrorCounts":
        return ErrorCounts(self.deletions + other.deletions, self.insertions + other.insertions,
                           self.substitutions + other.substitutions, self.ref_len + other.ref_len)


class LengthBucket(str, Enum):
    S = "S"
    M = "M"
    L = "L"


def align(ref: Sequence[str], hyp: Sequence[str]) -> ErrorCounts:
    """Unit-cost Levenshtein alignment.

    Among minimal-cost alignments the backtrace prefers, at each cell,
    match > substitution > deletion > insertion, which fixes the D/I/S split.
    """
    if len(ref) == 0:
        raise InvalidInputError("reference must contain at least one item")
    n, m = len(ref), len(hyp)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = i
    for j in range(1, m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        ri = ref[i - 1]
        row, prev = dist[i], dist[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (0 if ri == hyp[j - 1] else 1)
            row[j] = min(diag, prev[j] + 1, row[j - 1] + 1)

    d = ins = sub = 0
    i, j = n, m
    while i > 0 or j > 0:
        here = dist[i][j]
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and here == dist[i - 1][j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and here == dist[i - 1][j - 1] + 1:
            sub += 1
            i, j = i - 1, j - 1
        elif i > 0 and here == dist[i - 1][j] + 1:
            d += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return ErrorCounts(d, ins, sub, n)


def bucket(ref: Sequence[str]) -> LengthBucket:
    k = len(ref)
    if k < 10:
        return LengthBucket.S
    if k <= 20:
        return LengthBucket.M
    return LengthBucket.L


def split_units(text: str, unit: str = "word") -> list[str]:
    """Whitespace words, or characters for token-level error rates."""
    if unit == "word":
        return text.split()
    if unit == "char":
        return list(text)
    raise InvalidInputError(f"unknown error-rate unit {unit!r}")


@dataclass
class SystemReport:
    label: str
    buckets: dict[LengthBucket, ErrorCounts]
    utterances: dict[LengthBucket, int]

    @property
    def overall(self) -> ErrorCounts:
        total = ErrorCounts()
        for b in LengthBucket:
            total = total + self.buckets[b]
        return total


@dataclass
class Report:
    systems: list[SystemReport] = field(default_factory=list)

    def rows(self):
        """(system, bucket, D, I, S, overall errors, ref words, WER %) records, buckets L/M/S then ALL."""
        for s in self.systems:
            for b in (LengthBucket.L, LengthBucket.M, LengthBucket.S):
                c = s.buckets[b]
                yield (s.label, b.value, c.deletions, c.insertions, c.substitutions, c.errors, c.ref_len,
                       100.0 * c.wer)
            c = s.overall
            yield (s.label, "ALL", c.deletions, c.insertions, c.substitutions, c.errors, c.ref_len,
                   100.0 * c.wer)

    def to_tsv(self) -> str:
        lines = []
        for r in self.rows():
            lines.append("\t".join(map(str, r[:7])) + f"\t{r[7]:.2f}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        header = ("Length", "System", "Deletion", "Insertion", "Substitution", "Overall", "Words", "WER%")
        body = [(r[1], r[0], str(r[2]), str(r[3]), str(r[4]), str(r[5]), str(r[6]), f"{r[7]:.2f}")
                for r in self.rows()]
        widths = [max(len(x[k]) for x in [header, *body]) for k in range(len(header))]
        fmt = lambda row: "  ".join(v.rjust(w) if k > 1 else v.ljust(w) for k, (v, w) in enumerate(zip(row, widths)))
        out = [fmt(header), fmt(tuple("-" * w for w in widths))]
        out += [fmt(r) for r in body]
        return "\n".join(out) + "\n"


def evaluate_system(label: str, pairs: Iterable[tuple[str, str]], unit: str = "word") -> SystemReport:
    buckets = {b: ErrorCounts() for b in LengthBucket}
    counts = {b: 0 for b in LengthBucket}
    for ref_text, hyp_text in pairs:
        ref = split_units(ref_text, unit)
        hyp = split_units(hyp_text, unit)
        # buckets always follow the reference word count
        b = bucket(ref_text.split())
        buckets[b] = buckets[b] + align(ref, hyp)
        counts[b] += 1
    return SystemReport(label, buckets, counts)


def evaluate_corpus(pairs: Sequence[tuple[str, str]], labels: Sequence[str] | str = "system",
                    unit: str = "word") -> Report:
    """Report for one system (``pairs`` of (ref, hyp)) or several (``pairs`` keyed by ``labels``).

    For several systems pass ``pairs`` as a list of pair-lists aligned with ``labels``.
    """
    if isinstance(labels, str):
        if not pairs:
            raise InvalidInputError("no utterances to evaluate")
        return Report([evaluate_system(labels, pairs, unit)])
    if len(pairs) != len(labels) or not pairs:
        raise InvalidInputError("need one pair list per system label")
    return Report([evaluate_system(lab, ps, unit) for lab, ps in zip(labels, pairs)])
