"""Synthetic acoustic channel standing in for a trained CTC+S2S acoustic model.

The channel knows the reference transcript and emits, for each output step,
a log-distribution that favours the reference token.  With probability
``eta`` a step is *swapped*: the reference token and one of its seeded
confusion partners exchange probability mass, so the acoustic 1-best makes
real substitution and insertion errors that a language model can repair.
The distribution at step ``i`` never depends on the decoded prefix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from mtlm.errors import ContractViolation, GenerationError, ParseError
from mtlm.search import Hypothesis, beam_search
from mtlm.tokenizer import EOS_ID, SOS_ID, Vocab, escape_token, unescape_token

CONFUSION_SIZE = 5
PROB_FLOOR = 1e-12

# fixed stream offsets under the AM seed
_STREAM_CONFUSION, _STREAM_SWAP, _STREAM_LENGTH = 7919, 104729, 15485863


@dataclass(frozen=True)
class SyntheticAM:
    reference: tuple[int, ...]
    eta: float
    seed: int
    vocab_size: int
    content_ids: tuple[int, ...]
    utt: int = 0
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        ref = tuple(int(i) for i in self.reference)
        object.__setattr__(self, "reference", ref)
        object.__setattr__(self, "content_ids", tuple(int(i) for i in self.content_ids))
        if len(ref) < 2 or ref[0] != SOS_ID or ref[-1] != EOS_ID:
            raise ContractViolation("reference must be <sos> ... <eos>")
        if not 0.0 <= self.eta < 1.0:
            raise ContractViolation("eta must lie in [0, 1)")
        if not self.content_ids:
            raise ContractViolation("need at least one content token")

    @classmethod
    def for_vocab(cls, vocab: Vocab, reference, eta: float, seed: int, utt: int = 0) -> "SyntheticAM":
        return cls(tuple(reference), eta, seed, len(vocab), tuple(vocab.content_ids), utt)

    @property
    def body(self) -> tuple[int, ...]:
        return self.reference[1:-1]

    def reference_token(self, step: int) -> int:
        body = self.body
        return body[step - 1] if 1 <= step <= len(body) else EOS_ID

    def confusion(self, token: int) -> tuple[np.ndarray, np.ndarray]:
        """Confusion partners of ``token`` and their weights (summing to 1); fixed per seed."""
        return _confusion(self.seed, token, self.content_ids)

    def step_distribution(self, step: int) -> np.ndarray:
        if step in self._cache:
            return self._cache[step]
        ref = self.reference_token(step)
        partners, weights = self.confusion(ref)
        p = np.full(self.vocab_size, PROB_FLOOR)
        p[ref] += 1.0 - self.eta
        if partners.size:
            p[partners] += self.eta * weights
        rng = np.random.default_rng([self.seed, _STREAM_SWAP, self.utt, step])
        if partners.size and rng.random() < self.eta:
            c = int(partners[rng.choice(partners.size, p=weights)])
            p[ref], p[c] = p[c], p[ref]
        logp = np.log(p / p.sum())
        logp.setflags(write=False)
        self._cache[step] = logp
        return logp


@lru_cache(maxsize=4096)
def _confusion(seed: int, token: int, content_ids: tuple[int, ...]):
    pool = np.array([c for c in content_ids if c != token], dtype=np.int64)
    k = min(CONFUSION_SIZE, pool.size)
    if k == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    rng = np.random.default_rng([seed, _STREAM_CONFUSION, token])
    partners = np.sort(rng.choice(pool, size=k, replace=False))
    w = rng.random(k) + 0.05
    return partners, w / w.sum()


def am_log_prob(am: SyntheticAM, prefix: Sequence[int], step: int) -> np.ndarray:
    """Log P_AM(token at ``step`` | X); ``step`` is 1 for the first body token."""
    del prefix  # memoryless channel
    return am.step_distribution(step)


def length_offset(eta: float, seed: int, utt: int = 0) -> int:
    u = np.random.default_rng([seed, _STREAM_LENGTH, utt]).random()
    if u < eta / 2:
        return -1
    if u < eta:
        return 1
    return 0


def ctc_length_estimate(am: SyntheticAM) -> int:
    """Greedy-CTC stand-in: body length off by at most one token, never below 1."""
    return max(1, len(am.body) + length_offset(am.eta, am.seed, am.utt))


def candidate_tokens(am: SyntheticAM) -> list[int]:
    return list(am.content_ids) + [EOS_ID]


def generate_nbest(am: SyntheticAM, n: int, beam: int, length_window: int = 2,
                   max_len: int | None = None) -> list[Hypothesis]:
    """AM-only beam search; the top ``n`` completed hypotheses, best first."""
    if n < 1 or n > beam:
        raise ContractViolation("need 1 <= n <= beam")
    res = beam_search(
        lambda prefix, step: am_log_prob(am, prefix, step),
        candidate_tokens(am),
        ctc_length_estimate(am),
        beam=beam,
        length_window=length_window,
        max_len=max_len,
    )
    if not res.completed:
        raise GenerationError("no hypothesis completed inside the length window",
                              best_incomplete=res.live[0] if res.live else None)
    return res.completed[:n]


# ---------------------------------------------------------------------------
# n-best files

@dataclass
class NBestEntry:
    ids: tuple[int, ...]
    am_score: float
    lm_score: float | None = None
    combined: float | None = None
    terms: tuple[float, ...] | None = None


@dataclass
class NBestList:
    utt: str
    entries: list[NBestEntry]


def nbest_from_hypotheses(utt: str, hyps: Iterable[Hypothesis]) -> NBestList:
    return NBestList(utt, [NBestEntry(h.ids, h.am_score) for h in hyps])


def _tokens_field(vocab: Vocab, ids: Sequence[int]) -> str:
    return " ".join(escape_token(vocab.tokens[i]) for i in ids[1:-1])


def format_nbest(lists: Iterable[NBestList], vocab: Vocab) -> str:
    out = []
    for nb in lists:
        out.append(f"UTT {nb.utt}\n")
        for e in nb.entries:
            cols = [repr(float(e.am_score)), _tokens_field(vocab, e.ids)]
            if e.lm_score is not None:
                cols.append(repr(float(e.lm_score)))
                cols.append(repr(float(e.combined)))
                if e.terms is not None:
                    cols.append(",".join(repr(float(t)) for t in e.terms))
            out.append("\t".join(cols) + "\n")
        out.append("\n")
    return "".join(out)


def write_nbest(path, lists: Iterable[NBestList], vocab: Vocab) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_nbest(lists, vocab))


def _parse_float(s: str, lineno: int) -> float:
    try:
        return float(s)
    except ValueError:
        raise ParseError(f"bad score {s!r}", line=lineno) from None


def parse_nbest(text: str, vocab: Vocab) -> list[NBestList]:
    lists: list[NBestList] = []
    current: NBestList | None = None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for lineno, line in enumerate(lines, start=1):
        if current is None:
            if not line.startswith("UTT "):
                raise ParseError("expected 'UTT <id>' header", line=lineno)
            current = NBestList(line[4:], [])
            continue
        if line == "":
            lists.append(current)
            current = None
            continue
        cols = line.split("\t")
        if len(cols) < 2 or len(cols) == 3 or len(cols) > 5:
            raise ParseError(f"expected 2, 4 or 5 tab-separated columns, got {len(cols)}", line=lineno)
        try:
            body = [vocab.id(unescape_token(t)) for t in cols[1].split(" ")] if cols[1] else []
        except (KeyError, ParseError) as exc:
            raise ParseError(str(exc), line=lineno) from None
        entry = NBestEntry((SOS_ID, *body, EOS_ID), _parse_float(cols[0], lineno))
        if len(cols) >= 4:
            entry.lm_score = _parse_float(cols[2], lineno)
            entry.combined = _parse_float(cols[3], lineno)
        if len(cols) == 5:
            entry.terms = tuple(_parse_float(t, lineno) for t in cols[4].split(",")) if cols[4] else ()
        current.entries.append(entry)
    if current is not None:
        raise ParseError("n-best block not terminated by a blank line", line=len(lines))
    return lists


def read_nbest(path, vocab: Vocab) -> list[NBestList]:
    with open(path, "r", encoding="utf-8", newline="\n") as f:
        return parse_nbest(f.read(), vocab)
