"""Beam search core shared by AM-only n-best generation and shallow fusion.

Hypotheses grow one token per step.  Each live hypothesis proposes its
top-``beam`` candidate tokens by a guide score; every candidate is ranked by
``am + lam * lm`` and the best ``beam`` incomplete ones stay live.  Completed
candidates (ending in ``<eos>``) are collected separately and only pruned by
the length window around the estimated transcript length.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from mtlm.errors import ContractViolation
from mtlm.tokenizer import EOS_ID, SOS_ID

GUIDE_MODES = ("s2s", "mtlm+s2s")


@dataclass(frozen=True)
class Hypothesis:
    ids: tuple[int, ...]
    am_score: float = 0.0
    lm_score: float = 0.0

    @property
    def completed(self) -> bool:
        return len(self.ids) > 1 and self.ids[-1] == EOS_ID

    @property
    def body_len(self) -> int:
        return len(self.ids) - (2 if self.completed else 1)

    def combined(self, lam: float) -> float:
        return self.am_score + lam * self.lm_score


def rank_key(h: Hypothesis, lam: float):
    # best first: higher combined, then higher am, then lexicographically smaller ids
    return (-h.combined(lam), -h.am_score, h.ids)


def select_candidates(guide: np.ndarray, candidates: Sequence[int], k: int) -> list[int]:
    """Top-``k`` of ``candidates`` by ``guide``; ties go to the smaller token id."""
    ordered = sorted(candidates, key=lambda tok: (-guide[tok], tok))
    return ordered[:k]


@dataclass
class SearchResult:
    completed: list[Hypothesis]
    live: list[Hypothesis]  # last non-empty set of incomplete hypotheses
    trace: list[list[tuple[int, ...]]]


def beam_search(
    am_step: Callable[[tuple[int, ...], int], np.ndarray],
    candidates: Sequence[int],
    length_estimate: int,
    beam: int = 3,
    lam: float = 0.0,
    lm_next: Callable[[list[tuple[int, ...]]], np.ndarray] | None = None,
    guide_mode: str = "s2s",
    length_window: int = 2,
    max_len: int | None = None,
) -> SearchResult:
    """Run the search; ``lm_next`` maps same-length prefixes to a (B, V) log-prob matrix.

    ``max_len`` caps the body length (tokens between the sentinels).
    ``trace`` records, per step, the candidate tokens chosen for each live
    hypothesis, which is what the guide mode controls.
    """
    if beam < 1:
        raise ContractViolation("beam must be >= 1")
    if lam < 0 or length_window < 0:
        raise ContractViolation("lambda and length_window must be non-negative")
    if guide_mode not in GUIDE_MODES:
        raise ContractViolation(f"unknown guide mode {guide_mode!r}")
    limit = length_estimate + length_window
    if max_len is not None:
        limit = min(limit, max_len)
    use_lm = lm_next is not None and (lam > 0 or guide_mode == "mtlm+s2s")

    live = [Hypothesis((SOS_ID,))]
    completed: list[Hypothesis] = []
    trace: list[list[tuple[int, ...]]] = []
    frontier = live
    step = 1
    while live:
        lm_rows = lm_next([h.ids for h in live]) if use_lm else None
        pool: list[Hypothesis] = []
        step_trace = []
        for j, h in enumerate(live):
            am = am_step(h.ids, step)
            lm = lm_rows[j] if lm_rows is not None else np.zeros_like(am)
            guide = am + lam * lm if guide_mode == "mtlm+s2s" else am
            chosen = select_candidates(guide, candidates, beam)
            step_trace.append(tuple(chosen))
            body = h.body_len
            for tok in chosen:
                if tok == EOS_ID:
                    if abs(body - length_estimate) > length_window:
                        continue
                elif body + 1 > limit:
                    continue
                nh = Hypothesis(h.ids + (tok,), h.am_score + float(am[tok]), h.lm_score + float(lm[tok]))
                if tok == EOS_ID:
                    completed.append(nh)
                else:
                    pool.append(nh)
        trace.append(step_trace)
        pool.sort(key=lambda h: rank_key(h, lam))
        live = pool[:beam]
        if live:
            frontier = live
        step += 1
    completed.sort(key=lambda h: rank_key(h, lam))
    return SearchResult(completed, frontier, trace)
