"""Shallow fusion beam search and n-best rescoring with the multi-task LM."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from mtlm import masks as M
from mtlm.acoustic_sim import (NBestEntry, NBestList, SyntheticAM, am_log_prob, candidate_tokens,
                               ctc_length_estimate)
from mtlm.errors import ContractViolation, DecodeError, InvalidInputError
from mtlm.model import ModelParams, forward
from mtlm.search import GUIDE_MODES, Hypothesis, SearchResult, beam_search
from mtlm.tokenizer import EOS_ID, MASK_ID, PAD_ID, SOS_ID

RESCORE_MODES = ("unidirectional", "bidirectional")


@dataclass(frozen=True)
class BeamConfig:
    beam: int = 3
    lam: float = 0.5
    guide_mode: str = "s2s"
    length_window: int = 2
    max_len: int | None = None

    def __post_init__(self):
        if self.beam < 1:
            raise ContractViolation("beam must be >= 1")
        if self.lam < 0:
            raise ContractViolation("lambda must be >= 0")
        if self.guide_mode not in GUIDE_MODES:
            raise ContractViolation(f"guide_mode must be one of {GUIDE_MODES}")
        if self.length_window < 0:
            raise ContractViolation("length_window must be >= 0")


@dataclass(frozen=True)
class RescoreMode:
    mode: str = "unidirectional"
    lam: float = 0.5
    include_eos: bool = True

    def __post_init__(self):
        if self.mode not in RESCORE_MODES:
            raise ContractViolation(f"rescore mode must be one of {RESCORE_MODES}")
        if self.lam < 0:
            raise ContractViolation("lambda_rescore must be >= 0")


def _pad(seqs: Sequence[Sequence[int]]) -> np.ndarray:
    L = max(len(s) for s in seqs)
    out = np.full((len(seqs), L), PAD_ID, dtype=np.int64)
    for b, s in enumerate(seqs):
        out[b, :len(s)] = s
    return out


def next_token_logprobs(params: ModelParams, prefixes: Sequence[Sequence[int]]) -> np.ndarray:
    """log P(next | prefix) for each prefix, read at its last position under the causal mask."""
    ids = _pad(prefixes)
    L = ids.shape[1]
    # pad columns: causal rows of real positions never look right, so a plain ULM mask suffices
    logp = forward(params, ids, M.causal_mask(L))
    last = np.array([len(p) - 1 for p in prefixes])
    return logp[np.arange(len(prefixes)), last]


def guide_score(am_dist: np.ndarray, lm_dist: np.ndarray, config: BeamConfig) -> np.ndarray:
    if config.guide_mode == "s2s":
        return np.asarray(am_dist)
    return np.asarray(am_dist) + config.lam * np.asarray(lm_dist)


@dataclass
class DecodeResult:
    best: Hypothesis
    completed: list[Hypothesis]
    trace: list[list[tuple[int, ...]]]


def shallow_fusion_decode(am: SyntheticAM, lm_params: ModelParams | None, config: BeamConfig) -> DecodeResult:
    """One-pass search ranking hypotheses by ``am + lam * lm``.

    ``lm_params`` may be ``None`` only when the LM is never consulted
    (``lam == 0`` with the S2S guide).
    """
    needs_lm = config.lam > 0 or config.guide_mode == "mtlm+s2s"
    if needs_lm:
        if lm_params is None:
            raise ContractViolation("an LM is required for lambda > 0 or the mtlm+s2s guide")
        if lm_params.config.vocab_size != am.vocab_size:
            raise ContractViolation("LM and AM vocabularies differ in size")
    est = ctc_length_estimate(am)
    max_len = config.max_len
    if needs_lm:
        cap = lm_params.config.max_len - 2
        max_len = cap if max_len is None else min(max_len, cap)
    res: SearchResult = beam_search(
        lambda prefix, step: am_log_prob(am, prefix, step),
        candidate_tokens(am),
        est,
        beam=config.beam,
        lam=config.lam,
        lm_next=(lambda prefixes: next_token_logprobs(lm_params, prefixes)) if needs_lm else None,
        guide_mode=config.guide_mode,
        length_window=config.length_window,
        max_len=max_len,
    )
    if not res.completed:
        best = res.live[0] if res.live else None
        raise DecodeError("beam exhausted without a completed hypothesis", best_incomplete=best, trace=res.trace)
    return DecodeResult(res.completed[0], res.completed, res.trace)


def force_complete(am: SyntheticAM, lm_params: ModelParams | None, hyp: Hypothesis | None) -> Hypothesis:
    """Close an incomplete path with <eos>, adding that step's AM (and LM) log-probability."""
    if hyp is None:
        hyp = Hypothesis((SOS_ID,))
    if hyp.completed:
        return hyp
    am_score = hyp.am_score + float(am_log_prob(am, hyp.ids, len(hyp.ids))[EOS_ID])
    lm_score = hyp.lm_score
    if lm_params is not None:
        lm_score += float(next_token_logprobs(lm_params, [hyp.ids])[0][EOS_ID])
    return Hypothesis((*hyp.ids, EOS_ID), am_score, lm_score)


# ---------------------------------------------------------------------------
# rescoring

def unidirectional_terms(params: ModelParams, seq: Sequence[int]) -> np.ndarray:
    """log P(y_i | y_<i) for i = 2..n from a single causal forward."""
    seq = np.asarray(seq, dtype=np.int64)
    n = len(seq)
    logp = forward(params, seq, M.ulm_mask(n))
    return logp[np.arange(n - 1), seq[1:]]


def score_unidirectional(params: ModelParams, seq: Sequence[int]) -> float:
    return float(np.sum(unidirectional_terms(params, seq)))


def score_unidirectional_batch(params: ModelParams, seqs: Sequence[Sequence[int]]) -> list[float]:
    """All hypotheses of a list in one padded forward."""
    ids = _pad(seqs)
    L = ids.shape[1]
    logp = forward(params, ids, M.ulm_mask(L))
    out = []
    for b, s in enumerate(seqs):
        n = len(s)
        out.append(float(np.sum(logp[b, np.arange(n - 1), ids[b, 1:n]])))
    return out


def bidirectional_terms(params: ModelParams, seq: Sequence[int], include_eos: bool = True,
                        replace_masked_inputs: bool = True) -> np.ndarray:
    """log P(y_i | all other tokens), one single-mask variant per position, batched."""
    seq = np.asarray(seq, dtype=np.int64)
    n = len(seq)
    if n < 2:
        raise InvalidInputError("sequence too short to score")
    positions = list(range(2, n + 1 if include_eos else n))
    if not positions:
        return np.zeros(0)
    ids = np.empty((len(positions), n), dtype=np.int64)
    masks = np.empty((len(positions), n, n))
    for b, i in enumerate(positions):
        plan = M.bmlm_plan(n, (i,))
        ids[b] = M.masked_inputs(seq, plan, MASK_ID) if replace_masked_inputs else seq
        masks[b] = M.bmlm_mask(plan)
    logp = forward(params, ids, masks)
    rows = np.array(positions) - 2
    return logp[np.arange(len(positions)), rows, seq[np.array(positions) - 1]]


def score_bidirectional(params: ModelParams, seq: Sequence[int], include_eos: bool = True) -> float:
    return float(np.sum(bidirectional_terms(params, seq, include_eos)))


def rescore_nbest(nbest: NBestList, lm_params: ModelParams, mode: RescoreMode) -> NBestList:
    """Attach LM and combined scores; stable sort by ``am + lam * lm`` descending."""
    if not nbest.entries:
        raise InvalidInputError(f"empty n-best list for utterance {nbest.utt}")
    entries = []
    if mode.mode == "unidirectional":
        scores = score_unidirectional_batch(lm_params, [e.ids for e in nbest.entries])
        for e, lm in zip(nbest.entries, scores):
            entries.append(replace(e, lm_score=lm, combined=e.am_score + mode.lam * lm, terms=None))
    else:
        for e in nbest.entries:
            terms = bidirectional_terms(lm_params, e.ids, mode.include_eos)
            lm = float(np.sum(terms))
            entries.append(replace(e, lm_score=lm, combined=e.am_score + mode.lam * lm,
                                   terms=tuple(float(t) for t in terms)))
    order = sorted(range(len(entries)), key=lambda k: (-entries[k].combined, k))
    return NBestList(nbest.utt, [entries[k] for k in order])
