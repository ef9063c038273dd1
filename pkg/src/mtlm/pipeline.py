"""Corpus-level decode / n-best / rescore / evaluate loops used by the CLI and experiments."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

from mtlm.acoustic_sim import NBestList, SyntheticAM, generate_nbest, nbest_from_hypotheses
from mtlm.decoding import (BeamConfig, DecodeResult, RescoreMode, force_complete, rescore_nbest,
                           shallow_fusion_decode)
from mtlm.errors import DecodeError, GenerationError
from mtlm.evaluation import evaluate_corpus
from mtlm.model import ModelParams
from mtlm.tokenizer import Vocab, decode, encode

# Offset of the synthetic-AM seed relative to the run --seed.
AM_SEED_OFFSET = 1000

log = logging.getLogger(__name__)

SYSTEMS = ("am", "unilm-fusion", "mtlm-fusion", "unilm-rescore-uni", "mtlm-rescore-uni", "mtlm-rescore-bi")


def utt_id(k: int) -> str:
    return f"utt{k:05d}"


def build_ams(vocab: Vocab, refs: Sequence[str], eta: float, am_seed: int) -> list[SyntheticAM]:
    return [SyntheticAM.for_vocab(vocab, encode(vocab, r), eta, am_seed, utt=k) for k, r in enumerate(refs)]


def decode_corpus(ams: Sequence[SyntheticAM], params: ModelParams | None, config: BeamConfig) -> list[DecodeResult]:
    """Decode every utterance; an exhausted beam falls back to its force-completed best incomplete path."""
    uses_lm = config.lam > 0 or config.guide_mode == "mtlm+s2s"
    out = []
    for k, am in enumerate(ams):
        try:
            out.append(shallow_fusion_decode(am, params, config))
        except DecodeError as exc:
            log.warning("%s: %s; using the best incomplete path", utt_id(k), exc)
            best = force_complete(am, params if uses_lm else None, exc.best_incomplete)
            out.append(DecodeResult(best, [], exc.trace or []))
    return out


def nbest_corpus(ams: Sequence[SyntheticAM], n: int, beam: int, length_window: int = 2) -> list[NBestList]:
    """AM-only n-best per utterance, with the same fallback as ``decode_corpus``."""
    out = []
    for k, am in enumerate(ams):
        try:
            hyps = generate_nbest(am, n, beam, length_window)
        except GenerationError as exc:
            log.warning("%s: %s; using the best incomplete path", utt_id(k), exc)
            hyps = [force_complete(am, None, exc.best_incomplete)]
        out.append(nbest_from_hypotheses(utt_id(k), hyps))
    return out


def rescore_corpus(lists: Sequence[NBestList], params: ModelParams, mode: RescoreMode) -> list[NBestList]:
    return [rescore_nbest(nb, params, mode) for nb in lists]


def wer_pct(vocab: Vocab, refs: Sequence[str], hyp_ids: Sequence[Sequence[int]], unit: str = "word") -> float:
    pairs = [(r, decode(vocab, h)) for r, h in zip(refs, hyp_ids)]
    return 100.0 * evaluate_corpus(pairs, "sys", unit).systems[0].overall.wer


@dataclass(frozen=True)
class SweepSetup:
    refs: tuple[str, ...]
    eta: float
    am_seed: int
    lam: float = 0.5
    lam_rescore: float = 0.5
    length_window: int = 2
    guide_mode: str = "s2s"
    unit: str = "word"


def run_system(system: str, beam: int, vocab: Vocab, setup: SweepSetup,
               models: dict[str, ModelParams | None]) -> list[tuple[int, ...]]:
    """1-best ids for every reference under one (system, beam) cell."""
    ams = build_ams(vocab, setup.refs, setup.eta, setup.am_seed)
    if system == "am":
        cfg = BeamConfig(beam, 0.0, "s2s", setup.length_window)
        return [r.best.ids for r in decode_corpus(ams, None, cfg)]
    lm_name, _, how = system.partition("-")
    params = models[lm_name]
    if params is None:
        raise ValueError(f"system {system} needs the {lm_name} checkpoint")
    if how == "fusion":
        cfg = BeamConfig(beam, setup.lam, setup.guide_mode, setup.length_window)
        return [r.best.ids for r in decode_corpus(ams, params, cfg)]
    mode = {"rescore-uni": "unidirectional", "rescore-bi": "bidirectional"}[how]
    lists = nbest_corpus(ams, beam, beam, setup.length_window)
    rescored = rescore_corpus(lists, params, RescoreMode(mode, setup.lam_rescore))
    return [nb.entries[0].ids for nb in rescored]


def sweep_cell(system: str, beam: int, vocab: Vocab, setup: SweepSetup,
               models: dict[str, ModelParams | None]) -> tuple[int, str, float]:
    hyps = run_system(system, beam, vocab, setup, models)
    return beam, system, wer_pct(vocab, setup.refs, hyps, setup.unit)
