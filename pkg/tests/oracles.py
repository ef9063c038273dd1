"""Independent reference computations used by the tests.

Each oracle recomputes a quantity the slow, obvious way so the optimized
library path can be checked against it.
"""

from __future__ import annotations

import itertools

import numpy as np

from mtlm import masks as M
from mtlm.acoustic_sim import am_log_prob, ctc_length_estimate
from mtlm.model import ModelConfig, ModelParams, forward, init
from mtlm.tokenizer import EOS_ID, MASK_ID, SOS_ID, SPECIALS, Vocab


def tiny_config(vocab_size=12, n_layers=2, **kw) -> ModelConfig:
    base = dict(vocab_size=vocab_size, n_layers=n_layers, n_heads=2, d_model=8, d_ff=16, max_len=16)
    base.update(kw)
    return ModelConfig(**base)


def random_params(config: ModelConfig, seed: int, scale: float = 0.5) -> ModelParams:
    """Weights large enough that every input token visibly moves the output."""
    rng = np.random.default_rng(seed)
    p = init(config, rng)
    w = {k: rng.normal(0.0, scale, v.shape) for k, v in p.weights.items()}
    return ModelParams(config, w)


def uniform_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Random body, zero output projection: every row is exactly uniform."""
    p = random_params(config, seed)
    w = dict(p.weights)
    w["out.w"] = np.zeros_like(w["out.w"])
    w["out.b"] = np.zeros_like(w["out.b"])
    return ModelParams(config, w)


def toy_vocab(n_content: int = 4) -> Vocab:
    return Vocab(SPECIALS + tuple("abcdefghijklmnopqrstuvwxyz"[:n_content]), "char")


def random_sequence(rng, vocab_size: int, n: int) -> list[int]:
    body = rng.integers(len(SPECIALS), vocab_size, size=n - 2).tolist()
    return [SOS_ID, *body, EOS_ID]


def levenshtein(a, b) -> int:
    """Plain two-row edit distance, no backtrace."""
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def sequential_unidirectional(params: ModelParams, seq) -> float:
    """Sum of log P(y_i | y_<i), one separate forward per prefix."""
    total = 0.0
    for i in range(2, len(seq) + 1):
        prefix = np.asarray(seq[:i - 1])
        logp = forward(params, prefix, M.causal_mask(len(prefix)))
        total += float(logp[-1, seq[i - 1]])
    return total


def sequential_bidirectional_terms(params: ModelParams, seq, include_eos: bool = True) -> list[float]:
    """One unbatched forward per masked position."""
    n = len(seq)
    out = []
    for i in range(2, n + 1 if include_eos else n):
        plan = M.bmlm_plan(n, (i,))
        logp = forward(params, M.masked_inputs(seq, plan, MASK_ID), M.bmlm_mask(plan))
        out.append(float(logp[i - 2, seq[i - 1]]))
    return out


def path_am_score(am, ids) -> float:
    return float(sum(am_log_prob(am, ids[:k], k)[ids[k]] for k in range(1, len(ids))))


def exhaustive_fusion(am, params: ModelParams | None, lam: float, window: int, max_body: int):
    """Best (ids, am, lm) over every window-admissible sequence, with the decoder's tie order."""
    est = ctc_length_estimate(am)
    best = None
    for L in range(0, max_body + 1):
        if abs(L - est) > window:
            continue
        for body in itertools.product(am.content_ids, repeat=L):
            ids = (SOS_ID, *body, EOS_ID)
            a = path_am_score(am, ids)
            lm = sequential_unidirectional(params, list(ids)) if params is not None and lam > 0 else 0.0
            key = (-(a + lam * lm), -a, ids)
            if best is None or key < best[0]:
                best = (key, ids, a, lm)
    return best[1:]
