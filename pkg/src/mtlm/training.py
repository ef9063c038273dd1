"""Multi-task training: ULM + UMLM + BMLM losses on one shared encoder."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from mtlm import masks as M
from mtlm.errors import ContractViolation, InvalidInputError
from mtlm.model import Checkpoint, ModelConfig, ModelParams, as_tensors, forward_tensor, init
from mtlm.numerics import tensor as T
from mtlm.numerics.optim import AdamState, LrSchedule, adam_step, lr_at
from mtlm.tokenizer import MASK_ID, PAD_ID, Vocab, encode

log = logging.getLogger(__name__)

# Offsets of the per-component RNG streams derived from one --seed.
SEED_INIT, SEED_SHUFFLE, SEED_MASKS, SEED_DROPOUT = 0, 1, 2, 3


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 2000
    batch_size: int = 8
    mask_rate: float = 0.3
    schedule: LrSchedule = field(default_factory=lambda: LrSchedule(100, 3e-3, 1e-5, 2000))
    seed: int = 0
    task_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    log_interval: int = 10
    grad_clip: float | None = None
    weight_decay: float = 0.0
    replace_masked_inputs: bool = True
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if not 0.0 < self.mask_rate < 1.0:
            raise ContractViolation("mask_rate must lie in (0, 1)")
        if len(self.task_weights) != 3 or any(w < 0 for w in self.task_weights):
            raise ContractViolation("task_weights must be three non-negative reals")
        if self.batch_size < 1 or self.total_steps < 0 or self.log_interval < 1:
            raise ContractViolation("batch_size, log_interval >= 1 and total_steps >= 0 required")


@dataclass(frozen=True)
class LossTriple:
    ulm: float
    umlm: float
    bmlm: float
    total: float


def _batch_arrays(seqs: Sequence[Sequence[int]], plans: Sequence[M.MaskPlan], replace: bool):
    """Padded ids (B, L), masks (B, L, L) and the gather index of every read."""
    L = max(len(s) for s in seqs)
    B = len(seqs)
    ids = np.full((B, L), PAD_ID, dtype=np.int64)
    mask = np.empty((B, L, L))
    rows_b, rows_r, rows_t = [], [], []
    for b, (seq, plan) in enumerate(zip(seqs, plans)):
        if plan.n != len(seq):
            raise ContractViolation(f"plan length {plan.n} != sequence length {len(seq)}")
        x = M.masked_inputs(seq, plan, MASK_ID) if replace else np.asarray(seq)
        ids[b, :len(seq)] = x
        mask[b] = M.pad_mask(M.mask_for(plan), L)
        for t in plan.targets:
            rows_b.append(b)
            rows_r.append(M.read_position(t) - 1)
            rows_t.append(seq[t - 1])
    index = (np.array(rows_b, dtype=np.int64), np.array(rows_r, dtype=np.int64),
             np.array(rows_t, dtype=np.int64))
    return ids, mask, index


def task_loss_tensor(config: ModelConfig, w: dict[str, T.Tensor], seqs, plans, replace: bool = True,
                     rng=None) -> T.Tensor:
    """Summed cross-entropy over every plan's targets, averaged over the batch."""
    ids, mask, index = _batch_arrays(seqs, plans, replace)
    logp = forward_tensor(config, w, ids, mask, rng)
    if index[0].size == 0:
        return T.Tensor(0.0) * T.sum_all(logp) if logp.requires_grad else T.Tensor(0.0)
    return T.gather_sum(logp, index) * (-1.0 / len(seqs))


def _loss_value(params: ModelParams, seq, plan: M.MaskPlan, replace: bool = True) -> float:
    return float(task_loss_tensor(params.config, as_tensors(params), [list(seq)], [plan], replace).data)


def ulm_loss(params: ModelParams, seq) -> float:
    if len(seq) < 2:
        raise ContractViolation("ULM loss needs a sequence of length >= 2")
    return _loss_value(params, seq, M.ulm_plan(len(seq)))


def bmlm_loss(params: ModelParams, seq, plan: M.MaskPlan, replace: bool = True) -> float:
    if plan.task is not M.Task.BMLM or plan.n != len(seq):
        raise ContractViolation("bmlm_loss needs a BMLM plan matching the sequence")
    return _loss_value(params, seq, plan, replace)


def umlm_loss(params: ModelParams, seq, plan: M.MaskPlan, replace: bool = True) -> float:
    if plan.task is not M.Task.UMLM or plan.n != len(seq):
        raise ContractViolation("umlm_loss needs a UMLM plan matching the sequence")
    return _loss_value(params, seq, plan, replace)


def sample_plans(seqs, rate: float, rng: np.random.Generator):
    """Fresh (UMLM, BMLM) plans for every sequence, in that draw order."""
    umlm = [M.sample_umlm_plan(len(s), rate, rng) for s in seqs]
    bmlm = [M.sample_bmlm_plan(len(s), rate, rng) for s in seqs]
    return umlm, bmlm


def mtlm_objective(params: ModelParams, seqs, umlm_plans, bmlm_plans, weights=(1.0, 1.0, 1.0),
                   replace: bool = True, dropout_rng=None):
    """Weighted total loss, its gradients, and the three sub-losses.

    One batched forward per sub-task; zero-weighted tasks are still evaluated
    (for logging) but kept off the gradient tape.
    """
    config = params.config
    live = as_tensors(params, requires_grad=True)
    frozen = as_tensors(params)
    ulm_plans = [M.ulm_plan(len(s)) for s in seqs]
    terms = []
    for wgt, plans in zip(weights, (ulm_plans, umlm_plans, bmlm_plans)):
        tensors = live if wgt > 0 else frozen
        terms.append(task_loss_tensor(config, tensors, seqs, plans, replace, dropout_rng))
    total = None
    for wgt, term in zip(weights, terms):
        if wgt > 0:
            contrib = term * float(wgt)
            total = contrib if total is None else total + contrib
    if total is None:
        grads = {k: np.zeros_like(v) for k, v in params.weights.items()}
        total_value = 0.0
    else:
        grads = T.backward(total, live)
        total_value = float(total.data)
    losses = LossTriple(float(terms[0].data), float(terms[1].data), float(terms[2].data), total_value)
    return losses, grads


def _clip(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def mtlm_step(params: ModelParams, state: AdamState, batch, config: TrainConfig,
              rng: np.random.Generator, dropout_rng=None):
    """Sample plans, compute the summed loss with one backward, and apply one Adam update."""
    if not batch:
        raise InvalidInputError("empty batch")
    umlm_plans, bmlm_plans = sample_plans(batch, config.mask_rate, rng)
    losses, grads = mtlm_objective(params, batch, umlm_plans, bmlm_plans, config.task_weights,
                                   config.replace_masked_inputs, dropout_rng)
    if config.weight_decay:
        grads = {k: g + config.weight_decay * params.weights[k] for k, g in grads.items()}
    if config.grad_clip is not None:
        grads = _clip(grads, config.grad_clip)
    lr = lr_at(config.schedule, state.step + 1)
    new_weights, new_state = adam_step(params.weights, grads, state, lr)
    return ModelParams(params.config, new_weights), new_state, losses


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[tuple[int, float, float, float, float]]
    skipped: int


def prepare_corpus(corpus: Sequence[str], vocab: Vocab, max_len: int) -> tuple[list[list[int]], int]:
    seqs, skipped = [], 0
    for line in corpus:
        ids = encode(vocab, line)
        if len(ids) > max_len or len(ids) < 3:
            skipped += 1
            continue
        seqs.append(ids)
    return seqs, skipped


def format_log_line(rec) -> str:
    step, lr, a, b, c = rec
    return f"{step}\t{lr!r}\t{a!r}\t{b!r}\t{c!r}"


def train(corpus: Sequence[str], vocab: Vocab, model_config: ModelConfig, config: TrainConfig,
          log_file=None, checkpoint_every: int = 0, checkpoint_prefix=None) -> TrainResult:
    from mtlm.model import save_checkpoint

    seqs, skipped = prepare_corpus(corpus, vocab, model_config.max_len)
    if skipped:
        log.warning("skipped %d sentences that are empty or longer than max_len=%d", skipped,
                    model_config.max_len)
    if not seqs:
        raise InvalidInputError("no usable sentences in corpus")
    if model_config.vocab_size != len(vocab):
        raise ContractViolation("model vocab_size does not match the vocabulary")

    seed = config.seed
    params = init(model_config, np.random.default_rng([seed, SEED_INIT]))
    shuffle_rng = np.random.default_rng([seed, SEED_SHUFFLE])
    mask_rng = np.random.default_rng([seed, SEED_MASKS])
    dropout_rng = np.random.default_rng([seed, SEED_DROPOUT]) if model_config.dropout > 0 else None
    state = AdamState.zeros_like(params.weights, beta1=config.beta1, beta2=config.beta2)

    meta = {"task_weights": list(config.task_weights), "mode": vocab.mode, "seed": seed}
    records = []
    order = shuffle_rng.permutation(len(seqs))
    cursor = 0
    fh = open(log_file, "w", encoding="utf-8", newline="\n") if log_file else None
    try:
        for step in range(1, config.total_steps + 1):
            if cursor + config.batch_size > len(order):
                order = shuffle_rng.permutation(len(seqs))
                cursor = 0
            idx = order[cursor:cursor + config.batch_size]
            cursor += config.batch_size
            batch = [seqs[i] for i in idx]
            lr = lr_at(config.schedule, state.step + 1)
            params, state, losses = mtlm_step(params, state, batch, config, mask_rng, dropout_rng)
            if step % config.log_interval == 0:
                rec = (step, lr, losses.ulm, losses.umlm, losses.bmlm)
                records.append(rec)
                if fh:
                    fh.write(format_log_line(rec) + "\n")
                log.info("step %d lr %.3g ulm %.4f umlm %.4f bmlm %.4f", *rec)
            if checkpoint_every and checkpoint_prefix and step % checkpoint_every == 0:
                save_checkpoint(f"{checkpoint_prefix}.step{step}.ckpt",
                                Checkpoint(params, step, state, vocab.fingerprint(), meta))
    finally:
        if fh:
            fh.close()
    return TrainResult(Checkpoint(params, state.step, state, vocab.fingerprint(), meta), records, skipped)
