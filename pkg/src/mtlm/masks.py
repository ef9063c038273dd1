"""Mask plans and additive attention-bias matrices for the three sub-tasks.

Positions are 1-based, matching the sentinel-wrapped sequence
``y_1 = <sos>, ..., y_n = <eos>``.  Matrices are returned as 0-based numpy
arrays where entry ``[q-1, k-1]`` biases query ``q`` attending to key ``k``.
The output at position ``t-1`` predicts token ``y_t`` for every task.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from mtlm.errors import ContractViolation, SequenceTooShortError

NEG_INF = -1e9


class Task(str, Enum):
    ULM = "ULM"
    UMLM = "UMLM"
    BMLM = "BMLM"


@dataclass(frozen=True)
class MaskPlan:
    n: int
    task: Task
    targets: tuple[int, ...]
    masked: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(sorted(self.targets)))
        object.__setattr__(self, "masked", tuple(sorted(self.masked)))
        validate_plan(self)

    @classmethod
    def unmasked_umlm(cls, n: int, targets) -> "MaskPlan":
        """UMLM plan with targets but no masks; skips the size-equality check (used to compare against ULM)."""
        plan = object.__new__(cls)
        object.__setattr__(plan, "n", n)
        object.__setattr__(plan, "task", Task.UMLM)
        object.__setattr__(plan, "targets", tuple(sorted(targets)))
        object.__setattr__(plan, "masked", ())
        if any(t < 2 or t > n for t in plan.targets):
            raise ContractViolation("targets must lie in 2..n")
        return plan

    @property
    def read_rows(self) -> list[int]:
        """0-based output rows holding each target's prediction."""
        return [read_position(t) - 1 for t in self.targets]


def validate_plan(plan: MaskPlan) -> None:
    n, tr, ms = plan.n, plan.targets, plan.masked
    if n < 2:
        raise ContractViolation("plan length must be >= 2")
    if len(set(tr)) != len(tr) or len(set(ms)) != len(ms):
        raise ContractViolation("plan positions must be distinct")
    if any(t < 2 or t > n for t in tr):
        raise ContractViolation("targets must lie in 2..n")
    if plan.task is Task.ULM:
        if ms or tr != tuple(range(2, n + 1)):
            raise ContractViolation("ULM plan must target 2..n with no masks")
    elif plan.task is Task.BMLM:
        if tr != ms:
            raise ContractViolation("BMLM plan needs targets == masked")
    elif plan.task is Task.UMLM:
        if len(tr) != len(ms):
            raise ContractViolation("UMLM plan needs |targets| == |masked|")
        if any(m < 1 or m > n for m in ms):
            raise ContractViolation("masked positions must lie in 1..n")
        if ms and any(not any(m < t for m in ms) for t in tr):
            raise ContractViolation("every UMLM target needs a masked position before it")


def read_position(t: int) -> int:
    if t < 2:
        raise ContractViolation(f"position {t} is never a target")
    return t - 1


def mask_count(n: int, rate: float) -> int:
    return max(1, math.floor(rate * (n - 1) + 0.5))


def ulm_plan(n: int) -> MaskPlan:
    return MaskPlan(n, Task.ULM, tuple(range(2, n + 1)), ())


def ulm_mask(n: int) -> np.ndarray:
    if n < 2:
        raise ContractViolation("ulm_mask needs n >= 2")
    return np.where(np.tril(np.ones((n, n), dtype=bool)), 0.0, NEG_INF)


def causal_mask(n: int) -> np.ndarray:
    """Lower-triangular mask for any n >= 1 (decoding prefixes may be just ``<sos>``)."""
    return np.where(np.tril(np.ones((n, n), dtype=bool)), 0.0, NEG_INF)


def _check_sample_args(n: int, rate: float) -> None:
    if n < 3:
        raise SequenceTooShortError(f"need n >= 3 to sample a mask plan, got {n}")
    if not 0.0 < rate < 1.0:
        raise ContractViolation("mask rate must lie in (0, 1)")


def sample_bmlm_plan(n: int, rate: float, rng: np.random.Generator) -> MaskPlan:
    _check_sample_args(n, rate)
    k = mask_count(n, rate)
    chosen = rng.choice(np.arange(2, n + 1), size=k, replace=False)
    ms = tuple(int(x) for x in chosen)
    return MaskPlan(n, Task.BMLM, ms, ms)


def bmlm_plan(n: int, masked) -> MaskPlan:
    ms = tuple(masked)
    return MaskPlan(n, Task.BMLM, ms, ms)


def bmlm_mask(plan: MaskPlan) -> np.ndarray:
    if plan.task is not Task.BMLM:
        raise ContractViolation(f"bmlm_mask got a {plan.task.value} plan")
    m = np.zeros((plan.n, plan.n))
    if plan.masked:
        m[:, np.asarray(plan.masked) - 1] = NEG_INF
    return m


def sample_umlm_plan(n: int, rate: float, rng: np.random.Generator) -> MaskPlan:
    _check_sample_args(n, rate)
    k = mask_count(n, rate)
    targets = sorted(int(x) for x in rng.choice(np.arange(2, n + 1), size=k, replace=False))
    kept: list[int] = []
    masked: list[int] = []
    for t in targets:
        free = [p for p in range(1, t) if p not in masked]
        if not free:
            continue
        # uniform over the still-free prefix positions == resampling until distinct
        masked.append(free[int(rng.integers(len(free)))])
        kept.append(t)
    return MaskPlan(n, Task.UMLM, tuple(kept), tuple(masked))


def umlm_mask(plan: MaskPlan) -> np.ndarray:
    """Causal and unmasked keys only; a masked query still sees its own (replaced) input."""
    if plan.task is not Task.UMLM:
        raise ContractViolation(f"umlm_mask got a {plan.task.value} plan")
    n = plan.n
    allowed = np.tril(np.ones((n, n), dtype=bool))
    if plan.masked:
        cols = np.asarray(plan.masked) - 1
        allowed[:, cols] = False
        allowed[cols, cols] = True
    return np.where(allowed, 0.0, NEG_INF)


def mask_for(plan: MaskPlan) -> np.ndarray:
    if plan.task is Task.ULM:
        return ulm_mask(plan.n)
    if plan.task is Task.BMLM:
        return bmlm_mask(plan)
    return umlm_mask(plan)


def masked_inputs(ids, plan: MaskPlan, mask_id: int) -> np.ndarray:
    """Copy of ``ids`` with every masked position replaced by ``mask_id``."""
    out = np.array(ids, dtype=np.int64, copy=True)
    if plan.masked:
        out[np.asarray(plan.masked) - 1] = mask_id
    return out


def pad_mask(mask: np.ndarray, length: int) -> np.ndarray:
    """Embed an n x n mask in a ``length`` x ``length`` one; pad keys are blocked, pad queries see only themselves."""
    n = mask.shape[0]
    if length == n:
        return mask
    out = np.full((length, length), NEG_INF)
    out[:n, :n] = mask
    idx = np.arange(n, length)
    out[idx, idx] = 0.0
    return out
