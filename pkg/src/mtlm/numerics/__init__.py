from mtlm.numerics.functional import log_softmax_rows, masked_cross_entropy, softmax_rows
from mtlm.numerics.optim import AdamState, LrSchedule, adam_step, lr_at
from mtlm.numerics.tensor import Tensor, backward

__all__ = [
    "AdamState",
    "LrSchedule",
    "Tensor",
    "adam_step",
    "backward",
    "log_softmax_rows",
    "lr_at",
    "masked_cross_entropy",
    "softmax_rows",
]
