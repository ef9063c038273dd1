"""Transformer encoder mapping (ids, additive mask) to next-token log-probabilities.

Row ``i`` of the output is the log-distribution for the token at position
``i + 1``.  The same weights serve every sub-task; only the mask changes.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from mtlm.errors import ContractViolation, ParseError
from mtlm.numerics import tensor as T
from mtlm.numerics.optim import AdamState
from mtlm.numerics.tensor import Tensor

FULL_SCALE = dict(n_layers=6, n_heads=12, d_model=768, d_ff=3072, vocab_size=7002)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_layers: int = 2
    n_heads: int = 2
    d_model: int = 64
    d_ff: int = 256
    max_len: int = 64
    dropout: float = 0.0
    activation: str = "gelu"
    norm: str = "pre"
    positional: str = "learned"
    tie_embeddings: bool = False
    init_std: float = 0.02

    def __post_init__(self):
        for name in ("vocab_size", "n_layers", "n_heads", "d_model", "d_ff", "max_len"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be >= 1")
        if self.d_model % self.n_heads:
            raise ContractViolation("d_model must be divisible by n_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractViolation("dropout must lie in [0, 1)")
        if self.activation not in ("gelu", "relu"):
            raise ContractViolation(f"unknown activation {self.activation!r}")
        if self.norm not in ("pre", "post"):
            raise ContractViolation(f"unknown norm placement {self.norm!r}")
        if self.positional not in ("learned", "sinusoidal"):
            raise ContractViolation(f"unknown positional encoding {self.positional!r}")

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        return cls(**{**FULL_SCALE, **overrides})


@dataclass
class ModelParams:
    config: ModelConfig
    weights: dict[str, np.ndarray]

    def n_parameters(self) -> int:
        return sum(w.size for w in self.weights.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.weights.items()})


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f, V = config.d_model, config.d_ff, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {"tok_emb": (V, d)}
    if config.positional == "learned":
        shapes["pos_emb"] = (config.max_len, d)
    for i in range(config.n_layers):
        p = f"blocks.{i}."
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "attn.wq": (d, d), p + "attn.bq": (d,),
            p + "attn.wk": (d, d), p + "attn.bk": (d,),
            p + "attn.wv": (d, d), p + "attn.bv": (d,),
            p + "attn.wo": (d, d), p + "attn.bo": (d,),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
            p + "ff.w1": (d, f), p + "ff.b1": (f,),
            p + "ff.w2": (f, d), p + "ff.b2": (d,),
        })
    if config.norm == "pre":
        shapes["ln_f.g"] = (d,)
        shapes["ln_f.b"] = (d,)
    if not config.tie_embeddings:
        shapes["out.w"] = (d, V)
    shapes["out.b"] = (V,)
    return shapes


def init(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    weights = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            weights[name] = np.ones(shape)
        elif leaf.startswith("b"):
            weights[name] = np.zeros(shape)
        else:
            weights[name] = rng.normal(0.0, config.init_std, size=shape)
    return ModelParams(config, weights)


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def _dropout(x: Tensor, rate: float, rng) -> Tensor:
    if rng is None or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep


def _attention(h: Tensor, w: dict[str, Tensor], p: str, mask: np.ndarray, n_heads: int) -> Tensor:
    B, n, d = h.shape
    dh = d // n_heads

    def heads(x: Tensor) -> Tensor:
        return x.reshape(B, n, n_heads, dh).transpose(0, 2, 1, 3)

    q = heads(h @ w[p + "attn.wq"] + w[p + "attn.bq"])
    k = heads(h @ w[p + "attn.wk"] + w[p + "attn.bk"])
    v = heads(h @ w[p + "attn.wv"] + w[p + "attn.bv"])
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh)) + mask[:, None, :, :]
    att = T.softmax(scores)
    o = (att @ v).transpose(0, 2, 1, 3).reshape(B, n, d)
    return o @ w[p + "attn.wo"] + w[p + "attn.bo"]


def forward_tensor(config: ModelConfig, w: dict[str, Tensor], ids: np.ndarray, mask: np.ndarray,
                   rng: np.random.Generator | None = None) -> Tensor:
    """Differentiable forward on a batch: ``ids`` is (B, n), ``mask`` (B, n, n) or (n, n).

    ``rng`` enables dropout; leave it ``None`` for inference.
    """
    B, n = ids.shape
    if n > config.max_len:
        raise ContractViolation(f"sequence length {n} exceeds max_len {config.max_len}")
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim == 2:
        mask = mask[None]
    if mask.shape[-2:] != (n, n) or mask.shape[0] not in (1, B):
        raise ContractViolation(f"mask shape {mask.shape} does not fit ids shape {ids.shape}")
    act = T.gelu if config.activation == "gelu" else T.relu
    rate = config.dropout

    x = T.embedding(w["tok_emb"], ids)
    if config.positional == "learned":
        x = x + T.embedding(w["pos_emb"], np.arange(n))
    else:
        x = x + sinusoidal_positions(n, config.d_model)
    x = _dropout(x, rate, rng)

    for i in range(config.n_layers):
        p = f"blocks.{i}."
        if config.norm == "pre":
            h = T.layer_norm(x, w[p + "ln1.g"], w[p + "ln1.b"])
            x = x + _dropout(_attention(h, w, p, mask, config.n_heads), rate, rng)
            h = T.layer_norm(x, w[p + "ln2.g"], w[p + "ln2.b"])
            ff = act(h @ w[p + "ff.w1"] + w[p + "ff.b1"]) @ w[p + "ff.w2"] + w[p + "ff.b2"]
            x = x + _dropout(ff, rate, rng)
        else:
            a = _dropout(_attention(x, w, p, mask, config.n_heads), rate, rng)
            x = T.layer_norm(x + a, w[p + "ln1.g"], w[p + "ln1.b"])
            ff = act(x @ w[p + "ff.w1"] + w[p + "ff.b1"]) @ w[p + "ff.w2"] + w[p + "ff.b2"]
            x = T.layer_norm(x + _dropout(ff, rate, rng), w[p + "ln2.g"], w[p + "ln2.b"])

    if config.norm == "pre":
        x = T.layer_norm(x, w["ln_f.g"], w["ln_f.b"])
    out_w = w["tok_emb"].transpose(1, 0) if config.tie_embeddings else w["out.w"]
    return T.log_softmax(x @ out_w + w["out.b"])


def as_tensors(params: ModelParams, requires_grad: bool = False) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad) for k, v in params.weights.items()}


def forward(params: ModelParams, ids, mask) -> np.ndarray:
    """Log-probabilities for one sequence (n,) -> (n, V) or a batch (B, n) -> (B, n, V)."""
    ids = np.asarray(ids, dtype=np.int64)
    single = ids.ndim == 1
    if single:
        ids = ids[None]
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape[-1] != ids.shape[1]:
        raise ContractViolation(f"mask size {mask.shape[-1]} != sequence length {ids.shape[1]}")
    if ids.size and (ids.min() < 0 or ids.max() >= params.config.vocab_size):
        raise ContractViolation("token id outside the model vocabulary")
    out = forward_tensor(params.config, as_tensors(params), ids, mask).data
    return out[0] if single else out


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"MTLMCKPT\x01\n"


@dataclass
class Checkpoint:
    params: ModelParams
    step: int = 0
    optimizer: AdamState | None = None
    vocab_hash: str = ""
    meta: dict = field(default_factory=dict)

    def config_fingerprint(self) -> str:
        blob = json.dumps(asdict(self.params.config), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    arrays: list[tuple[str, np.ndarray]] = [("param/" + k, v) for k, v in sorted(ckpt.params.weights.items())]
    opt = None
    if ckpt.optimizer is not None:
        s = ckpt.optimizer
        opt = {"step": s.step, "beta1": s.beta1, "beta2": s.beta2, "epsilon": s.epsilon}
        arrays += [("adam_m/" + k, v) for k, v in sorted(s.m.items())]
        arrays += [("adam_v/" + k, v) for k, v in sorted(s.v.items())]
    table, offset = [], 0
    for name, a in arrays:
        nbytes = a.size * 8
        table.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    header = {
        "format": "mtlm-checkpoint/1",
        "config": asdict(ckpt.params.config),
        "config_fingerprint": ckpt.config_fingerprint(),
        "vocab_hash": ckpt.vocab_hash,
        "step": ckpt.step,
        "optimizer": opt,
        "meta": ckpt.meta,
        "arrays": table,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(hbytes)))
        f.write(hbytes)
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if not raw.startswith(_MAGIC):
        raise ParseError(f"{path}: not an mtlm checkpoint")
    pos = len(_MAGIC)
    (hlen,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    base = pos + hlen
    blobs = {}
    for entry in header["arrays"]:
        start = base + entry["offset"]
        a = np.frombuffer(raw, dtype="<f8", count=entry["nbytes"] // 8, offset=start)
        blobs[entry["name"]] = a.astype(np.float64).reshape(entry["shape"])
    config = ModelConfig(**header["config"])
    params = ModelParams(config, {k[6:]: v for k, v in blobs.items() if k.startswith("param/")})
    optimizer = None
    if header["optimizer"] is not None:
        o = header["optimizer"]
        optimizer = AdamState(
            m={k[7:]: v for k, v in blobs.items() if k.startswith("adam_m/")},
            v={k[7:]: v for k, v in blobs.items() if k.startswith("adam_v/")},
            step=o["step"], beta1=o["beta1"], beta2=o["beta2"], epsilon=o["epsilon"],
        )
    return Checkpoint(params, header["step"], optimizer, header["vocab_hash"], header["meta"])
