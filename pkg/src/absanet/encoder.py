"""Task-shared encoder: embeddings, learned positions, masked self-attention blocks.

Produces the shared context representation over [CLS] w_1..w_n [SEP] that every
task head consumes. Stands in for a large pretrained encoder at desk scale; the
downstream mechanisms only depend on this module's output interface.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .autodiff import (
    Tensor, add, dropout, embedding, layer_norm, matmul, narrow, relu, softmax, transpose,
)
from .errors import ContractViolation, ValidationError
from .text import Batch


@dataclass(frozen=True)
class ModelConfig:
    d_h: int = 64
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    n_heads: int = 2
    ffn_dim: int = 128
    max_len: int = 64
    dropout: float = 0.1
    vocab_size: int = 0  # set when parameters are initialized

    # full-scale reference (not the default): d_h=768, 2 decoder layers,
    # 2 heads, pretrained-encoder depth. Desk defaults keep laptops happy.

    def validate(self) -> None:
        counts = {"d_h": self.d_h, "n_enc_layers": self.n_enc_layers,
                  "n_dec_layers": self.n_dec_layers, "n_heads": self.n_heads,
                  "ffn_dim": self.ffn_dim, "max_len": self.max_len}
        for k, v in counts.items():
            if v < 1:
                raise ValidationError(f"{k} must be >= 1, got {v}")
        if self.d_h % self.n_heads != 0:
            raise ValidationError(f"d_h ({self.d_h}) must be divisible by n_heads ({self.n_heads})")
        if not (0.0 <= self.dropout < 1.0):
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        cfg = cls(**d)
        cfg.validate()
        return cfg


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...]) -> Tensor:
    """Scaled uniform init, bound sqrt(6 / (fan_in + fan_out))."""
    fan_in, fan_out = shape[-1], shape[0] if len(shape) > 1 else shape[-1]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones_param(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


@dataclass
class AttnParams:
    # no key bias: a constant shift of every key cancels inside the softmax,
    # so its gradient would be identically zero
    wq: Tensor
    bq: Tensor
    wk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor

    @classmethod
    def init(cls, d: int, rng: np.random.Generator) -> "AttnParams":
        mk = lambda: uniform_init(rng, (d, d))
        return cls(mk(), zeros_param(d), mk(), mk(), zeros_param(d), mk(), zeros_param(d))


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor

    @classmethod
    def init(cls, d: int) -> "LayerNormParams":
        return cls(ones_param(d), zeros_param(d))


@dataclass
class FfnParams:
    w1: Tensor  # (ffn_dim, d)
    b1: Tensor
    w2: Tensor  # (d, ffn_dim)
    b2: Tensor

    @classmethod
    def init(cls, d: int, ffn_dim: int, rng: np.random.Generator) -> "FfnParams":
        return cls(uniform_init(rng, (ffn_dim, d)), zeros_param(ffn_dim),
                   uniform_init(rng, (d, ffn_dim)), zeros_param(d))


@dataclass
class EncoderLayerParams:
    attn: AttnParams
    ln1: LayerNormParams
    ffn: FfnParams
    ln2: LayerNormParams


@dataclass
class EncoderParams:
    tok_emb: Tensor  # (vocab, d)
    pos_emb: Tensor  # (max_len + 2, d)
    layers: list[EncoderLayerParams]


def init_params(cfg: ModelConfig, seed: int) -> EncoderParams:
    """Deterministic-under-seed initialization of all encoder parameters."""
    cfg.validate()
    if cfg.vocab_size < 1:
        raise ValidationError("vocab_size must be set before initializing parameters")
    rng = np.random.default_rng(seed)
    layers = []
    for _ in range(cfg.n_enc_layers):
        layers.append(EncoderLayerParams(
            attn=AttnParams.init(cfg.d_h, rng),
            ln1=LayerNormParams.init(cfg.d_h),
            ffn=FfnParams.init(cfg.d_h, cfg.ffn_dim, rng),
            ln2=LayerNormParams.init(cfg.d_h),
        ))
    return EncoderParams(
        tok_emb=uniform_init(rng, (cfg.vocab_size, cfg.d_h)),
        pos_emb=uniform_init(rng, (cfg.max_len + 2, cfg.d_h)),
        layers=layers,
    )


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x (..., d_in) through weight (d_out, d_in) plus bias."""
    return add(matmul(x, transpose(w, (1, 0))), b)


def multi_head_attention(
    q_in: Tensor,
    kv_in: Tensor,
    key_mask: np.ndarray,
    p: AttnParams,
    n_heads: int,
    drop_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Standard multi-head attention; key positions with key_mask False get zero weight.

    q_in is (B, Sq, d), kv_in is (B, Sk, d), key_mask is (B, Sk).
    """
    b, sq, d = q_in.shape
    sk = kv_in.shape[1]
    dk = d // n_heads

    def split_heads(t: Tensor, s: int) -> Tensor:
        return transpose(t.reshape(b, s, n_heads, dk), (0, 2, 1, 3))  # (B, h, S, dk)

    q = split_heads(linear(q_in, p.wq, p.bq), sq)
    k = split_heads(matmul(kv_in, transpose(p.wk, (1, 0))), sk)
    v = split_heads(linear(kv_in, p.wv, p.bv), sk)

    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dk))  # (B, h, Sq, Sk)
    weights = softmax(scores, axis=-1, valid=key_mask[:, None, None, :])
    weights = dropout(weights, drop_rate, rng)
    ctx = matmul(weights, v)  # (B, h, Sq, dk)
    ctx = transpose(ctx, (0, 2, 1, 3)).reshape(b, sq, d)
    return linear(ctx, p.wo, p.bo)


def ffn_forward(x: Tensor, p: FfnParams) -> Tensor:
    return linear(relu(linear(x, p.w1, p.b1)), p.w2, p.b2)


@dataclass
class EncoderOutput:
    """Shared representation H over [CLS] w_1.. w_n [SEP], batched and padded.

    hidden is (B, S, d_h); attn_mask marks real positions; pad positions never
    influence real ones and carry no gradient into any loss.
    """

    hidden: Tensor
    attn_mask: np.ndarray  # (B, S) bool
    lengths: np.ndarray  # (B,) incl [CLS]/[SEP]

    @property
    def width(self) -> int:
        return self.hidden.shape[1]

    def cls(self) -> Tensor:
        """(B, d_h) representation of the [CLS] position."""
        b, _, d = self.hidden.shape
        return narrow(self.hidden, 1, 0, 1).reshape(b, d)

    def tokens(self) -> tuple[Tensor, np.ndarray]:
        """Interior positions 1..S-2 as (B, S-2, d_h) plus their validity mask."""
        t = narrow(self.hidden, 1, 1, self.width - 2)
        token_mask = np.zeros((self.hidden.shape[0], self.width - 2), dtype=bool)
        for i, n in enumerate(self.lengths - 2):
            token_mask[i, :n] = True
        return t, token_mask


def encode(
    batch: Batch,
    params: EncoderParams,
    cfg: ModelConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> EncoderOutput:
    """Run the shared encoder; eval mode is deterministic (no dropout)."""
    if mode not in ("train", "eval"):
        raise ContractViolation(f"mode must be 'train' or 'eval', got {mode!r}")
    if int(batch.ids.max()) >= params.tok_emb.shape[0]:
        raise ContractViolation("batch contains ids outside the vocabulary")
    if batch.width > cfg.max_len + 2:
        raise ContractViolation(f"batch width {batch.width} exceeds max_len + 2 = {cfg.max_len + 2}")
    drop = cfg.dropout if mode == "train" else 0.0
    if mode == "eval":
        rng = None

    b, s = batch.ids.shape
    x = embedding(params.tok_emb, batch.ids)
    pos = narrow(params.pos_emb, 0, 0, s).reshape(1, s, cfg.d_h)
    x = add(x, pos)
    x = dropout(x, drop, rng)

    for layer in params.layers:
        attn_out = multi_head_attention(x, x, batch.mask, layer.attn, cfg.n_heads, drop, rng)
        x = layer_norm(add(x, dropout(attn_out, drop, rng)), layer.ln1.gain, layer.ln1.bias)
        ffn_out = ffn_forward(x, layer.ffn)
        x = layer_norm(add(x, dropout(ffn_out, drop, rng)), layer.ln2.gain, layer.ln2.bias)

    return EncoderOutput(hidden=x, attn_mask=batch.mask, lengths=batch.lengths)
