"""Extraction heads for aspect/opinion tagging and the [CLS] auxiliary heads.

Each extraction head is a purely affine map into a d_h-dim intermediate (no
nonlinearity — the intermediate doubles as the decoder's cross-attention
keys/values) followed by a 3-way softmax over {B, I, O} per token position.
The auxiliary heads classify the [CLS] representation: 3-way for the
masked-term task, 2-way for the pair-relation task.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, nll_loss, softmax
from .encoder import EncoderOutput, linear, uniform_init, zeros_param
from .errors import ContractViolation


@dataclass
class ExtractionHeadParams:
    w1: Tensor  # (d_h, d_h)
    b1: Tensor  # (d_h,)
    w2: Tensor  # (3, d_h)
    b2: Tensor  # (3,)

    @classmethod
    def init(cls, d: int, rng: np.random.Generator) -> "ExtractionHeadParams":
        return cls(uniform_init(rng, (d, d)), zeros_param(d),
                   uniform_init(rng, (3, d)), zeros_param(3))


@dataclass
class AuxHeadParams:
    w3: Tensor  # (3, d_h) masked-term-type head
    b3: Tensor
    w4: Tensor  # (2, d_h) pair-relation head
    b4: Tensor

    @classmethod
    def init(cls, d: int, rng: np.random.Generator) -> "AuxHeadParams":
        return cls(uniform_init(rng, (3, d)), zeros_param(3),
                   uniform_init(rng, (2, d)), zeros_param(2))


@dataclass
class ExtractionTrace:
    """Per-token intermediate Z and tag probabilities over token positions only."""

    z: Tensor  # (B, T, d_h), T = padded width - 2
    probs: Tensor  # (B, T, 3)
    token_mask: np.ndarray  # (B, T) bool


def extraction_forward(enc_out: EncoderOutput, p: ExtractionHeadParams) -> ExtractionTrace:
    tokens, token_mask = enc_out.tokens()
    if tokens.shape[1] < 1:
        raise ContractViolation("no token positions to tag")
    z = linear(tokens, p.w1, p.b1)  # affine, no activation
    probs = softmax(linear(z, p.w2, p.b2), axis=-1)
    return ExtractionTrace(z=z, probs=probs, token_mask=token_mask)


def extraction_loss(trace: ExtractionTrace, gold: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean NLL of gold tags over unmasked token positions."""
    gold = np.asarray(gold)
    if gold.shape != trace.probs.shape[:-1]:
        raise ContractViolation(f"gold shape {gold.shape} != probs leading shape {trace.probs.shape[:-1]}")
    return nll_loss(trace.probs, gold, trace.token_mask if mask is None else mask)


def aux_forward(h_cls: Tensor, p: AuxHeadParams, kind: str) -> Tensor:
    """Class probabilities from the [CLS] representation (B, d_h)."""
    if kind == "tsmtd":
        return softmax(linear(h_cls, p.w3, p.b3), axis=-1)
    if kind == "prd":
        return softmax(linear(h_cls, p.w4, p.b4), axis=-1)
    raise ContractViolation(f"kind must be 'tsmtd' or 'prd', got {kind!r}")


def aux_loss(probs: Tensor, gold: np.ndarray) -> Tensor:
    return nll_loss(probs, np.asarray(gold))
