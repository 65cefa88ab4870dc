"""Propagation decoder: masked self-attention over the shared representation,
then two cross-attention steps that inject the aspect intermediate and the
opinion intermediate in that order, then a position-wise FFN — each sublayer
residual + layer norm. A 4-way head over token positions yields the polarity
sequence (POS, NEU, NEG, O).

The two cross-attention steps are the aspect-propagation (AP) and
opinion-propagation (OP) sublayers; either can be switched to a pass-through
for ablation. With both off, the model drops the decoder entirely and uses
`ablation_polarity_head` on the encoder output instead.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, dropout, layer_norm, narrow, nll_loss, softmax
from .encoder import (
    AttnParams, EncoderOutput, FfnParams, LayerNormParams, ModelConfig,
    ffn_forward, linear, multi_head_attention, uniform_init, zeros_param,
)
from .errors import ContractViolation


@dataclass
class DecoderBlockParams:
    self_attn: AttnParams
    ln_self: LayerNormParams
    cross_aspect: AttnParams
    ln_aspect: LayerNormParams
    cross_opinion: AttnParams
    ln_opinion: LayerNormParams
    ffn: FfnParams
    ln_ffn: LayerNormParams


@dataclass
class DecoderParams:
    blocks: list[DecoderBlockParams]
    w_p: Tensor  # (4, d_h) polarity head
    b_p: Tensor  # (4,)


@dataclass
class BaselineHeadParams:
    """Polarity head used when both propagation sublayers are ablated:
    affine d_h -> d_h then a 4-way softmax projection, applied straight to
    the encoder's token representations."""

    w1: Tensor
    b1: Tensor
    w2: Tensor  # (4, d_h)
    b2: Tensor

    @classmethod
    def init(cls, d: int, rng: np.random.Generator) -> "BaselineHeadParams":
        return cls(uniform_init(rng, (d, d)), zeros_param(d),
                   uniform_init(rng, (4, d)), zeros_param(4))


# Residual-branch output projections start at 0.1x scale so each decoder
# sublayer is near-identity at init; the residual+LN stack here sits on top of
# the encoder's own and trains without a warmup schedule only if it starts
# close to a pass-through.
RESIDUAL_OUT_SCALE = 0.1


def init_decoder_params(cfg: ModelConfig, rng: np.random.Generator) -> DecoderParams:
    blocks = []
    for _ in range(cfg.n_dec_layers):
        block = DecoderBlockParams(
            self_attn=AttnParams.init(cfg.d_h, rng),
            ln_self=LayerNormParams.init(cfg.d_h),
            cross_aspect=AttnParams.init(cfg.d_h, rng),
            ln_aspect=LayerNormParams.init(cfg.d_h),
            cross_opinion=AttnParams.init(cfg.d_h, rng),
            ln_opinion=LayerNormParams.init(cfg.d_h),
            ffn=FfnParams.init(cfg.d_h, cfg.ffn_dim, rng),
            ln_ffn=LayerNormParams.init(cfg.d_h),
        )
        for attn in (block.self_attn, block.cross_aspect, block.cross_opinion):
            attn.wo.data *= RESIDUAL_OUT_SCALE
        block.ffn.w2.data *= RESIDUAL_OUT_SCALE
        blocks.append(block)
    return DecoderParams(blocks=blocks, w_p=uniform_init(rng, (4, cfg.d_h)), b_p=zeros_param(4))


@dataclass
class DecoderTrace:
    """First-block intermediates plus the final block output the head reads."""

    u_h: Tensor  # (B, S, d_h) after self-attention
    u_a: Tensor  # after aspect cross-attention
    u_o: Tensor  # after opinion cross-attention
    final: Tensor  # (B, S, d_h) last block output
    token_mask: np.ndarray  # (B, S-2)


def propagate(
    enc_out: EncoderOutput,
    za: Tensor,
    zo: Tensor,
    p: DecoderParams,
    cfg: ModelConfig,
    enable_ap: bool = True,
    enable_op: bool = True,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> DecoderTrace:
    """Run the decoder blocks over H with cross-attention keys Za then Zo.

    Za/Zo cover exactly the token positions (width - 2 columns); queries use
    the full sequence including [CLS]/[SEP].
    """
    _, token_mask = enc_out.tokens()
    t = token_mask.shape[1]
    if za.shape[1] != t or zo.shape[1] != t:
        raise ContractViolation(
            f"cross-attention key width mismatch: Za {za.shape[1]}, Zo {zo.shape[1]}, tokens {t}")
    drop = cfg.dropout if mode == "train" else 0.0
    if mode == "eval":
        rng = None

    x = enc_out.hidden
    first: tuple[Tensor, Tensor, Tensor] | None = None
    for block in p.blocks:
        sa = multi_head_attention(x, x, enc_out.attn_mask, block.self_attn, cfg.n_heads, drop, rng)
        u_h = layer_norm(add(x, dropout(sa, drop, rng)), block.ln_self.gain, block.ln_self.bias)

        if enable_ap:
            ca = multi_head_attention(u_h, za, token_mask, block.cross_aspect, cfg.n_heads, drop, rng)
            u_a = layer_norm(add(u_h, dropout(ca, drop, rng)), block.ln_aspect.gain, block.ln_aspect.bias)
        else:
            u_a = u_h

        if enable_op:
            co = multi_head_attention(u_a, zo, token_mask, block.cross_opinion, cfg.n_heads, drop, rng)
            u_o = layer_norm(add(u_a, dropout(co, drop, rng)), block.ln_opinion.gain, block.ln_opinion.bias)
        else:
            u_o = u_a

        x = layer_norm(add(u_o, dropout(ffn_forward(u_o, block.ffn), drop, rng)),
                       block.ln_ffn.gain, block.ln_ffn.bias)
        if first is None:
            first = (u_h, u_a, u_o)

    assert first is not None
    return DecoderTrace(u_h=first[0], u_a=first[1], u_o=first[2], final=x, token_mask=token_mask)


def polarity_forward(trace: DecoderTrace, p: DecoderParams) -> Tensor:
    """(B, T, 4) polarity probabilities over token positions from the final block."""
    s = trace.final.shape[1]
    tokens = narrow(trace.final, 1, 1, s - 2)
    return softmax(linear(tokens, p.w_p, p.b_p), axis=-1)


def asc_loss(probs: Tensor, gold: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean NLL of the gold polarity tags over unmasked token positions."""
    gold = np.asarray(gold)
    if gold.shape != probs.shape[:-1]:
        raise ContractViolation(f"gold shape {gold.shape} != probs leading shape {probs.shape[:-1]}")
    return nll_loss(probs, gold, mask)


def ablation_polarity_head(enc_out: EncoderOutput, p: BaselineHeadParams) -> tuple[Tensor, np.ndarray]:
    """Polarity probabilities straight off the encoder tokens, decoder bypassed."""
    tokens, token_mask = enc_out.tokens()
    z = linear(tokens, p.w1, p.b1)
    return softmax(linear(z, p.w2, p.b2), axis=-1), token_mask
