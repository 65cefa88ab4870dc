"""Full model assembly: the shared encoder plus every task head, and the
joint forward passes that the trainer, evaluator, and gradient checker share.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .corpus import BIO_TAG_TO_ID, POLARITY_TAG_TO_ID
from .decoder import (
    BaselineHeadParams, DecoderParams, ablation_polarity_head, asc_loss,
    init_decoder_params, polarity_forward, propagate,
)
from .encoder import EncoderOutput, EncoderParams, ModelConfig, encode, init_params
from .errors import ContractViolation
from .heads import (
    AuxHeadParams, ExtractionHeadParams, ExtractionTrace,
    aux_forward, aux_loss, extraction_forward, extraction_loss,
)
from .text import Batch

np_int = np.int64


@dataclass
class ModelParams:
    """Every trainable parameter group; `encoder` is the single shared instance
    referenced by all task forwards."""

    encoder: EncoderParams
    ate_head: ExtractionHeadParams
    ote_head: ExtractionHeadParams
    decoder: DecoderParams
    baseline_head: BaselineHeadParams
    aux: AuxHeadParams


def init_model_params(cfg: ModelConfig, seed: int) -> ModelParams:
    cfg.validate()
    enc = init_params(cfg, seed)
    rng = np.random.default_rng((seed, 1))
    return ModelParams(
        encoder=enc,
        ate_head=ExtractionHeadParams.init(cfg.d_h, rng),
        ote_head=ExtractionHeadParams.init(cfg.d_h, rng),
        decoder=init_decoder_params(cfg, rng),
        baseline_head=BaselineHeadParams.init(cfg.d_h, rng),
        aux=AuxHeadParams.init(cfg.d_h, rng),
    )


def _attn_entries(prefix, p):
    return [(f"{prefix}.wq", p.wq, True), (f"{prefix}.bq", p.bq, False),
            (f"{prefix}.wk", p.wk, True),
            (f"{prefix}.wv", p.wv, True), (f"{prefix}.bv", p.bv, False),
            (f"{prefix}.wo", p.wo, True), (f"{prefix}.bo", p.bo, False)]


def _ln_entries(prefix, p):
    return [(f"{prefix}.gain", p.gain, False), (f"{prefix}.bias", p.bias, False)]


def _ffn_entries(prefix, p):
    return [(f"{prefix}.w1", p.w1, True), (f"{prefix}.b1", p.b1, False),
            (f"{prefix}.w2", p.w2, True), (f"{prefix}.b2", p.b2, False)]


def named_parameters(params: ModelParams) -> list[tuple[str, Tensor, bool]]:
    """Deterministic (name, tensor, decay_flag) listing of every parameter.

    decay_flag is False for biases and layer-norm parameters (they are skipped
    by decoupled weight decay).
    """
    entries: list[tuple[str, Tensor, bool]] = [
        ("encoder.tok_emb", params.encoder.tok_emb, True),
        ("encoder.pos_emb", params.encoder.pos_emb, True),
    ]
    for i, layer in enumerate(params.encoder.layers):
        entries += _attn_entries(f"encoder.layer{i}.attn", layer.attn)
        entries += _ln_entries(f"encoder.layer{i}.ln1", layer.ln1)
        entries += _ffn_entries(f"encoder.layer{i}.ffn", layer.ffn)
        entries += _ln_entries(f"encoder.layer{i}.ln2", layer.ln2)
    for head_name, head in (("ate_head", params.ate_head), ("ote_head", params.ote_head)):
        entries += [(f"{head_name}.w1", head.w1, True), (f"{head_name}.b1", head.b1, False),
                    (f"{head_name}.w2", head.w2, True), (f"{head_name}.b2", head.b2, False)]
    for i, block in enumerate(params.decoder.blocks):
        entries += _attn_entries(f"decoder.block{i}.self_attn", block.self_attn)
        entries += _ln_entries(f"decoder.block{i}.ln_self", block.ln_self)
        entries += _attn_entries(f"decoder.block{i}.cross_aspect", block.cross_aspect)
        entries += _ln_entries(f"decoder.block{i}.ln_aspect", block.ln_aspect)
        entries += _attn_entries(f"decoder.block{i}.cross_opinion", block.cross_opinion)
        entries += _ln_entries(f"decoder.block{i}.ln_opinion", block.ln_opinion)
        entries += _ffn_entries(f"decoder.block{i}.ffn", block.ffn)
        entries += _ln_entries(f"decoder.block{i}.ln_ffn", block.ln_ffn)
    entries += [("decoder.w_p", params.decoder.w_p, True), ("decoder.b_p", params.decoder.b_p, False),
                ("baseline_head.w1", params.baseline_head.w1, True),
                ("baseline_head.b1", params.baseline_head.b1, False),
                ("baseline_head.w2", params.baseline_head.w2, True),
                ("baseline_head.b2", params.baseline_head.b2, False),
                ("aux.w3", params.aux.w3, True), ("aux.b3", params.aux.b3, False),
                ("aux.w4", params.aux.w4, True), ("aux.b4", params.aux.b4, False)]
    return entries


def param_tensors(params: ModelParams) -> dict[str, Tensor]:
    return {name: t for name, t, _ in named_parameters(params)}


def absa_targets(batch: Batch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Padded int target matrices (aspect, opinion, polarity), each (B, T)."""
    if batch.kind != "absa":
        raise ContractViolation(f"absa targets requested from a {batch.kind!r} batch")
    b, t = batch.ids.shape[0], batch.width - 2
    aspect = np.zeros((b, t), dtype=np_int)
    opinion = np.zeros((b, t), dtype=np_int)
    polarity = np.zeros((b, t), dtype=np_int)
    for i, inst in enumerate(batch.instances):
        labels = inst.targets
        n = inst.token_count
        aspect[i, :n] = [BIO_TAG_TO_ID[x] for x in labels.aspect_tags]
        opinion[i, :n] = [BIO_TAG_TO_ID[x] for x in labels.opinion_tags]
        polarity[i, :n] = [POLARITY_TAG_TO_ID[x] for x in labels.polarity_tags]
    return aspect, opinion, polarity


def aux_targets(batch: Batch) -> np.ndarray:
    return np.array([inst.targets.label for inst in batch.instances], dtype=np_int)


@dataclass
class AbsaForward:
    enc_out: EncoderOutput
    ate: ExtractionTrace
    ote: ExtractionTrace
    polarity_probs: Tensor  # (B, T, 4)
    token_mask: np.ndarray
    l_ate: Tensor
    l_ote: Tensor
    l_asc: Tensor


def forward_absa(
    params: ModelParams,
    batch: Batch,
    cfg: ModelConfig,
    enable_ap: bool = True,
    enable_op: bool = True,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> AbsaForward:
    """Shared encoder -> extraction heads -> polarity path -> the three main losses.

    With both propagation sublayers disabled the polarity path bypasses the
    decoder and reads the baseline head off the encoder output.
    """
    enc_out = encode(batch, params.encoder, cfg, mode=mode, rng=rng)
    ate = extraction_forward(enc_out, params.ate_head)
    ote = extraction_forward(enc_out, params.ote_head)

    if enable_ap or enable_op:
        trace = propagate(enc_out, ate.z, ote.z, params.decoder, cfg,
                          enable_ap=enable_ap, enable_op=enable_op, mode=mode, rng=rng)
        pol_probs = polarity_forward(trace, params.decoder)
        token_mask = trace.token_mask
    else:
        pol_probs, token_mask = ablation_polarity_head(enc_out, params.baseline_head)

    gold_a, gold_o, gold_p = absa_targets(batch)
    l_ate = extraction_loss(ate, gold_a)
    l_ote = extraction_loss(ote, gold_o)
    l_asc = asc_loss(pol_probs, gold_p, token_mask)
    return AbsaForward(enc_out=enc_out, ate=ate, ote=ote, polarity_probs=pol_probs,
                       token_mask=token_mask, l_ate=l_ate, l_ote=l_ote, l_asc=l_asc)


def forward_aux(
    params: ModelParams,
    batch: Batch,
    cfg: ModelConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Encoder -> [CLS] -> the matching auxiliary head's mean NLL."""
    if batch.kind not in ("tsmtd", "prd"):
        raise ContractViolation(f"aux forward on a {batch.kind!r} batch")
    enc_out = encode(batch, params.encoder, cfg, mode=mode, rng=rng)
    probs = aux_forward(enc_out.cls(), params.aux, batch.kind)
    return aux_loss(probs, aux_targets(batch))


def predict_tags(
    params: ModelParams,
    batch: Batch,
    cfg: ModelConfig,
    enable_ap: bool = True,
    enable_op: bool = True,
) -> list[dict]:
    """Eval-mode argmax tag sequences per instance.

    Returns one dict per sentence with aspect/opinion/polarity index arrays
    (class order as in the tag maps; argmax ties go to the lowest index) and
    the raw polarity probabilities for chunk-level voting.
    """
    fwd = forward_absa(params, batch, cfg, enable_ap=enable_ap, enable_op=enable_op, mode="eval")
    ate_idx = np.argmax(fwd.ate.probs.data, axis=-1)
    ote_idx = np.argmax(fwd.ote.probs.data, axis=-1)
    pol_idx = np.argmax(fwd.polarity_probs.data, axis=-1)
    out = []
    for i, inst in enumerate(batch.instances):
        n = inst.token_count
        out.append({
            "aspect_ids": ate_idx[i, :n],
            "opinion_ids": ote_idx[i, :n],
            "polarity_ids": pol_idx[i, :n],
            "polarity_probs": fwd.polarity_probs.data[i, :n],
        })
    return out
