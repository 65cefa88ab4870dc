"""Joint training: the combined objective over the three main tag losses and
the two auxiliary losses, Adam with decoupled weight decay, the epoch loop
with per-epoch auxiliary-instance regeneration, and versioned checkpoints.

All run randomness (shuffling, auxiliary sampling, dropout) is derived
statelessly from (seed, epoch, step, role), so fixed-seed runs are
reproducible byte for byte.
"""
from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass, fields

import numpy as np

from . import kernels
from .autodiff import Tensor, backward, zero_grads
from .corpus import Corpus
from .encoder import ModelConfig
from .errors import ContractViolation, NumericalError, ValidationError
from .model import (
    ModelParams, forward_absa, forward_aux, init_model_params, named_parameters,
)
from .auxgen import make_prd, make_tsmtd
from .text import Batch, EncodedInstance, Vocabulary, encode_absa, pad_batch

ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    lr: float = 2e-3
    batch_size: int = 16
    epochs: int = 30
    weight_decay: float = 0.01
    seed: int = 0
    clip_norm: float = 1.0  # 0 disables clipping
    enable_ap: bool = True
    enable_op: bool = True
    enable_tsmtd: bool = True
    enable_prd: bool = True
    min_freq: int = 1
    aux_per_sentence: int = 1

    def validate(self) -> None:
        if self.alpha < 0:
            raise ValidationError("alpha must be >= 0")
        if self.seed < 0:
            raise ValidationError("seed must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.lr <= 0:
            raise ValidationError("lr must be > 0")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be >= 0")
        if self.clip_norm < 0:
            raise ValidationError("clip_norm must be > 0, or 0 to disable")
        if self.min_freq < 1:
            raise ValidationError("min_freq must be >= 1")
        if self.aux_per_sentence < 1:
            raise ValidationError("aux_per_sentence must be >= 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        cfg = cls(**d)
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class LossBreakdown:
    l_ate: float
    l_ote: float
    l_asc: float
    l_tsmtd: float
    l_prd: float
    l_absa: float
    l_aux: float
    l_final: float

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    t: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def init(cls, params: ModelParams) -> "AdamState":
        named = named_parameters(params)
        return cls(t=0,
                   m={n: np.zeros(t.data.size) for n, t, _ in named},
                   v={n: np.zeros(t.data.size) for n, t, _ in named})


def clip_gradients(named, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for _, t, _ in named:
        if t.grad is not None:
            total += float((t.grad ** 2).sum())
    total = total ** 0.5
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for _, t, _ in named:
            if t.grad is not None:
                t.grad *= factor
    return total


def optimizer_update(
    params: ModelParams,
    state: AdamState,
    lr: float,
    weight_decay: float,
) -> None:
    """One Adam step with bias correction; decoupled decay skips layer-norm
    parameters and every bias vector (the decay flag in the registry)."""
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.t
    bc2 = 1.0 - ADAM_BETA2 ** state.t
    for name, t, decay in named_parameters(params):
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        kernels.adam_step(
            t.data.reshape(-1), np.ascontiguousarray(g.reshape(-1)),
            state.m[name], state.v[name],
            lr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, bc1, bc2,
            weight_decay if decay else 0.0,
        )


# ---------------------------------------------------------------------------
# one optimization step
# ---------------------------------------------------------------------------

def _zero_loss() -> Tensor:
    return Tensor(0.0)


def step(
    batch_absa: Batch,
    batch_tsmtd: Batch | None,
    batch_prd: Batch | None,
    params: ModelParams,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    state: AdamState,
    epoch: int = 0,
    step_idx: int = 0,
) -> LossBreakdown:
    """One joint update: forward each task through the shared encoder, combine
    losses, backpropagate, clip, and apply the optimizer."""
    named = named_parameters(params)
    zero_grads(t for _, t, _ in named)

    def rng_for(role: int) -> np.random.Generator:
        return np.random.default_rng((cfg.seed, epoch, step_idx, role))

    fwd = forward_absa(params, batch_absa, model_cfg,
                       enable_ap=cfg.enable_ap, enable_op=cfg.enable_op,
                       mode="train", rng=rng_for(0))
    l_tsmtd = forward_aux(params, batch_tsmtd, model_cfg, mode="train", rng=rng_for(1)) \
        if (cfg.enable_tsmtd and batch_tsmtd is not None) else _zero_loss()
    l_prd = forward_aux(params, batch_prd, model_cfg, mode="train", rng=rng_for(2)) \
        if (cfg.enable_prd and batch_prd is not None) else _zero_loss()

    for name, t in (("l_ate", fwd.l_ate), ("l_ote", fwd.l_ote), ("l_asc", fwd.l_asc),
                    ("l_tsmtd", l_tsmtd), ("l_prd", l_prd)):
        if not np.isfinite(t.data):
            raise NumericalError(f"non-finite loss term: {name}")

    l_absa = fwd.l_ate + fwd.l_ote + fwd.l_asc
    l_aux = l_tsmtd + l_prd
    l_final = l_absa + cfg.alpha * l_aux

    backward(l_final)
    clip_gradients(named, cfg.clip_norm)
    optimizer_update(params, state, cfg.lr, cfg.weight_decay)

    return LossBreakdown(
        l_ate=fwd.l_ate.item(), l_ote=fwd.l_ote.item(), l_asc=fwd.l_asc.item(),
        l_tsmtd=l_tsmtd.item(), l_prd=l_prd.item(),
        l_absa=l_absa.item(), l_aux=l_aux.item(), l_final=l_final.item(),
    )


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    version: int
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    vocab: Vocabulary
    params: ModelParams
    rng_state: dict
    epoch: int


def params_state_dict(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t, _ in named_parameters(params)}


def load_state_dict(params: ModelParams, state: dict[str, np.ndarray]) -> None:
    named = {name: t for name, t, _ in named_parameters(params)}
    if set(named) != set(state):
        missing = set(named) ^ set(state)
        raise ValidationError(f"state dict does not match parameter registry: {sorted(missing)}")
    for name, t in named.items():
        if state[name].shape != t.data.shape:
            raise ValidationError(f"shape mismatch for {name}: {state[name].shape} vs {t.data.shape}")
        t.data[...] = state[name]


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """JSON header line (configs, vocab, tensor manifest) then little-endian
    float64 payloads in manifest order."""
    named = named_parameters(ckpt.params)
    manifest = []
    blobs = []
    offset = 0
    for name, t, _ in named:
        raw = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(t.data.shape),
                         "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": ckpt.version,
        "model": ckpt.model_cfg.to_dict(),
        "train": ckpt.train_cfg.to_dict(),
        "vocab": list(ckpt.vocab.id_to_token),
        "rng_state": ckpt.rng_state,
        "epoch": ckpt.epoch,
        "manifest": manifest,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8") + b"\n")
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        header_line = f.readline()
        payload = f.read()
    header = json.loads(header_line.decode("utf-8"))
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {header.get('format_version')}")
    model_cfg = ModelConfig.from_dict(header["model"])
    train_cfg = TrainConfig.from_dict(header["train"])
    vocab = Vocabulary.from_tokens(header["vocab"])
    params = init_model_params(model_cfg, seed=0)
    named = {name: t for name, t, _ in named_parameters(params)}
    seen = set()
    for entry in header["manifest"]:
        name = entry["name"]
        if name not in named:
            raise ValidationError(f"checkpoint manifest names unknown parameter {name!r}")
        arr = np.frombuffer(payload, dtype="<f8",
                            count=entry["nbytes"] // 8, offset=entry["offset"])
        named[name].data[...] = arr.reshape(entry["shape"])
        seen.add(name)
    if seen != set(named):
        raise ValidationError(f"checkpoint missing parameters: {sorted(set(named) - seen)}")
    return Checkpoint(version=header["format_version"], model_cfg=model_cfg,
                      train_cfg=train_cfg, vocab=vocab, params=params,
                      rng_state=header["rng_state"], epoch=header["epoch"])


# ---------------------------------------------------------------------------
# epoch loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[dict]
    steps: list[LossBreakdown]
    best_epoch: int
    best_dev_absa_f1: float


def _chunk(items: list, size: int) -> list[list]:
    return [items[i:i + size] for i in range(0, len(items), size)]


def _aux_batches(sentences, vocab, cfg: TrainConfig, epoch: int, kind: str) -> list[Batch]:
    rng = random.Random(f"{cfg.seed}:aux:{kind}:{epoch}")
    maker = make_tsmtd if kind == "tsmtd" else make_prd
    instances: list[EncodedInstance] = []
    for s in sentences:
        for _ in range(cfg.aux_per_sentence):
            inst = maker(s, vocab, rng)
            if inst is not None:
                instances.append(inst.encoded)
    size = cfg.batch_size * cfg.aux_per_sentence
    return [pad_batch(group, vocab) for group in _chunk(instances, size)]


def train_loop(
    train_corpus: Corpus,
    dev_corpus: Corpus,
    vocab: Vocabulary,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    log_path=None,
) -> TrainResult:
    """Seeded epochs of shuffled batches; auxiliary instances are resampled
    each epoch; the checkpoint with the best dev joint F1 is retained."""
    cfg.validate()
    model_cfg.validate()
    if len(train_corpus) == 0:
        raise ContractViolation("train split is empty")
    from .predict import evaluate  # local import: predict depends on this module's types

    params = init_model_params(model_cfg, cfg.seed)
    state = AdamState.init(params)
    encoded = [encode_absa(s, vocab) for s in train_corpus.sentences]

    best_state = params_state_dict(params)
    best_f1 = -1.0
    best_epoch = 0
    log: list[dict] = []
    all_steps: list[LossBreakdown] = []

    for epoch in range(cfg.epochs):
        order = list(range(len(encoded)))
        random.Random(f"{cfg.seed}:shuffle:{epoch}").shuffle(order)
        shuffled_sentences = [train_corpus.sentences[i] for i in order]
        absa_batches = [pad_batch([encoded[i] for i in group], vocab)
                        for group in _chunk(order, cfg.batch_size)]
        tsmtd_batches = _aux_batches(shuffled_sentences, vocab, cfg, epoch, "tsmtd") \
            if cfg.enable_tsmtd else []
        prd_batches = _aux_batches(shuffled_sentences, vocab, cfg, epoch, "prd") \
            if cfg.enable_prd else []

        epoch_steps: list[LossBreakdown] = []
        for si, (ba, bt, bp) in enumerate(
                itertools.zip_longest(absa_batches, tsmtd_batches, prd_batches)):
            if ba is None:
                break
            bd = step(ba, bt, bp, params, model_cfg, cfg, state, epoch=epoch, step_idx=si)
            epoch_steps.append(bd)
        all_steps.extend(epoch_steps)

        dev_report = evaluate(params, model_cfg, vocab, dev_corpus,
                              enable_ap=cfg.enable_ap, enable_op=cfg.enable_op,
                              batch_size=cfg.batch_size)
        n = max(1, len(epoch_steps))
        record = {"epoch": epoch}
        for key in ("l_ate", "l_ote", "l_asc", "l_tsmtd", "l_prd", "l_absa", "l_aux", "l_final"):
            record[key] = sum(getattr(s, key) for s in epoch_steps) / n
        record["dev"] = dev_report.to_dict()
        log.append(record)

        if dev_report.absa_f1 > best_f1:
            best_f1 = dev_report.absa_f1
            best_epoch = epoch
            best_state = params_state_dict(params)

    final_params = init_model_params(model_cfg, cfg.seed)
    load_state_dict(final_params, best_state)
    ckpt = Checkpoint(version=CHECKPOINT_VERSION, model_cfg=model_cfg, train_cfg=cfg,
                      vocab=vocab, params=final_params,
                      rng_state={"scheme": "derived-v1", "seed": cfg.seed},
                      epoch=best_epoch)
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as f:
            for record in log:
                f.write(json.dumps(record) + "\n")
    return TrainResult(checkpoint=ckpt, log=log, steps=all_steps,
                       best_epoch=best_epoch, best_dev_absa_f1=max(best_f1, 0.0))
