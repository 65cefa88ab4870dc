"""Inference: raw token sequences in, extracted aspect/opinion chunks with
per-aspect polarities out. Also the batched evaluation pass feeding the
metric suite.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import BIO_TAGS, POLARITIES, POLARITY_TAGS, AnnotatedSentence, Corpus, Span, decode_chunks
from .encoder import ModelConfig
from .errors import ValidationError
from .metrics import MetricsReport, Prediction, score
from .model import ModelParams, predict_tags
from .text import Vocabulary, encode_absa, pad_batch
from .train import Checkpoint


@dataclass(frozen=True)
class SentencePrediction:
    tokens: tuple[str, ...]
    aspects: tuple[tuple[Span, str], ...]
    opinions: tuple[Span, ...]

    def to_json(self) -> dict:
        return {
            "tokens": list(self.tokens),
            "aspects": [{"start": sp.start, "end": sp.end, "polarity": pol}
                        for sp, pol in self.aspects],
            "opinions": [{"start": sp.start, "end": sp.end} for sp in self.opinions],
        }


def _chunk_polarity(span: Span, pol_ids: np.ndarray, pol_probs: np.ndarray) -> str:
    """Majority vote over the chunk's per-token argmax polarities, O votes
    dropped whenever any non-O vote exists; ties go to the earliest tied vote.
    If every position argmaxes to O, take the class with the largest summed
    probability mass (tie -> POS)."""
    votes = [POLARITY_TAGS[i] for i in pol_ids[span.start:span.end]]
    non_o = [v for v in votes if v != "O"]
    if non_o:
        counts = Counter(non_o)
        top = max(counts.values())
        tied = {v for v, c in counts.items() if c == top}
        return next(v for v in non_o if v in tied)
    mass = pol_probs[span.start:span.end, :len(POLARITIES)].sum(axis=0)
    return POLARITIES[int(np.argmax(mass))]


def _tags_of(ids: np.ndarray, alphabet: tuple[str, ...]) -> tuple[str, ...]:
    return tuple(alphabet[i] for i in ids)


def predict_batch(
    params: ModelParams,
    model_cfg: ModelConfig,
    vocab: Vocabulary,
    sentences: Sequence[AnnotatedSentence],
    enable_ap: bool = True,
    enable_op: bool = True,
    batch_size: int = 32,
) -> tuple[list[Prediction], list[SentencePrediction]]:
    """Eval-mode predictions for a list of sentences, order preserved."""
    for i, s in enumerate(sentences):
        if len(s.tokens) > model_cfg.max_len:
            raise ValidationError(
                f"sentence {i} has {len(s.tokens)} tokens, checkpoint max_len is {model_cfg.max_len}")
    tag_preds: list[Prediction] = []
    span_preds: list[SentencePrediction] = []
    for start in range(0, len(sentences), batch_size):
        group = sentences[start:start + batch_size]
        batch = pad_batch([encode_absa(s, vocab) for s in group], vocab)
        rows = predict_tags(params, batch, model_cfg, enable_ap=enable_ap, enable_op=enable_op)
        for s, row in zip(group, rows):
            aspect_tags = _tags_of(row["aspect_ids"], BIO_TAGS)
            opinion_tags = _tags_of(row["opinion_ids"], BIO_TAGS)
            polarity_tags = _tags_of(row["polarity_ids"], POLARITY_TAGS)
            tag_preds.append(Prediction(aspect_tags, opinion_tags, polarity_tags))

            aspects = tuple(
                (sp, _chunk_polarity(sp, row["polarity_ids"], row["polarity_probs"]))
                for sp, _ in decode_chunks(aspect_tags)
            )
            opinions = tuple(sp for sp, _ in decode_chunks(opinion_tags))
            span_preds.append(SentencePrediction(tokens=s.tokens, aspects=aspects, opinions=opinions))
    return tag_preds, span_preds


def predict_sentence(tokens: Sequence[str], ckpt: Checkpoint) -> SentencePrediction:
    """Single-sentence inference against a loaded checkpoint."""
    sentence = AnnotatedSentence(tuple(tokens), (), (), ())
    _, span_preds = predict_batch(
        ckpt.params, ckpt.model_cfg, ckpt.vocab, [sentence],
        enable_ap=ckpt.train_cfg.enable_ap, enable_op=ckpt.train_cfg.enable_op,
    )
    return span_preds[0]


def evaluate(
    params: ModelParams,
    model_cfg: ModelConfig,
    vocab: Vocabulary,
    corpus: Corpus,
    enable_ap: bool = True,
    enable_op: bool = True,
    batch_size: int = 32,
) -> MetricsReport:
    """Deterministic eval pass over a corpus followed by the full metric suite."""
    tag_preds, _ = predict_batch(params, model_cfg, vocab, corpus.sentences,
                                 enable_ap=enable_ap, enable_op=enable_op,
                                 batch_size=batch_size)
    return score(list(corpus.sentences), tag_preds)
