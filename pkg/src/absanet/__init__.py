"""Joint aspect/opinion extraction and per-aspect polarity tagging, trained
with a propagation decoder and two self-supervised auxiliary objectives."""

__version__ = "0.1.0"

from .corpus import (
    AnnotatedSentence, Corpus, LabelSequences, Span, SynthConfig,
    decode_chunks, encode_bio, generate_synthetic, parse_corpus, validate_sentence,
)
from .encoder import ModelConfig
from .metrics import MetricsReport, Prediction, score
from .text import Vocabulary, build_vocab, encode_absa, pad_batch
from .train import Checkpoint, LossBreakdown, TrainConfig, load_checkpoint, save_checkpoint, train_loop

__all__ = [
    "AnnotatedSentence", "Checkpoint", "Corpus", "LabelSequences", "LossBreakdown",
    "MetricsReport", "ModelConfig", "Prediction", "Span", "SynthConfig", "TrainConfig",
    "Vocabulary", "build_vocab", "decode_chunks", "encode_absa", "encode_bio",
    "generate_synthetic", "load_checkpoint", "pad_batch", "parse_corpus",
    "save_checkpoint", "score", "train_loop", "validate_sentence",
]
