"""Evaluation suite: chunk F1 for the two extraction tasks, polarity F1 over
correctly extracted aspects, joint span+polarity F1, sentence-level accuracy,
and the single- vs multiple-aspect breakdown.

All chunk matching is exact-boundary; F1 uses the 0/0 -> 0 convention. Corpus
scores are micro-averaged (counts summed over sentences), except the polarity
F1 which is a macro average over classes (see asc_f1).
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .corpus import POLARITIES, AnnotatedSentence, Span, decode_chunks
from .errors import ContractViolation


@dataclass(frozen=True)
class MatchCounts:
    gold: int
    pred: int
    matched: int

    def prf(self) -> tuple[float, float, float]:
        p = self.matched / self.pred if self.pred else 0.0
        r = self.matched / self.gold if self.gold else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return p, r, f

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        return MatchCounts(self.gold + other.gold, self.pred + other.pred,
                           self.matched + other.matched)


@dataclass(frozen=True)
class Prediction:
    """Predicted tag sequences for one sentence, aligned to the gold tokens."""

    aspect_tags: tuple[str, ...]
    opinion_tags: tuple[str, ...]
    polarity_tags: tuple[str, ...]

    def aspect_chunks(self) -> list[tuple[Span, str]]:
        return [(sp, pol) for sp, pol in decode_chunks(self.aspect_tags, self.polarity_tags)]

    def opinion_chunks(self) -> list[Span]:
        return [sp for sp, _ in decode_chunks(self.opinion_tags)]


@dataclass(frozen=True)
class MetricsReport:
    ate_f1: float
    ote_f1: float
    asc_f1: float
    absa_f1: float
    sent_acc: float
    ate_counts: MatchCounts
    ote_counts: MatchCounts
    absa_counts: MatchCounts
    n_sentences: int
    strata: dict | None = None  # {"single_aspect": MetricsReport|None, ...}

    def to_dict(self) -> dict:
        d = {
            "ate_f1": self.ate_f1, "ote_f1": self.ote_f1,
            "asc_f1": self.asc_f1, "absa_f1": self.absa_f1,
            "sent_acc": self.sent_acc, "n_sentences": self.n_sentences,
            "counts": {
                "ate": vars(self.ate_counts),
                "ote": vars(self.ote_counts),
                "absa": vars(self.absa_counts),
            },
        }
        if self.strata is not None:
            d["strata"] = {
                k: (v.to_dict() if isinstance(v, MetricsReport) else v)
                for k, v in self.strata.items()
            }
        return d


def _check_aligned(gold: Sequence, pred: Sequence) -> None:
    if len(gold) != len(pred):
        raise ContractViolation(f"gold/pred corpus length mismatch: {len(gold)} vs {len(pred)}")


def chunk_counts(gold_spans: Sequence[Sequence[Span]], pred_spans: Sequence[Sequence[Span]]) -> MatchCounts:
    _check_aligned(gold_spans, pred_spans)
    g = p = m = 0
    for gs, ps in zip(gold_spans, pred_spans):
        gset, pset = set(gs), set(ps)
        g += len(gset)
        p += len(pset)
        m += len(gset & pset)
    return MatchCounts(g, p, m)


def chunk_f1(gold_spans, pred_spans) -> tuple[float, float, float]:
    """Micro precision/recall/F1 with exact span boundaries."""
    return chunk_counts(gold_spans, pred_spans).prf()


def joint_counts(gold_items, pred_items) -> MatchCounts:
    """Counts where a match needs identical span AND identical polarity."""
    _check_aligned(gold_items, pred_items)
    g = p = m = 0
    for gi, pi in zip(gold_items, pred_items):
        gset = {(sp.start, sp.end, pol) for sp, pol in gi}
        pset = {(sp.start, sp.end, pol) for sp, pol in pi}
        g += len(gset)
        p += len(pset)
        m += len(gset & pset)
    return MatchCounts(g, p, m)


def absa_f1(gold_items, pred_items) -> tuple[float, float, float]:
    return joint_counts(gold_items, pred_items).prf()


def asc_f1(gold_items, pred_items) -> float:
    """Macro F1 over the three polarity classes, scored on gold aspect chunks
    whose spans were extracted exactly; classes with no gold occurrence in that
    set are left out of the average. No scoreable chunk at all gives 0.
    """
    _check_aligned(gold_items, pred_items)
    tp: Counter = Counter()
    fp: Counter = Counter()
    fn: Counter = Counter()
    support: Counter = Counter()
    for gi, pi in zip(gold_items, pred_items):
        pred_by_span = {(sp.start, sp.end): pol for sp, pol in pi}
        for sp, gpol in gi:
            key = (sp.start, sp.end)
            if key not in pred_by_span:
                continue
            support[gpol] += 1
            ppol = pred_by_span[key]
            if ppol == gpol:
                tp[gpol] += 1
            else:
                fn[gpol] += 1
                fp[ppol] += 1
    classes = [c for c in POLARITIES if support[c] > 0]
    if not classes:
        return 0.0
    f1s = []
    for c in classes:
        p = tp[c] / (tp[c] + fp[c]) if tp[c] + fp[c] else 0.0
        r = tp[c] / (tp[c] + fn[c]) if tp[c] + fn[c] else 0.0
        f1s.append(2 * p * r / (p + r) if p + r else 0.0)
    return sum(f1s) / len(f1s)


def sentence_accuracy(gold_items, pred_items) -> float:
    """Fraction of sentences whose predicted (span, polarity) set equals gold exactly."""
    _check_aligned(gold_items, pred_items)
    if not gold_items:
        return 0.0
    hits = 0
    for gi, pi in zip(gold_items, pred_items):
        gset = {(sp.start, sp.end, pol) for sp, pol in gi}
        pset = {(sp.start, sp.end, pol) for sp, pol in pi}
        hits += gset == pset
    return hits / len(gold_items)


def _gold_views(sentences: Sequence[AnnotatedSentence]):
    gold_aspect_items = [[(sp, pol) for sp, pol in s.aspects] for s in sentences]
    gold_aspect_spans = [[sp for sp, _ in s.aspects] for s in sentences]
    gold_opinion_spans = [list(s.opinions) for s in sentences]
    return gold_aspect_items, gold_aspect_spans, gold_opinion_spans


def score(
    gold: Sequence[AnnotatedSentence],
    pred: Sequence[Prediction],
    with_strata: bool = True,
) -> MetricsReport:
    """Full report for aligned gold sentences and predictions."""
    _check_aligned(gold, pred)
    for s, p in zip(gold, pred):
        if len(p.aspect_tags) != len(s.tokens):
            raise ContractViolation("prediction length does not match gold token count")

    gold_aspect_items, gold_aspect_spans, gold_opinion_spans = _gold_views(gold)
    pred_aspect_items = [p.aspect_chunks() for p in pred]
    pred_aspect_spans = [[sp for sp, _ in items] for items in pred_aspect_items]
    pred_opinion_spans = [p.opinion_chunks() for p in pred]

    ate_counts = chunk_counts(gold_aspect_spans, pred_aspect_spans)
    ote_counts = chunk_counts(gold_opinion_spans, pred_opinion_spans)
    absa_counts = joint_counts(gold_aspect_items, pred_aspect_items)

    strata = None
    if with_strata:
        single = [i for i, s in enumerate(gold) if len(s.aspects) == 1]
        multiple = [i for i, s in enumerate(gold) if len(s.aspects) >= 2]
        zero = len(gold) - len(single) - len(multiple)

        def sub(idx: list[int]) -> MetricsReport | None:
            if not idx:
                return None
            return score([gold[i] for i in idx], [pred[i] for i in idx], with_strata=False)

        strata = {
            "single_aspect": sub(single),
            "multiple_aspect": sub(multiple),
            "zero_aspect_sentences": zero,
        }

    return MetricsReport(
        ate_f1=ate_counts.prf()[2],
        ote_f1=ote_counts.prf()[2],
        asc_f1=asc_f1(gold_aspect_items, pred_aspect_items),
        absa_f1=absa_counts.prf()[2],
        sent_acc=sentence_accuracy(gold_aspect_items, pred_aspect_items),
        ate_counts=ate_counts,
        ote_counts=ote_counts,
        absa_counts=absa_counts,
        n_sentences=len(gold),
        strata=strata,
    )


def stratify_by_aspect_count(gold, pred) -> dict:
    """The strata block alone (single vs multiple aspect plus zero-aspect count)."""
    report = score(gold, pred, with_strata=True)
    return report.strata
