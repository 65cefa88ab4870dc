"""Construction of the two self-supervised auxiliary instances per sentence.

tsmtd: replace one span (an aspect, an opinion, or a neutral run) with a single
[MASK] and classify which type was masked from [CLS].
prd: replace one aspect span and one opinion span with [REL] tokens and
classify whether they form an annotated pair; negatives come from crossing
aspects and opinions of different pairs.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass

from .corpus import AnnotatedSentence, Span, validate_sentence
from .errors import ContractViolation
from .text import CLS_ID, MASK_ID, REL_ID, SEP_ID, AuxTarget, EncodedInstance, Vocabulary

TSMTD_ASPECT, TSMTD_OPINION, TSMTD_NONE = 0, 1, 2
PRD_FALSE, PRD_TRUE = 0, 1


@dataclass(frozen=True, slots=True)
class TsmtdInstance:
    encoded: EncodedInstance
    masked_span: Span  # original-sentence coordinates, kept for testing
    masked_type: str


@dataclass(frozen=True, slots=True)
class PrdInstance:
    encoded: EncodedInstance
    aspect_idx: int
    opinion_idx: int
    is_pair: bool


def _require_valid(s: AnnotatedSentence) -> None:
    violations = validate_sentence(s)
    if violations:
        raise ContractViolation("invalid sentence: " + "; ".join(violations))


def _annotated_positions(s: AnnotatedSentence) -> set[int]:
    pos = set()
    for span, _ in s.aspects:
        pos.update(range(span.start, span.end))
    for span in s.opinions:
        pos.update(range(span.start, span.end))
    return pos


def eligible_neutral_spans(s: AnnotatedSentence) -> list[Span]:
    """1-3 token runs that touch no annotation, in position order."""
    taken = _annotated_positions(s)
    n = len(s.tokens)
    spans = []
    for start in range(n):
        for length in (1, 2, 3):
            end = start + length
            if end > n:
                break
            if any(i in taken for i in range(start, end)):
                break
            spans.append(Span(start, end))
    return spans


def _replace_spans(s: AnnotatedSentence, v: Vocabulary, replacements: list[tuple[Span, int]]) -> tuple[int, ...]:
    """Id sequence with each span collapsed to one special token (spans must not overlap)."""
    repl = sorted(replacements, key=lambda r: r[0].start)
    ids = [CLS_ID]
    i = 0
    for span, special in repl:
        while i < span.start:
            ids.append(v.encode_token(s.tokens[i]))
            i += 1
        ids.append(special)
        i = span.end
    while i < len(s.tokens):
        ids.append(v.encode_token(s.tokens[i]))
        i += 1
    ids.append(SEP_ID)
    return tuple(ids)


def make_tsmtd(s: AnnotatedSentence, v: Vocabulary, rng: random.Random) -> TsmtdInstance | None:
    """Uniform over available types (aspect/opinion/neutral), then uniform over
    spans of that type; multi-token spans collapse to one [MASK]. None when the
    sentence offers no span of any type."""
    _require_valid(s)
    options: list[str] = []
    if s.aspects:
        options.append("Aspect")
    if s.opinions:
        options.append("Opinion")
    neutral = eligible_neutral_spans(s)
    if neutral:
        options.append("O")
    if not options:
        return None
    kind = rng.choice(options)
    if kind == "Aspect":
        span = rng.choice([sp for sp, _ in s.aspects])
        label = TSMTD_ASPECT
    elif kind == "Opinion":
        span = rng.choice(list(s.opinions))
        label = TSMTD_OPINION
    else:
        span = rng.choice(neutral)
        label = TSMTD_NONE
    ids = _replace_spans(s, v, [(span, MASK_ID)])
    enc = EncodedInstance(ids=ids, kind="tsmtd", token_count=len(ids) - 2,
                          targets=AuxTarget("tsmtd", label))
    return TsmtdInstance(encoded=enc, masked_span=span, masked_type=kind)


def sample_prd_pair(
    pairs: list[tuple[int, int]], rng: random.Random,
) -> tuple[tuple[int, int], bool] | None:
    """Pick a (aspect_idx, opinion_idx) combination and its True/False target.

    Zero pairs -> None; one pair -> it, True. Otherwise draw r in (0, 1]:
    r <= 0.25 returns a uniformly chosen annotated pair (True); else an
    aspect and an opinion from two different pairs (False), re-drawing when
    the crossing accidentally equals an annotated pair. If every crossing is
    annotated, fall back to a true pair.
    """
    pairs = list(pairs)
    if len(pairs) == 0:
        return None
    if len(pairs) == 1:
        return pairs[0], True
    r = 1.0 - rng.random()  # (0, 1]
    if r <= 0.25:
        return rng.choice(pairs), True
    annotated = set(pairs)
    crossings = {(pairs[i][0], pairs[j][1])
                 for i in range(len(pairs)) for j in range(len(pairs)) if i != j}
    if not (crossings - annotated):
        return rng.choice(pairs), True
    while True:
        i = rng.randrange(len(pairs))
        j = rng.randrange(len(pairs))
        if i == j:
            continue
        cross = (pairs[i][0], pairs[j][1])
        if cross not in annotated:
            return cross, False


def make_prd(s: AnnotatedSentence, v: Vocabulary, rng: random.Random) -> PrdInstance | None:
    _require_valid(s)
    sampled = sample_prd_pair(list(s.pairs), rng)
    if sampled is None:
        return None
    (aspect_idx, opinion_idx), is_pair = sampled
    aspect_span = s.aspects[aspect_idx][0]
    opinion_span = s.opinions[opinion_idx]
    ids = _replace_spans(s, v, [(aspect_span, REL_ID), (opinion_span, REL_ID)])
    label = PRD_TRUE if is_pair else PRD_FALSE
    enc = EncodedInstance(ids=ids, kind="prd", token_count=len(ids) - 2,
                          targets=AuxTarget("prd", label))
    return PrdInstance(encoded=enc, aspect_idx=aspect_idx, opinion_idx=opinion_idx, is_pair=is_pair)


def dump_aux_instances(instances, path) -> None:
    """JSONL inspection dump: {"ids": [...], "kind": ..., "target": ...}."""
    with open(path, "w", encoding="utf-8") as f:
        for inst in instances:
            enc = inst.encoded
            target = enc.targets.name
            f.write(json.dumps({"ids": list(enc.ids), "kind": enc.kind, "target": target}) + "\n")
