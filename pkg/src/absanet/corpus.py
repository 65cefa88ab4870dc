"""Pair-annotated sentence data model, JSONL ingestion, BIO tag codec, synthetic corpus generator.

A sentence carries three kinds of annotation: aspect spans with a polarity each,
opinion spans, and links pairing an aspect with the opinion expressing sentiment
about it. Tags are per-token: {B, I, O} for the two extraction tasks and
{POS, NEU, NEG, O} for polarity.
"""
from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass
from typing import IO, Iterable

from .errors import ContractViolation, ParseError, ValidationError

POLARITIES = ("POS", "NEU", "NEG")
BIO_TAGS = ("B", "I", "O")
POLARITY_TAGS = ("POS", "NEU", "NEG", "O")

# Class-index maps used when tags become training targets.
BIO_TAG_TO_ID = {t: i for i, t in enumerate(BIO_TAGS)}
POLARITY_TAG_TO_ID = {t: i for i, t in enumerate(POLARITY_TAGS)}

SPLITS = ("train", "dev", "test")


@dataclass(frozen=True, slots=True)
class Span:
    """Token-indexed half-open interval [start, end)."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if not (0 <= self.start < self.end):
            raise ValidationError(f"start < end violated: ({self.start}, {self.end})")

    def overlaps(self, other: "Span") -> bool:
        return self.start < other.end and other.start < self.end

    def __len__(self) -> int:
        return self.end - self.start


@dataclass(frozen=True, slots=True)
class AnnotatedSentence:
    tokens: tuple[str, ...]
    aspects: tuple[tuple[Span, str], ...]  # (span, polarity)
    opinions: tuple[Span, ...]
    pairs: tuple[tuple[int, int], ...]  # (aspect index, opinion index)

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "aspects", tuple((s, p) for s, p in self.aspects))
        object.__setattr__(self, "opinions", tuple(self.opinions))
        object.__setattr__(self, "pairs", tuple((a, o) for a, o in self.pairs))

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True, slots=True)
class LabelSequences:
    """The three gold tag sequences for one sentence."""

    aspect_tags: tuple[str, ...]
    opinion_tags: tuple[str, ...]
    polarity_tags: tuple[str, ...]


@dataclass(frozen=True, slots=True)
class Corpus:
    sentences: tuple[AnnotatedSentence, ...]
    name: str
    split: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if self.split not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}, got {self.split!r}")

    def __len__(self) -> int:
        return len(self.sentences)


def validate_sentence(s: AnnotatedSentence) -> list[str]:
    """Return all invariant violations for `s` (empty list means valid).

    Violations are data, not errors: callers that require validity raise
    ContractViolation themselves.
    """
    violations: list[str] = []
    n = len(s.tokens)
    if n == 0:
        violations.append("tokens is empty")
    for i, tok in enumerate(s.tokens):
        if not isinstance(tok, str) or tok == "":
            violations.append(f"token {i} is empty")

    for i, (span, pol) in enumerate(s.aspects):
        if span.end > n:
            violations.append(f"aspect {i} span {span.start,span.end} exceeds sentence length {n}")
        if pol not in POLARITIES:
            violations.append(f"aspect {i} polarity {pol!r} not in {POLARITIES}")
    for i, span in enumerate(s.opinions):
        if span.end > n:
            violations.append(f"opinion {i} span {span.start,span.end} exceeds sentence length {n}")

    for i in range(len(s.aspects)):
        for j in range(i + 1, len(s.aspects)):
            if s.aspects[i][0].overlaps(s.aspects[j][0]):
                violations.append(f"aspect/aspect overlap: {i} and {j}")
    for i in range(len(s.opinions)):
        for j in range(i + 1, len(s.opinions)):
            if s.opinions[i].overlaps(s.opinions[j]):
                violations.append(f"opinion/opinion overlap: {i} and {j}")
    for i, (aspan, _) in enumerate(s.aspects):
        for j, ospan in enumerate(s.opinions):
            if aspan.overlaps(ospan):
                violations.append(f"aspect/opinion overlap: aspect {i} and opinion {j}")

    for k, (ai, oi) in enumerate(s.pairs):
        if not (0 <= ai < len(s.aspects)) or not (0 <= oi < len(s.opinions)):
            violations.append(f"dangling pair index: pair {k} references ({ai}, {oi})")
    return violations


def _require_valid(s: AnnotatedSentence) -> None:
    violations = validate_sentence(s)
    if violations:
        raise ContractViolation("invalid sentence: " + "; ".join(violations))


def encode_bio(s: AnnotatedSentence) -> LabelSequences:
    """Expand span annotations into the three per-token tag sequences."""
    _require_valid(s)
    n = len(s.tokens)
    aspect = ["O"] * n
    opinion = ["O"] * n
    polarity = ["O"] * n
    for span, pol in s.aspects:
        aspect[span.start] = "B"
        for i in range(span.start + 1, span.end):
            aspect[i] = "I"
        for i in range(span.start, span.end):
            polarity[i] = pol
    for span in s.opinions:
        opinion[span.start] = "B"
        for i in range(span.start + 1, span.end):
            opinion[i] = "I"
    return LabelSequences(tuple(aspect), tuple(opinion), tuple(polarity))


def decode_chunks(
    tags: Iterable[str],
    polarity_tags: Iterable[str] | None = None,
) -> list[tuple[Span, str | None]]:
    """Decode maximal B,I* runs into spans, leniently: an I with no open chunk starts one.

    When `polarity_tags` is given, a chunk's polarity is the majority tag over its
    positions; on a tie, the earliest position whose tag is among the tied majority
    wins. Without polarity_tags the second tuple element is None.
    """
    tags = list(tags)
    pols = list(polarity_tags) if polarity_tags is not None else None
    if pols is not None and len(pols) != len(tags):
        raise ContractViolation(f"length mismatch: {len(tags)} tags vs {len(pols)} polarity tags")

    spans: list[Span] = []
    start = None
    for i, t in enumerate(tags):
        if t == "B":
            if start is not None:
                spans.append(Span(start, i))
            start = i
        elif t == "I":
            if start is None:
                start = i  # orphan I opens a chunk
        else:
            if start is not None:
                spans.append(Span(start, i))
                start = None
    if start is not None:
        spans.append(Span(start, len(tags)))

    out: list[tuple[Span, str | None]] = []
    for span in spans:
        if pols is None:
            out.append((span, None))
            continue
        votes = pols[span.start : span.end]
        counts = Counter(votes)
        top = max(counts.values())
        tied = {t for t, c in counts.items() if c == top}
        chosen = next(v for v in votes if v in tied)
        out.append((span, chosen))
    return out


# --------------------------------------------------------------------------
# JSONL ingestion
# --------------------------------------------------------------------------

_SENTENCE_FIELDS = ("tokens", "aspects", "opinions", "pairs")


def sentence_from_json(obj: dict) -> AnnotatedSentence:
    """Build a sentence from one JSONL record; raises ValidationError naming bad fields."""
    if not isinstance(obj, dict):
        raise ValidationError("record is not a JSON object")
    for f in _SENTENCE_FIELDS:
        if f not in obj:
            raise ValidationError(f"missing field {f!r}")
    tokens = obj["tokens"]
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise ValidationError("field 'tokens' must be a list of strings")

    def _span(d: dict, field: str) -> Span:
        if not isinstance(d, dict) or "start" not in d or "end" not in d:
            raise ValidationError(f"field {field!r}: span needs integer 'start' and 'end'")
        if not isinstance(d["start"], int) or not isinstance(d["end"], int):
            raise ValidationError(f"field {field!r}: span 'start'/'end' must be integers")
        return Span(d["start"], d["end"])

    aspects = []
    for a in obj["aspects"]:
        span = _span(a, "aspects")
        pol = a.get("polarity")
        if pol not in POLARITIES:
            raise ValidationError(f"field 'aspects': polarity {pol!r} not in {POLARITIES}")
        aspects.append((span, pol))
    opinions = [_span(o, "opinions") for o in obj["opinions"]]
    pairs = []
    for p in obj["pairs"]:
        if not (isinstance(p, (list, tuple)) and len(p) == 2 and all(isinstance(x, int) for x in p)):
            raise ValidationError("field 'pairs': each pair must be [aspect_idx, opinion_idx]")
        pairs.append((p[0], p[1]))
    return AnnotatedSentence(tuple(tokens), tuple(aspects), tuple(opinions), tuple(pairs))


def sentence_to_json(s: AnnotatedSentence) -> dict:
    return {
        "tokens": list(s.tokens),
        "aspects": [{"start": sp.start, "end": sp.end, "polarity": pol} for sp, pol in s.aspects],
        "opinions": [{"start": sp.start, "end": sp.end} for sp in s.opinions],
        "pairs": [list(p) for p in s.pairs],
    }


def parse_corpus(raw: bytes | IO[bytes], split: str, name: str = "") -> Corpus:
    """Parse a UTF-8 JSONL stream, one sentence per line; every sentence is validated.

    Blank lines are skipped. Errors carry the 1-based line number.
    """
    if hasattr(raw, "read"):
        raw = raw.read()
    text = raw.decode("utf-8")
    sentences = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"line {lineno}: malformed JSON ({e.msg})") from e
        try:
            s = sentence_from_json(obj)
            violations = validate_sentence(s)
            if violations:
                raise ValidationError("; ".join(violations))
        except ValidationError as e:
            raise ValidationError(f"line {lineno}: {e}") from e
        sentences.append(s)
    return Corpus(tuple(sentences), name=name, split=split)


def dump_corpus(c: Corpus) -> bytes:
    lines = [json.dumps(sentence_to_json(s), ensure_ascii=False) for s in c.sentences]
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")


def load_corpus(path, split: str) -> Corpus:
    with open(path, "rb") as f:
        return parse_corpus(f, split=split, name=str(path))


def save_corpus(c: Corpus, path) -> None:
    with open(path, "wb") as f:
        f.write(dump_corpus(c))


# --------------------------------------------------------------------------
# Synthetic corpus generation
# --------------------------------------------------------------------------

_BASE_ASPECTS = [
    "food", "service", "pizza", "sushi", "staff", "menu", "coffee", "dessert",
    "wine", "decor", "soup", "salad", "burger", "noodles", "bread", "steak",
    "juice", "tea", "ramen", "portions", "seating", "battery", "screen", "keyboard",
]
_ASPECT_MODIFIERS = ["japanese", "house", "local", "daily", "grilled", "seasonal"]
_BASE_POS = ["good", "great", "tasty", "friendly", "fresh", "excellent", "lovely", "crisp"]
_BASE_NEG = ["bad", "awful", "bland", "rude", "stale", "terrible", "soggy", "greasy"]
_BASE_NEU = ["okay", "average", "ordinary", "acceptable", "standard", "plain", "typical", "fine"]

# {a} expands to the aspect word(s), {o} to the opinion word. Two cue
# mechanisms flip the opinion word's lexicon polarity (POS <-> NEG): clause
# cue templates, and a sentence-final hedge that acts on every clause at long
# range. Flips compose: a contrastive sentence carries exactly one cue kind
# (net flip), while non-contrastive sentences may carry both (the two flips
# cancel), so neither cue alone predicts the gold polarity.
_PLAIN_TEMPLATES = [
    ("the", "{a}", "was", "{o}"),
    ("the", "{a}", "is", "{o}"),
    ("our", "{a}", "was", "really", "{o}"),
    ("that", "{a}", "seemed", "{o}"),
]
_CONTRASTIVE_TEMPLATES = [
    ("the", "{a}", "was", "{o}", "for", "such", "a", "place"),
    ("i", "have", "had", "{o}", "{a}", "before"),
    ("the", "{a}", "looked", "{o}", "only", "in", "the", "photos"),
]
_FLIP_SUFFIXES = [
    ("or", "so", "the", "menu", "claimed"),
    ("at", "least", "according", "to", "them"),
]
_CONNECTORS = ["but", "and", "while", ","]
_FLIP = {"POS": "NEG", "NEG": "POS"}


@dataclass(frozen=True, slots=True)
class SynthConfig:
    n_sentences: int = 1000
    max_aspects_per_sentence: int = 3
    contrastive_fraction: float = 0.3
    aspect_lexicon_size: int = 24
    opinion_lexicon_size: int = 18
    seed: int = 0

    def validate(self) -> None:
        if self.n_sentences < 1:
            raise ValidationError("n_sentences must be >= 1")
        if self.max_aspects_per_sentence < 1:
            raise ValidationError("max_aspects_per_sentence must be >= 1")
        if not (0.0 <= self.contrastive_fraction <= 1.0):
            raise ValidationError("contrastive_fraction must be in [0, 1]")
        if self.aspect_lexicon_size < self.max_aspects_per_sentence:
            raise ValidationError("aspect_lexicon_size must cover max_aspects_per_sentence")
        if self.opinion_lexicon_size < 3:
            raise ValidationError("opinion_lexicon_size must be >= 3")


def expected_aspects_per_sentence(cfg: SynthConfig) -> float:
    """Analytic mean of the per-sentence aspect count (uniform on 1..max)."""
    return (1 + cfg.max_aspects_per_sentence) / 2.0


def _extend(base: list[str], size: int) -> list[str]:
    words = list(base)
    i = 0
    while len(words) < size:
        words.append(f"{base[i % len(base)]}{i // len(base) + 2}")
        i += 1
    return words[:size]


def build_lexicons(cfg: SynthConfig) -> tuple[list[str], dict[str, str]]:
    """Aspect word list plus opinion word -> lexicon polarity map."""
    aspects = _extend(_BASE_ASPECTS, cfg.aspect_lexicon_size)
    per = cfg.opinion_lexicon_size
    pools = (_extend(_BASE_POS, per), _extend(_BASE_NEU, per), _extend(_BASE_NEG, per))
    opinion_pol: dict[str, str] = {}
    for i in range(cfg.opinion_lexicon_size):
        pol = POLARITIES[i % 3]
        word = pools[POLARITIES.index(pol)][i // 3]
        opinion_pol[word] = pol
    return aspects, opinion_pol


def _make_clause(
    rng: random.Random,
    aspect_word: str,
    opinion_pool: list[tuple[str, str]],
    mode: str,  # "plain" | "clause_cue" | "suffix_cue" | "double_cue"
) -> tuple[list[str], Span, str, Span]:
    """One clause: tokens, aspect span, gold polarity, opinion span (spans clause-local).

    clause_cue and suffix_cue each flip the lexicon polarity; double_cue
    combines a clause cue with the sentence suffix, so the flips cancel.
    """
    if mode == "plain":
        template = rng.choice(_PLAIN_TEMPLATES)
        word, lex_pol = rng.choice(opinion_pool)
        gold_pol = lex_pol
    else:
        word, lex_pol = rng.choice([wp for wp in opinion_pool if wp[1] in _FLIP])
        if mode == "clause_cue":
            template = rng.choice(_CONTRASTIVE_TEMPLATES)
            gold_pol = _FLIP[lex_pol]
        elif mode == "suffix_cue":
            template = rng.choice(_PLAIN_TEMPLATES)
            gold_pol = _FLIP[lex_pol]
        else:  # double_cue: clause cue + suffix cancel out
            template = rng.choice(_CONTRASTIVE_TEMPLATES)
            gold_pol = lex_pol

    aspect_tokens = [aspect_word]
    if rng.random() < 0.25:
        aspect_tokens = [rng.choice(_ASPECT_MODIFIERS), aspect_word]

    tokens: list[str] = []
    aspect_span = opinion_span = None
    for slot in template:
        if slot == "{a}":
            aspect_span = Span(len(tokens), len(tokens) + len(aspect_tokens))
            tokens.extend(aspect_tokens)
        elif slot == "{o}":
            opinion_span = Span(len(tokens), len(tokens) + 1)
            tokens.append(word)
        else:
            tokens.append(slot)
    assert aspect_span is not None and opinion_span is not None
    return tokens, aspect_span, gold_pol, opinion_span


def generate_synthetic(cfg: SynthConfig) -> Corpus:
    """Deterministic template-based corpus; every aspect is paired with exactly one opinion.

    Contrastive sentences (Bernoulli(contrastive_fraction) per sentence) use cue
    templates in every clause, so their gold polarities differ from the opinion
    words' lexicon polarities.
    """
    cfg.validate()
    rng = random.Random(cfg.seed)
    aspect_words, opinion_pol = build_lexicons(cfg)
    opinion_pool = sorted(opinion_pol.items())

    sentences = []
    for _ in range(cfg.n_sentences):
        k = rng.randint(1, cfg.max_aspects_per_sentence)
        contrastive = rng.random() < cfg.contrastive_fraction
        if contrastive:
            mode = "clause_cue" if rng.random() < 0.5 else "suffix_cue"
        else:
            mode = "plain" if rng.random() < 0.6 else "double_cue"
        chosen_aspects = rng.sample(aspect_words, k)

        tokens: list[str] = []
        aspects: list[tuple[Span, str]] = []
        opinions: list[Span] = []
        pairs: list[tuple[int, int]] = []
        for ci in range(k):
            if ci > 0:
                tokens.append(rng.choice(_CONNECTORS))
            offset = len(tokens)
            ctoks, aspan, pol, ospan = _make_clause(rng, chosen_aspects[ci], opinion_pool, mode)
            tokens.extend(ctoks)
            aspects.append((Span(aspan.start + offset, aspan.end + offset), pol))
            opinions.append(Span(ospan.start + offset, ospan.end + offset))
            pairs.append((ci, ci))
        if mode in ("suffix_cue", "double_cue"):
            tokens.append(",")
            tokens.extend(rng.choice(_FLIP_SUFFIXES))
        tokens.append(".")
        sentences.append(AnnotatedSentence(tuple(tokens), tuple(aspects), tuple(opinions), tuple(pairs)))

    corpus = Corpus(tuple(sentences), name=f"synthetic-{cfg.seed}", split="train")
    for s in corpus.sentences:
        _require_valid(s)
    return corpus
