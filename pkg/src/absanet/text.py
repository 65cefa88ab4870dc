"""Vocabulary, id-encoding of input sequences, and padded batch assembly."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import AnnotatedSentence, Corpus, LabelSequences, encode_bio
from .errors import ContractViolation, ValidationError

RESERVED = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[REL]")
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID, REL_ID = range(len(RESERVED))

INSTANCE_KINDS = ("absa", "tsmtd", "prd")

# Auxiliary-task class orders. tsmtd: what kind of span was masked;
# prd: does the replaced (aspect, opinion) have an annotated pairwise relation.
TSMTD_CLASSES = ("Aspect", "Opinion", "O")
PRD_CLASSES = ("False", "True")


@dataclass(frozen=True, slots=True)
class AuxTarget:
    kind: str  # "tsmtd" | "prd"
    label: int

    def __post_init__(self) -> None:
        classes = {"tsmtd": TSMTD_CLASSES, "prd": PRD_CLASSES}.get(self.kind)
        if classes is None:
            raise ValidationError(f"unknown aux kind {self.kind!r}")
        if not (0 <= self.label < len(classes)):
            raise ValidationError(f"{self.kind} label {self.label} out of range")

    @property
    def name(self) -> str:
        classes = TSMTD_CLASSES if self.kind == "tsmtd" else PRD_CLASSES
        return classes[self.label]


@dataclass(frozen=True)
class Vocabulary:
    id_to_token: tuple[str, ...]
    token_to_id: dict[str, int] = field(compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode_token(self, token: str) -> int:
        if token in RESERVED:
            return UNK_ID  # corpus text never maps onto reserved ids
        return self.token_to_id.get(token, UNK_ID)

    def decode_id(self, i: int) -> str:
        return self.id_to_token[i]

    @classmethod
    def from_tokens(cls, id_to_token: Sequence[str]) -> "Vocabulary":
        id_to_token = tuple(id_to_token)
        if id_to_token[: len(RESERVED)] != RESERVED:
            raise ValidationError(f"vocabulary must start with reserved tokens {RESERVED}")
        return cls(id_to_token, {t: i for i, t in enumerate(id_to_token)})

    def save(self, path) -> None:
        for t in self.id_to_token:
            if "\n" in t or "\r" in t:
                raise ValidationError(f"token {t!r} cannot be serialized to the line format")
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(self.id_to_token) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as f:
            tokens = f.read().split("\n")
        if tokens and tokens[-1] == "":
            tokens.pop()
        return cls.from_tokens(tokens)


def build_vocab(c: Corpus, min_freq: int = 1) -> Vocabulary:
    """Vocabulary over corpus tokens with frequency >= min_freq.

    Ordering is deterministic: frequency descending, then lexicographic.
    """
    if len(c) == 0:
        raise ContractViolation("cannot build a vocabulary from an empty corpus")
    counts = Counter()
    for s in c.sentences:
        counts.update(s.tokens)
    kept = sorted(
        (t for t, n in counts.items() if n >= min_freq and t not in RESERVED),
        key=lambda t: (-counts[t], t),
    )
    return Vocabulary.from_tokens(RESERVED + tuple(kept))


@dataclass(frozen=True, slots=True)
class EncodedInstance:
    """One id sequence ready for the encoder: [CLS] interior [SEP].

    token_count is the number of interior positions of *this* sequence (for
    plain instances that equals the sentence token count; span replacement in
    auxiliary instances shortens it).
    """

    ids: tuple[int, ...]
    kind: str
    token_count: int
    targets: LabelSequences | AuxTarget | None

    def __post_init__(self) -> None:
        if self.kind not in INSTANCE_KINDS:
            raise ValidationError(f"kind must be one of {INSTANCE_KINDS}, got {self.kind!r}")
        if len(self.ids) < 2 or self.ids[0] != CLS_ID or self.ids[-1] != SEP_ID:
            raise ValidationError("ids must start with [CLS] and end with [SEP]")
        interior = self.ids[1:-1]
        if CLS_ID in interior or SEP_ID in interior:
            raise ValidationError("interior [CLS]/[SEP] not allowed")
        if self.token_count != len(self.ids) - 2:
            raise ValidationError("token_count must equal len(ids) - 2")

    def __len__(self) -> int:
        return len(self.ids)


def encode_absa(s: AnnotatedSentence, v: Vocabulary) -> EncodedInstance:
    """[CLS] + token ids + [SEP]; out-of-vocabulary tokens become [UNK]."""
    ids = (CLS_ID,) + tuple(v.encode_token(t) for t in s.tokens) + (SEP_ID,)
    return EncodedInstance(ids=ids, kind="absa", token_count=len(s.tokens), targets=encode_bio(s))


@dataclass(frozen=True)
class Batch:
    """Right-padded id matrix with attention mask (True on real positions)."""

    instances: tuple[EncodedInstance, ...]
    ids: np.ndarray  # (B, S) int64
    mask: np.ndarray  # (B, S) bool
    lengths: np.ndarray  # (B,) int64, true instance lengths incl [CLS]/[SEP]
    kind: str

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    @property
    def token_counts(self) -> np.ndarray:
        return self.lengths - 2


def pad_batch(instances: Sequence[EncodedInstance], v: Vocabulary) -> Batch:
    if not instances:
        raise ContractViolation("pad_batch requires a non-empty instance list")
    kinds = {inst.kind for inst in instances}
    if len(kinds) != 1:
        raise ContractViolation(f"mixed instance kinds in one batch: {sorted(kinds)}")
    lengths = np.array([len(inst) for inst in instances], dtype=np.int64)
    width = int(lengths.max())
    ids = np.full((len(instances), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(instances), width), dtype=bool)
    for i, inst in enumerate(instances):
        ids[i, : len(inst)] = inst.ids
        mask[i, : len(inst)] = True
    return Batch(tuple(instances), ids, mask, lengths, kinds.pop())
