"""Per-stage nonconformity scores computed from precomputed probability tables.

No model is run here: callers hand in the tagger, linker and typer
probabilities and get back scores in [0, 1] ready for a ScoreMatrix row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

ONTONOTES_TYPES = (
    "PERSON", "NORP", "FAC", "ORG", "GPE", "LOC", "PRODUCT", "EVENT",
    "WORK_OF_ART", "LAW", "LANGUAGE", "DATE", "TIME", "PERCENT", "MONEY",
    "QUANTITY", "ORDINAL", "CARDINAL",
)


def _check_prob(p: float, what: str) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{what} must be a probability in [0, 1], got {p!r}")
    return p


@dataclass(frozen=True)
class TagPosition:
    prob: float
    in_entity_span: bool


@dataclass(frozen=True)
class TokenTagProbs:
    """Probability of the predicted BIO tag at each token position."""

    positions: tuple[TagPosition, ...]

    def __post_init__(self):
        pos = tuple(p if isinstance(p, TagPosition) else TagPosition(*p) for p in self.positions)
        if not pos:
            raise ValueError("TokenTagProbs needs at least one position")
        for t, p in enumerate(pos):
            _check_prob(p.prob, f"tag probability at position {t}")
        object.__setattr__(self, "positions", pos)


@dataclass(frozen=True)
class CandidateEntityScore:
    top_score: float

    def __post_init__(self):
        object.__setattr__(self, "top_score", _check_prob(self.top_score, "top_score"))


@dataclass(frozen=True)
class TypingProbTable:
    """Entailment probabilities, one row per type and one column per span."""

    types: tuple[str, ...]
    spans: tuple[str, ...]
    probs: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        types, spans = tuple(self.types), tuple(self.spans)
        if not types or not spans:
            raise ValueError("typing table needs at least one type and one span")
        if len(self.probs) != len(types):
            raise ValueError(f"{len(self.probs)} probability rows for {len(types)} types")
        probs = []
        for t, row in zip(types, self.probs):
            if len(row) != len(spans):
                raise ValueError(f"type {t!r} has {len(row)} entries for {len(spans)} spans")
            probs.append(tuple(_check_prob(p, f"p({t})") for p in row))
        object.__setattr__(self, "types", types)
        object.__setattr__(self, "spans", spans)
        object.__setattr__(self, "probs", tuple(probs))


def ner_score(probs: TokenTagProbs) -> float:
    """Largest ``1 - p`` over positions inside predicted entity spans; 0 if none."""
    in_span = [1.0 - p.prob for p in probs.positions if p.in_entity_span]
    return max(in_span, default=0.0)


def ned_score(cand: CandidateEntityScore, has_entities: bool) -> float:
    return 1.0 - cand.top_score if has_entities else 0.0


def typing_score(table: TypingProbTable) -> float:
    """``1 - max_type min_span p(type | span)``."""
    return 1.0 - max(min(row) for row in table.probs)


def pipeline_scores(
    tags: TokenTagProbs,
    entity: CandidateEntityScore,
    typing: TypingProbTable | None,
    has_entities: bool | None = None,
) -> tuple[float, float, float]:
    """Three-stage score row (tagging, linking, typing) for one sentence.

    ``has_entities`` defaults to whether any tag position is inside a span.
    A sentence without a typing table scores 0 at the typing stage.
    """
    if has_entities is None:
        has_entities = any(p.in_entity_span for p in tags.positions)
    s_type = typing_score(typing) if typing is not None and has_entities else 0.0
    return ner_score(tags), ned_score(entity, has_entities), s_type


def tag_probs(probs: Sequence[float], in_span: Sequence[bool]) -> TokenTagProbs:
    return TokenTagProbs(tuple(TagPosition(float(p), bool(f)) for p, f in zip(probs, in_span, strict=True)))
