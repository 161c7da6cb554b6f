"""Majority voting over extracted answers and reward assignment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .answers import NONE, ExtractedAnswer, equivalent


@dataclass(frozen=True)
class VoteResult:
    winner: Optional[ExtractedAnswer]
    counts: tuple[tuple[ExtractedAnswer, int], ...]
    tie: bool
    voters: int

    @property
    def winner_count(self) -> int:
        return max((c for _, c in self.counts), default=0)


def majority_vote(answers: Sequence[ExtractedAnswer]) -> VoteResult:
    """Most frequent extractable answer.

    Ties in multiplicity go to the class whose first member appears earliest,
    and are flagged with ``tie=True``.
    """
    if len(answers) < 1:
        raise ValueError("majority_vote needs at least one answer")
    classes: dict[tuple[str, str], list] = {}
    for a in answers:
        if a.kind == NONE:
            continue
        entry = classes.setdefault(a.key, [a, 0])
        entry[1] += 1
    counts = tuple((rep, n) for rep, n in classes.values())
    voters = sum(n for _, n in counts)
    if not counts:
        return VoteResult(None, (), False, 0)
    best = max(n for _, n in counts)
    leaders = [rep for rep, n in counts if n == best]
    # dict preserves insertion order, so leaders[0] is the earliest first occurrence
    return VoteResult(leaders[0], counts, len(leaders) > 1, voters)


def pseudo_rewards(answers: Sequence[ExtractedAnswer], vote: VoteResult) -> list[float]:
    if vote.winner is None:
        return [0.0] * len(answers)
    return [1.0 if equivalent(a, vote.winner) else 0.0 for a in answers]


def supervised_rewards(answers: Sequence[ExtractedAnswer], truth: ExtractedAnswer) -> list[float]:
    if truth.kind == NONE:
        raise ValueError("ground-truth answer must be extractable")
    return [1.0 if equivalent(a, truth) else 0.0 for a in answers]
