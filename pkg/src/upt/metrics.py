"""Label-free diagnostics, evaluation accuracy and the binomial vote model."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence, Union

import numpy as np

from .answers import NONE, ExtractedAnswer, equivalent, extract
from .policy import Policy, stream, task_key
from .tasks import TaskSet

EXACT_MAX_N = 64


@dataclass(frozen=True)
class EntropyReport:
    cluster_sizes: tuple[int, ...]
    probabilities: tuple[float, ...]
    entropy: float
    voters: int
    group_size: int

    @property
    def degenerate(self) -> bool:
        return self.voters == 0


def semantic_entropy(answers: Sequence[ExtractedAnswer]) -> EntropyReport:
    """Entropy (nats) of the empirical distribution over answer clusters.

    Clusters are equivalence classes of extracted answers; unextractable
    responses are left out, so probabilities are over ``voters``.
    """
    if len(answers) < 1:
        raise ValueError("need at least one answer")
    sizes: dict[tuple[str, str], int] = {}
    for a in answers:
        if a.kind != NONE:
            sizes[a.key] = sizes.get(a.key, 0) + 1
    voters = sum(sizes.values())
    if voters == 0:
        return EntropyReport((), (), 0.0, 0, len(answers))
    cs = tuple(sizes.values())
    probs = tuple(c / voters for c in cs)
    h = -sum(p * math.log(p) for p in probs)
    return EntropyReport(cs, probs, max(h, 0.0), voters, len(answers))


@dataclass(frozen=True)
class BinomialVoteModel:
    n: int
    p: Union[float, Fraction]

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if not 0 < self.p < 1:
            raise ValueError(f"p must lie in (0, 1), got {self.p}")


def _exact_p(p) -> Fraction:
    # str() keeps 0.7 as 7/10 rather than its binary expansion
    return Fraction(str(p)) if isinstance(p, float) else Fraction(p)


def _lower_index(n: int, inclusive: bool) -> int:
    return math.ceil(n / 2) if inclusive else n // 2 + 1


def binomial_terms(model: BinomialVoteModel) -> list[tuple[int, float]]:
    """``(i, C(n,i) p^i (1-p)^(n-i))`` for i = 0..n."""
    n = model.n
    if n <= EXACT_MAX_N:
        p = _exact_p(model.p)
        return [(i, float(math.comb(n, i) * p**i * (1 - p) ** (n - i))) for i in range(n + 1)]
    return [(i, math.exp(_log_term(n, i, float(model.p)))) for i in range(n + 1)]


def _log_term(n: int, i: int, p: float) -> float:
    return (math.lgamma(n + 1) - math.lgamma(i + 1) - math.lgamma(n - i + 1)
            + i * math.log(p) + (n - i) * math.log1p(-p))


def majority_success_prob(model: BinomialVoteModel, inclusive: bool = False) -> float:
    """Probability that a vote over ``n`` samples is correct.

    Strict (default): ``P(X > n/2)``. ``inclusive=True`` sums from
    ``ceil(n/2)``, which for even ``n`` also counts exact ties as correct.
    """
    n = model.n
    lo = _lower_index(n, inclusive)
    if n <= EXACT_MAX_N:
        p = _exact_p(model.p)
        return float(sum(math.comb(n, i) * p**i * (1 - p) ** (n - i) for i in range(lo, n + 1)))
    logs = np.array([_log_term(n, i, float(model.p)) for i in range(lo, n + 1)])
    if logs.size == 0:
        return 0.0
    m = logs.max()
    return float(min(1.0, math.exp(m) * np.sum(np.exp(logs - m))))


def mean_majority_reward(groups: Iterable) -> float:
    """Mean pseudo-reward over every response of every group."""
    total = count = 0.0
    for g in groups:
        r = np.asarray(g.rewards if hasattr(g, "rewards") else g, dtype=float)
        total += float(r.sum())
        count += r.size
    if count == 0:
        raise ValueError("no responses")
    return total / count


def parse_mode(mode) -> tuple[str, int]:
    """``"greedy"``, ``"expected"``, ``("sampled", k)`` or ``"sampled:k"``."""
    if isinstance(mode, tuple):
        name, k = mode
    elif isinstance(mode, str) and mode.startswith("sampled"):
        name, _, k = mode.partition(":")
        k = int(k or 1)
    else:
        name, k = mode, 0
    if name not in ("greedy", "expected", "sampled"):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    if name == "sampled" and int(k) < 1:
        raise ValueError("sampled mode needs k >= 1")
    return name, int(k)


def task_scores(policy: Policy, params, tasks: TaskSet, mode="greedy", seed: int = 0) -> list[float]:
    """Per-task score in [0, 1]: greedy correctness, mean sampled correctness,
    or the exact probability of answering correctly."""
    name, k = parse_mode(mode)
    out = []
    for t in tasks:
        truth = t.truth
        if name == "greedy":
            out.append(float(equivalent(extract(policy.greedy(params, t).text), truth)))
        elif name == "expected":
            out.append(sum(pr for a, pr in policy.answer_distribution(params, t) if equivalent(a, truth)))
        else:
            # one reserved stream id keeps evaluation draws apart from training rollouts
            hits = 0
            for j in range(k):
                o = policy.sample(params, t, 1.0, stream(seed, 2**31 - 1, task_key(t), j))
                hits += equivalent(extract(o.text), truth)
            out.append(hits / k)
    return out


def accuracy(policy: Policy, params, tasks: TaskSet, mode="greedy", seed: int = 0) -> float:
    if len(tasks) == 0:
        raise ValueError("no tasks to evaluate")
    return float(np.mean(task_scores(policy, params, tasks, mode, seed)))
