"""Group-normalized advantages, the clipped surrogate with KL penalty, and AdamW."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .policy import Policy, PolicyParams, Response, as_params
from .tasks import Task

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class GroupStats:
    rewards: np.ndarray
    mean: float
    std: float
    advantages: np.ndarray

    @property
    def zero_variance(self) -> bool:
        return not np.any(self.advantages)


def normalize_advantages(rewards: Sequence[float], std_mode: str = "population") -> GroupStats:
    """``(r - mean) / std`` over the group; all zeros when the group is unanimous."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.shape[0] < 2:
        raise ValueError("need a group of at least 2 rewards")
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    if std_mode == "population":
        ddof = 0
    elif std_mode == "sample":
        ddof = 1
    else:
        raise ValueError(f"unknown std_mode {std_mode!r}")
    # exact check first: np.std of identical values can come out as ~1e-17
    if np.all(r == r[0]):
        return GroupStats(r, float(r[0]), 0.0, np.zeros_like(r))
    # work in units of max|r| so tiny or huge rewards neither underflow nor overflow
    scale = float(np.max(np.abs(r)))
    z = r / scale
    d = z - z.mean()
    sd = float(d.std(ddof=ddof))
    return GroupStats(r, float(z.mean()) * scale, sd * scale, d / sd)


def kl_token(new_logprob, ref_logprob):
    """Nonnegative per-token estimate of KL(pi_theta || pi_ref): e^d - d - 1, d = ref - new."""
    new = np.asarray(new_logprob, dtype=np.float64)
    ref = np.asarray(ref_logprob, dtype=np.float64)
    if not (np.all(np.isfinite(new)) and np.all(np.isfinite(ref))):
        raise ValueError("log-probabilities must be finite")
    d = ref - new
    out = np.expm1(d) - d
    return float(out) if out.ndim == 0 else out


@dataclass
class SurrogateResult:
    objective: float
    grad: np.ndarray
    clip_fraction: float
    mean_kl: float
    n_tokens: int
    ratios: list = field(default_factory=list, repr=False)
    clipped: list = field(default_factory=list, repr=False)


def surrogate(group: Sequence[Response], stats: GroupStats, policy: Policy, task: Task,
              params, ref_params, clip_eps: float = 0.2, beta: float = 0.01) -> SurrogateResult:
    """Clipped GRPO objective for one group and its exact gradient.

    Per token: ``min(g A, clip(g, 1-eps, 1+eps) A) - beta * kl`` with
    ``g = exp(logpi - old_logprob)``, averaged over each response's tokens and
    then over the group. Advantages are constants.
    """
    G = len(group)
    adv = stats.advantages
    if len(adv) != G:
        raise ValueError(f"{G} responses but {len(adv)} advantages")
    if not clip_eps > 0 or beta < 0:
        raise ValueError("need clip_eps > 0 and beta >= 0")
    params = as_params(params)
    ref_params = as_params(ref_params)
    lo, hi = 1.0 - clip_eps, 1.0 + clip_eps

    objective = 0.0
    grad = np.zeros(params.dim)
    n_tokens = n_clipped = 0
    kl_sum = 0.0
    ratios, clipped_flags = [], []
    for o, A in zip(group, adv):
        lp, dlp = policy.logprob_and_grad(params, task, o.tokens)
        ref_lp = policy.logprobs(ref_params, task, o.tokens)
        ratio = np.exp(lp - o.old_logprobs)
        unclipped = ratio * A
        clipped_val = np.clip(ratio, lo, hi) * A
        is_clipped = clipped_val < unclipped
        kl = kl_token(lp, ref_lp)
        T = len(o)
        objective += float(np.sum(np.minimum(unclipped, clipped_val) - beta * kl)) / T
        # d/dlogpi of the surrogate: ratio*A on the unclipped branch, 0 when clipped;
        # d kl / d logpi = 1 - exp(ref - new)
        coef = np.where(is_clipped, 0.0, ratio * A) - beta * (1.0 - np.exp(ref_lp - lp))
        grad += coef @ dlp / T
        n_tokens += T
        n_clipped += int(is_clipped.sum())
        kl_sum += float(np.sum(kl))
        ratios.append(ratio)
        clipped_flags.append(is_clipped)
    return SurrogateResult(objective / G, grad / G, n_clipped / n_tokens, kl_sum / n_tokens,
                           n_tokens, ratios, clipped_flags)


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, dim: int) -> "AdamState":
        return cls(np.zeros(dim), np.zeros(dim), 0)


@dataclass(frozen=True)
class StepResult:
    params: PolicyParams
    state: AdamState
    grad_norm: float
    applied_grad: np.ndarray


def optimizer_step(params, gradient, state: AdamState, lr: float, weight_decay: float = 0.0,
                   grad_clip_norm: float = 1.0) -> StepResult:
    """One AdamW ascent step on the objective whose gradient is ``gradient``.

    The gradient is rescaled to ``grad_clip_norm`` if its L2 norm exceeds it;
    weight decay is decoupled (``theta -= lr * wd * theta``).
    """
    params = as_params(params)
    g = np.asarray(gradient, dtype=np.float64)
    if g.shape != params.values.shape or state.m.shape != g.shape:
        raise ValueError("parameter, gradient and optimizer state shapes differ")
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("non-finite gradient entries; step aborted")
    norm = float(np.linalg.norm(g))
    if grad_clip_norm is not None and grad_clip_norm > 0 and norm > grad_clip_norm:
        g = g * (grad_clip_norm / norm)
    t = state.step + 1
    m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * g
    v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * g * g
    m_hat = m / (1.0 - ADAM_BETA1 ** t)
    v_hat = v / (1.0 - ADAM_BETA2 ** t)
    theta = params.values * (1.0 - lr * weight_decay)
    theta = theta + lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    if not np.all(np.isfinite(theta)):
        raise NonFiniteError("update produced non-finite parameters")
    return StepResult(PolicyParams(theta), AdamState(m, v, t), norm, g)
