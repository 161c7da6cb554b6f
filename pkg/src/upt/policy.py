"""Toy policies with exact log-probability gradients.

Both policies are log-linear: the logit of token ``y`` in context ``c`` is a
sum of parameter entries selected by ``(c, y)``, so

    grad log pi(y | c) = phi(c, y) - E_{y' ~ pi}[phi(c, y')]

with ``phi`` the 0/1 indicator of the selected entries.

Parameter vectors are immutable :class:`PolicyParams` snapshots. Log-probs
recorded at sampling time (``Response.old_logprobs``) are always at
temperature 1, whatever temperature was used to draw the tokens.
"""

from __future__ import annotations

import struct
import zlib
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import ClassVar, Optional, Sequence, Union

import numpy as np

from .answers import ExtractedAnswer, equivalent
from .tasks import Task, TaskSet

CKPT_MAGIC = b"UPTCKPT1"
CKPT_VERSION = 1
ZERO_PROB_FLOOR = 1e-14


@dataclass(frozen=True, eq=False)
class PolicyParams:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.ndim != 1:
            raise ValueError("policy parameters must be a flat vector")
        if not np.all(np.isfinite(v)):
            raise FloatingPointError("policy parameters contain non-finite entries")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return self.values.shape == other.values.shape and self.values.tobytes() == other.values.tobytes()

    __hash__ = None


def as_params(p: Union[PolicyParams, np.ndarray, Sequence[float]]) -> PolicyParams:
    return p if isinstance(p, PolicyParams) else PolicyParams(np.asarray(p))


@dataclass(frozen=True, eq=False)
class Response:
    tokens: tuple[int, ...]
    old_logprobs: np.ndarray
    text: str

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("empty response")
        if len(self.old_logprobs) != len(self.tokens):
            raise ValueError("old_logprobs length must match tokens")

    def __len__(self):
        return len(self.tokens)


def task_key(task: Task) -> int:
    return zlib.crc32(task.id.encode())


def stream(*key: int) -> np.random.Generator:
    """Counter-based generator for one fixed key (e.g. seed, step, task, index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


@dataclass(frozen=True)
class WrongMass:
    """How the 1 - p probability not on the correct answer is spread.

    ``designated_mass == 0`` spreads it uniformly over the wrong answers;
    otherwise the ``designated``-th wrong answer (answer-space order, truth
    skipped) gets ``designated_mass`` and the rest share what is left.
    """

    designated_mass: float = 0.0
    designated: int = 0


UNIFORM = WrongMass()


def target_distribution(task: Task, p: float, wrong: WrongMass = UNIFORM) -> np.ndarray:
    """Probabilities over ``task.answer_space`` with mass ``p`` on the truth."""
    n = len(task.answer_space)
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if n < 2:
        raise ValueError("answer space needs >= 2 answers")
    k = task.truth_index()
    wrong_idx = [i for i in range(n) if i != k]
    q = np.zeros(n)
    q[k] = p
    if wrong.designated_mass <= 0.0:
        q[wrong_idx] = (1.0 - p) / len(wrong_idx)
        return q
    if not 0 <= wrong.designated < len(wrong_idx):
        raise ValueError("designated wrong answer out of range")
    rest = 1.0 - p - wrong.designated_mass
    others = [i for j, i in enumerate(wrong_idx) if j != wrong.designated]
    if rest < -1e-12:
        raise ValueError(f"p={p} plus designated mass {wrong.designated_mass} exceeds 1")
    if not others and rest > 1e-12:
        raise ValueError("no other wrong answers to hold the remaining mass")
    q[wrong_idx[wrong.designated]] = wrong.designated_mass
    if others:
        q[others] = max(rest, 0.0) / len(others)
    return q


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = np.max(z, axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.sum(np.exp(s), axis=-1, keepdims=True))


class Policy(ABC):
    kind: ClassVar[str]
    tag: ClassVar[int]

    @property
    @abstractmethod
    def dim(self) -> int: ...

    def zeros(self) -> PolicyParams:
        return PolicyParams(np.zeros(self.dim))

    def _check(self, params) -> np.ndarray:
        params = as_params(params)
        if params.dim != self.dim:
            raise ValueError(f"expected {self.dim} parameters, got {params.dim}")
        return params.values

    @abstractmethod
    def next_token_logprobs(self, params, task: Task, prefix: Sequence[int],
                            temperature: float = 1.0) -> np.ndarray:
        """Log-probabilities over the full vocabulary (``-inf`` where disallowed)."""

    @abstractmethod
    def logprobs(self, params, task: Task, tokens: Sequence[int]) -> np.ndarray: ...

    @abstractmethod
    def logprob_and_grad(self, params, task: Task, tokens: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """Per-token log-probs ``(T,)`` and their gradients ``(T, dim)``."""

    @abstractmethod
    def render(self, task: Task, tokens: Sequence[int]) -> str: ...

    @abstractmethod
    def is_terminal(self, task: Task, tokens: Sequence[int]) -> bool: ...

    @abstractmethod
    def answer_distribution(self, params, task: Task) -> list[tuple[ExtractedAnswer, float]]:
        """Exact marginal distribution of the final answer at temperature 1."""

    @abstractmethod
    def init_with_accuracy(self, tasks: TaskSet, p: float, wrong: WrongMass = UNIFORM) -> PolicyParams: ...

    def sample(self, params, task: Task, temperature: float, rng: np.random.Generator) -> Response:
        if not temperature > 0:
            raise ValueError("temperature must be positive")
        self._check(params)
        tokens: list[int] = []
        lps: list[float] = []
        while not self.is_terminal(task, tokens):
            lp1 = self.next_token_logprobs(params, task, tokens)
            lpT = lp1 if temperature == 1.0 else self.next_token_logprobs(params, task, tokens, temperature)
            probs = np.exp(lpT)
            y = int(rng.choice(len(probs), p=probs / probs.sum()))
            tokens.append(y)
            lps.append(float(lp1[y]))
        return Response(tuple(tokens), np.array(lps), self.render(task, tokens))

    def sample_group(self, params, task: Task, G: int, temperature: float = 1.0,
                     key: Sequence[int] = (0,), pool=None) -> list[Response]:
        """G independent responses; response i uses stream ``(*key, task, i)``."""
        if G < 1:
            raise ValueError("group size must be >= 1")
        params = as_params(params)
        tk = task_key(task)

        def one(i):
            return self.sample(params, task, temperature, stream(*key, tk, i))

        if pool is None:
            return [one(i) for i in range(G)]
        return list(pool.map(one, range(G)))

    def greedy(self, params, task: Task) -> Response:
        tokens: list[int] = []
        lps: list[float] = []
        while not self.is_terminal(task, tokens):
            lp = self.next_token_logprobs(params, task, tokens)
            y = int(np.argmax(lp))
            tokens.append(y)
            lps.append(float(lp[y]))
        return Response(tuple(tokens), np.array(lps), self.render(task, tokens))


class BanditPolicy(Policy):
    """One logit per (task, answer); a response is a single answer token."""

    kind = "bandit"
    tag = 1

    def __init__(self, tasks: TaskSet):
        self._offsets: dict[str, tuple[int, int]] = {}
        off = 0
        for t in tasks:
            n = len(t.answer_space)
            self._offsets[t.id] = (off, n)
            off += n
        self._dim = off

    @property
    def dim(self) -> int:
        return self._dim

    def _slot(self, task: Task) -> tuple[int, int]:
        try:
            return self._offsets[task.id]
        except KeyError:
            raise ValueError(f"task {task.id!r} unknown to this policy") from None

    def logits(self, params, task: Task) -> np.ndarray:
        v = self._check(params)
        off, n = self._slot(task)
        return v[off:off + n]

    def next_token_logprobs(self, params, task, prefix, temperature=1.0):
        if prefix:
            raise ValueError("bandit responses are a single token")
        return _log_softmax(self.logits(params, task) / temperature)

    def is_terminal(self, task, tokens):
        return len(tokens) == 1

    def _validate(self, task, tokens):
        _, n = self._slot(task)
        if len(tokens) != 1 or not 0 <= tokens[0] < n:
            raise ValueError(f"invalid bandit response {tuple(tokens)!r}")

    def logprobs(self, params, task, tokens):
        self._validate(task, tokens)
        return self.next_token_logprobs(params, task, ())[list(tokens)]

    def logprob_and_grad(self, params, task, tokens):
        self._validate(task, tokens)
        lp = self.next_token_logprobs(params, task, ())
        off, n = self._slot(task)
        g = np.zeros((1, self.dim))
        g[0, off:off + n] = -np.exp(lp)
        g[0, off + tokens[0]] += 1.0
        return lp[[tokens[0]]], g

    def render(self, task, tokens):
        return f"\\boxed{{{task.answer_space[tokens[0]].canonical}}}"

    def answer_distribution(self, params, task):
        probs = np.exp(self.next_token_logprobs(params, task, ()))
        return list(zip(task.answer_space, probs.tolist()))

    def init_with_accuracy(self, tasks, p, wrong=UNIFORM):
        v = np.zeros(self.dim)
        for t in tasks:
            off, n = self._slot(t)
            q = target_distribution(t, p, wrong)
            v[off:off + n] = np.log(np.maximum(q, ZERO_PROB_FLOOR))
        return PolicyParams(v)


FILLER_WORDS = ("let", "us", "think", "so", "then", "thus", "hence", "now",
                "next", "check", "recall", "note", "see", "consider", "we", "get")


class SeqPolicy(Policy):
    """Autoregressive log-linear policy over a small vocabulary.

    Token 0 is the terminal token, tokens ``1..n_fillers`` are filler words,
    the rest are answer tokens. A response is up to ``max_filler`` fillers,
    one answer token, then the terminal token. The logit of token ``y`` is

        W_task[bucket(task), y] + W_prev[prev, y] + W_pos[pos_bucket(t), y]

    with ``prev`` the previous token (or a begin-of-sequence id at t = 0).
    """

    kind = "seq"
    tag = 2
    N_POS = 5

    def __init__(self, tasks: Optional[TaskSet] = None, answers: Optional[Sequence[ExtractedAnswer]] = None,
                 n_fillers: int = 4, n_buckets: int = 16, max_filler: int = 16):
        if answers is None:
            if tasks is None:
                raise ValueError("need tasks or an explicit answer vocabulary")
            seen: dict = {}
            for t in tasks:
                for a in t.answer_space:
                    seen.setdefault(a.key, a)
            answers = list(seen.values())
        if not 1 <= n_fillers <= len(FILLER_WORDS):
            raise ValueError(f"n_fillers must be in [1, {len(FILLER_WORDS)}]")
        self.answers = tuple(answers)
        # feature vectors seen at construction get buckets in order of first appearance
        self._buckets: dict[tuple, int] = {}
        for t in tasks or ():
            key = tuple(t.features)
            if key not in self._buckets:
                self._buckets[key] = len(self._buckets) % n_buckets
        self.n_fillers = n_fillers
        self.n_buckets = n_buckets
        self.max_filler = max_filler
        self.first_answer = 1 + n_fillers
        self.V = self.first_answer + len(self.answers)
        if self.V > 64:
            raise ValueError(f"vocabulary of {self.V} tokens exceeds 64")
        if not self.answers:
            raise ValueError("empty answer vocabulary")
        self.bos = self.V
        V = self.V
        self._off_task = 0
        self._off_prev = n_buckets * V
        self._off_pos = self._off_prev + (V + 1) * V
        self._dim = self._off_pos + self.N_POS * V
        self._phase_mask = np.ones(V, dtype=bool)
        self._phase_mask[0] = False
        self._answer_mask = np.zeros(V, dtype=bool)
        self._answer_mask[self.first_answer:] = True
        self._term_mask = np.zeros(V, dtype=bool)
        self._term_mask[0] = True

    @property
    def dim(self) -> int:
        return self._dim

    def bucket(self, task: Task) -> int:
        b = self._buckets.get(tuple(task.features))
        if b is not None:
            return b
        return zlib.crc32(np.asarray(task.features, dtype=np.float64).tobytes()) % self.n_buckets

    def pos_bucket(self, t) -> np.ndarray:
        return np.minimum(np.asarray(t) // 4, self.N_POS - 1)

    def _mask_at(self, prefix: Sequence[int]) -> np.ndarray:
        if prefix and prefix[-1] >= self.first_answer:
            return self._term_mask
        if len(prefix) >= self.max_filler:
            return self._answer_mask
        return self._phase_mask

    def is_terminal(self, task, tokens):
        return bool(tokens) and tokens[-1] == 0

    def _validate(self, tokens: Sequence[int]) -> None:
        toks = list(tokens)
        ok = bool(toks) and toks[-1] == 0
        if ok:
            for t, y in enumerate(toks):
                if not 0 <= y < self.V or not self._mask_at(toks[:t])[y]:
                    ok = False
                    break
        if not ok:
            raise ValueError(f"invalid token sequence {tuple(tokens)!r}")

    def _step_logits(self, v: np.ndarray, task: Task, tokens: Sequence[int]):
        """Masked logits for every step of ``tokens`` plus the context indices."""
        T = len(tokens)
        V = self.V
        b = self.bucket(task)
        prev = np.array([self.bos] + list(tokens[:-1]), dtype=np.int64)
        pos = self.pos_bucket(np.arange(T))
        W_task = v[self._off_task:self._off_prev].reshape(self.n_buckets, V)
        W_prev = v[self._off_prev:self._off_pos].reshape(V + 1, V)
        W_pos = v[self._off_pos:].reshape(self.N_POS, V)
        z = W_task[b][None, :] + W_prev[prev] + W_pos[pos]
        mask = np.stack([self._mask_at(tokens[:t]) for t in range(T)])
        return np.where(mask, z, -np.inf), b, prev, pos

    def next_token_logprobs(self, params, task, prefix, temperature=1.0):
        v = self._check(params)
        prefix = list(prefix)
        V = self.V
        t = len(prefix)
        prev = prefix[-1] if prefix else self.bos
        z = (v[self._off_task + self.bucket(task) * V:][:V]
             + v[self._off_prev + prev * V:][:V]
             + v[self._off_pos + int(self.pos_bucket(t)) * V:][:V])
        z = np.where(self._mask_at(prefix), z / temperature, -np.inf)
        return _log_softmax(z)

    def logprobs(self, params, task, tokens):
        v = self._check(params)
        self._validate(tokens)
        z, *_ = self._step_logits(v, task, tokens)
        lp = _log_softmax(z)
        return lp[np.arange(len(tokens)), list(tokens)]

    def logprob_and_grad(self, params, task, tokens):
        v = self._check(params)
        self._validate(tokens)
        T, V = len(tokens), self.V
        z, b, prev, pos = self._step_logits(v, task, tokens)
        lp = _log_softmax(z)
        rows = np.arange(T)
        d = -np.exp(lp)
        d[rows, list(tokens)] += 1.0
        g = np.zeros((T, self.dim))
        cols = np.arange(V)[None, :]
        r = rows[:, None]
        g[r, self._off_task + b * V + cols] += d
        g[r, self._off_prev + prev[:, None] * V + cols] += d
        g[r, self._off_pos + pos[:, None] * V + cols] += d
        return lp[rows, list(tokens)], g

    def token_text(self, y: int) -> str:
        if y == 0:
            return ""
        if y < self.first_answer:
            return FILLER_WORDS[y - 1]
        return f"\\boxed{{{self.answers[y - self.first_answer].canonical}}}"

    def render(self, task, tokens):
        return " ".join(s for s in (self.token_text(y) for y in tokens) if s)

    def answer_token(self, answer: ExtractedAnswer) -> Optional[int]:
        for j, a in enumerate(self.answers):
            if equivalent(a, answer):
                return self.first_answer + j
        return None

    def answer_distribution(self, params, task):
        v = self._check(params)
        V, F = self.V, self.first_answer
        # mass over the previous token while still in the filler phase
        state = np.zeros(V + 1)
        state[self.bos] = 1.0
        out = np.zeros(V)
        W_task = v[:self._off_prev].reshape(self.n_buckets, V)[self.bucket(task)]
        W_prev = v[self._off_prev:self._off_pos].reshape(V + 1, V)
        W_pos = v[self._off_pos:].reshape(self.N_POS, V)
        for t in range(self.max_filler + 1):
            mask = self._answer_mask if t >= self.max_filler else self._phase_mask
            live = np.nonzero(state)[0]
            z = W_task[None, :] + W_prev[live] + W_pos[int(self.pos_bucket(t))][None, :]
            probs = np.exp(_log_softmax(np.where(mask[None, :], z, -np.inf)))
            flow = state[live][:, None] * probs
            out += flow.sum(axis=0)
            state = np.zeros(V + 1)
            state[1:F] = out[1:F]
            out[1:F] = 0.0
        return list(zip(self.answers, out[F:].tolist()))

    def init_with_accuracy(self, tasks, p, wrong=UNIFORM):
        v = np.zeros(self.dim)
        V, F = self.V, self.first_answer
        assigned: dict[int, np.ndarray] = {}
        for t in tasks:
            q = target_distribution(t, p, wrong)
            row = np.full(V - F, ZERO_PROB_FLOOR)
            for a, qa in zip(t.answer_space, q):
                y = self.answer_token(a)
                if y is None:
                    raise ValueError(f"answer {a} of task {t.id} is outside the policy vocabulary")
                row[y - F] = max(qa, ZERO_PROB_FLOOR)
            b = self.bucket(t)
            if b in assigned and not np.allclose(assigned[b], row, rtol=0, atol=1e-15):
                raise ValueError(f"tasks sharing feature bucket {b} need different answer distributions")
            assigned[b] = row
            v[self._off_task + b * V + F:self._off_task + (b + 1) * V] = np.log(row)
        return PolicyParams(v)


POLICY_KINDS = {"bandit": BanditPolicy, "seq": SeqPolicy}
KIND_TAGS = {cls.tag: name for name, cls in POLICY_KINDS.items()}


def make_policy(kind: str, tasks: TaskSet, **options) -> Policy:
    try:
        cls = POLICY_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown policy kind {kind!r}") from None
    return cls(tasks, **options)


def save_checkpoint(path, params: PolicyParams, kind: str) -> None:
    params = as_params(params)
    tag = POLICY_KINDS[kind].tag
    blob = (CKPT_MAGIC + struct.pack("<IBQ", CKPT_VERSION, tag, params.dim)
            + params.values.astype("<f8").tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[str, PolicyParams]:
    blob = Path(path).read_bytes()
    head = len(CKPT_MAGIC) + struct.calcsize("<IBQ")
    if blob[:len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, tag, n = struct.unpack("<IBQ", blob[len(CKPT_MAGIC):head])
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    if tag not in KIND_TAGS:
        raise ValueError(f"{path}: unknown policy kind tag {tag}")
    if len(blob) != head + 8 * n:
        raise ValueError(f"{path}: truncated checkpoint")
    values = np.frombuffer(blob, dtype="<f8", count=n, offset=head).astype(np.float64)
    return KIND_TAGS[tag], PolicyParams(values)
