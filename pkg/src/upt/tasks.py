"""Synthetic parametric question families and question synthesis.

Each family is a template: integer parameters in, exact truth and a small
answer space out. Tasks carry their truth for evaluation and for the
supervised baseline only; the unsupervised training path never reads it.
"""

from __future__ import annotations

import copy
import json
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterator, Mapping, Optional, Sequence

import numpy as np

from .answers import ExtractedAnswer, canonicalize, choice, equivalent, numeric

SCHEMA_VERSION = 1
N_ANSWERS = 4


class TemplateError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Task:
    id: str
    family: str
    params: Mapping[str, int]
    features: tuple[float, ...]
    answer_space: tuple[ExtractedAnswer, ...]
    truth: ExtractedAnswer = field(repr=False)

    def __post_init__(self):
        space = self.answer_space
        if len(space) < 2:
            raise ValueError(f"task {self.id}: answer space needs >= 2 answers")
        for i, a in enumerate(space):
            if a.kind == "none":
                raise ValueError(f"task {self.id}: empty answer in answer space")
            for b in space[:i]:
                if equivalent(a, b):
                    raise ValueError(f"task {self.id}: duplicate answer {a}")
        if not any(equivalent(self.truth, a) for a in space):
            raise ValueError(f"task {self.id}: truth {self.truth} not in answer space")

    def truth_index(self) -> int:
        return next(i for i, a in enumerate(self.answer_space) if equivalent(a, self.truth))


@dataclass(frozen=True)
class TaskSet:
    tasks: tuple[Task, ...]
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        ids = [t.id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ValueError("task ids must be unique")

    def __len__(self):
        return len(self.tasks)

    def __iter__(self) -> Iterator[Task]:
        return iter(self.tasks)

    def __getitem__(self, i):
        return self.tasks[i]

    def by_id(self, task_id: str) -> Task:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise KeyError(task_id)


# --- templates ---------------------------------------------------------------


@dataclass(frozen=True)
class Template:
    name: str
    code: int
    sample: Callable[[np.random.Generator], dict]
    solve: Callable[[dict], ExtractedAnswer]
    distractors: Callable[[dict], list]
    # parameters an in-context rewrite may substitute
    mutable: tuple[str, ...]


def _int(rng, lo, hi):
    return int(rng.integers(lo, hi + 1))


def _linear_sample(rng):
    a = 0
    while a == 0:
        a = _int(rng, -5, 9)
    return {"a": a, "b": _int(rng, -20, 20), "c": _int(rng, -20, 20), "slot": _int(rng, 0, 3)}


def _linear_solve(p):
    # a*x + b = c
    return numeric(Fraction(p["c"] - p["b"], p["a"]))


def _linear_distractors(p):
    a, b, c = p["a"], p["b"], p["c"]
    x = Fraction(c - b, a)
    return [Fraction(c + b, a), Fraction(c - b), Fraction(b - c, a), x + 1, x - 1, x + 2, 2 * x + 1]


def _modular_sample(rng):
    return {"a": _int(rng, 2, 30), "b": _int(rng, 2, 30), "c": _int(rng, 0, 30),
            "m": _int(rng, 5, 12), "slot": _int(rng, 0, 3)}


def _modular_solve(p):
    return numeric((p["a"] * p["b"] + p["c"]) % p["m"])


def _modular_distractors(p):
    m = p["m"]
    r = (p["a"] * p["b"] + p["c"]) % m
    return [(r + 1) % m, (r + m - 1) % m, (r + 2) % m, (r + 3) % m]


def _intersection_sample(rng):
    m1 = _int(rng, -4, 4)
    m2 = m1
    while m2 == m1:
        m2 = _int(rng, -4, 4)
    return {"m1": m1, "c1": _int(rng, -10, 10), "m2": m2, "c2": _int(rng, -10, 10),
            "slot": _int(rng, 0, 3)}


def _intersection_solve(p):
    # x-coordinate of y = m1 x + c1 meeting y = m2 x + c2
    return numeric(Fraction(p["c2"] - p["c1"], p["m1"] - p["m2"]))


def _intersection_distractors(p):
    x = Fraction(p["c2"] - p["c1"], p["m1"] - p["m2"])
    return [-x, Fraction(p["c1"] - p["c2"]), x + 1, x - 1, Fraction(p["c2"] + p["c1"], p["m1"] - p["m2"]), x + 2]


def _pattern_values(p):
    nxt = p["start"] + 3 * p["step"]
    cands = [nxt + p["step"], nxt - 1, nxt + 1, nxt + 2 * p["step"], nxt - p["step"] + 1, nxt + 5]
    opts = []
    for v in cands:
        if v != nxt and v not in opts:
            opts.append(v)
    opts = opts[: N_ANSWERS - 1]
    opts.insert(p["slot"], nxt)
    return opts


def _pattern_sample(rng):
    return {"start": _int(rng, -10, 20), "step": _int(rng, 1, 9), "slot": _int(rng, 0, 3)}


def _pattern_solve(p):
    # options hold the candidate next terms; the truth is the letter of start + 3*step
    nxt = p["start"] + 3 * p["step"]
    return choice("ABCD"[_pattern_values(p).index(nxt)])


TEMPLATES: dict[str, Template] = {
    t.name: t
    for t in (
        Template("linear", 1, _linear_sample, _linear_solve, _linear_distractors, ("a", "b", "c")),
        Template("modular", 2, _modular_sample, _modular_solve, _modular_distractors, ("a", "b", "c", "m")),
        Template("intersection", 3, _intersection_sample, _intersection_solve,
                 _intersection_distractors, ("m1", "c1", "m2", "c2")),
        Template("pattern", 4, _pattern_sample, _pattern_solve, lambda p: [], ("start", "step")),
    )
}
FAMILIES = tuple(TEMPLATES)


def template_for(family: str) -> Template:
    try:
        return TEMPLATES[family]
    except KeyError:
        raise TemplateError(f"unknown or non-parametric template family {family!r}") from None


def _answer_space(tpl: Template, params: dict, truth: ExtractedAnswer) -> tuple[ExtractedAnswer, ...]:
    if tpl.name == "pattern":
        return tuple(choice(c) for c in "ABCD")
    wrong: list[ExtractedAnswer] = []
    for q in tpl.distractors(params):
        a = numeric(q)
        if not equivalent(a, truth) and not any(equivalent(a, w) for w in wrong):
            wrong.append(a)
    k = 3
    while len(wrong) < N_ANSWERS - 1:
        a = numeric(truth.value + k)
        if not any(equivalent(a, w) for w in wrong):
            wrong.append(a)
        k += 1
    wrong = wrong[: N_ANSWERS - 1]
    wrong.insert(params["slot"], truth)
    return tuple(wrong)


def features_of(family: str, params: Mapping[str, int]) -> tuple[float, ...]:
    tpl = template_for(family)
    return (float(tpl.code),) + tuple(float(params[k]) for k in sorted(params))


def make_task(task_id: str, family: str, params: Mapping[str, int]) -> Task:
    tpl = template_for(family)
    params = {k: int(v) for k, v in params.items()}
    truth = tpl.solve(params)
    return Task(task_id, family, params, features_of(family, params),
                _answer_space(tpl, params, truth), truth)


def _family_rng(family: str, seed: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(family.encode())])


def generate_tasks(family: str, count: int, seed: int = 0) -> TaskSet:
    if family not in TEMPLATES:
        raise TemplateError(f"unknown template family {family!r}")
    if count < 0:
        raise ValueError("count must be >= 0")
    tpl = TEMPLATES[family]
    rng = _family_rng(family, seed)
    tasks = [make_task(f"{family}-{seed}-{i:04d}", family, tpl.sample(rng)) for i in range(count)]
    return TaskSet(tuple(tasks), seed)


def _suffix(rng: np.random.Generator) -> str:
    return f"{int(rng.integers(0, 2**32)):08x}"


def synthesize_in_context(seed_task: Task, rng: np.random.Generator) -> Task:
    """Rewrite a question by substituting some of its conditions.

    Keeps the family, resamples a nonempty subset of the mutable parameters,
    and recomputes the truth from the new parameters.
    """
    tpl = template_for(seed_task.family)
    old = dict(seed_task.params)
    while True:
        fresh = tpl.sample(rng)
        n_sub = int(rng.integers(1, len(tpl.mutable) + 1))
        subst = rng.choice(len(tpl.mutable), size=n_sub, replace=False)
        params = dict(old)
        for j in sorted(int(j) for j in subst):
            params[tpl.mutable[j]] = fresh[tpl.mutable[j]]
        params["slot"] = fresh["slot"]
        if any(params[k] != old[k] for k in tpl.mutable) and _valid_params(tpl, params):
            return make_task(f"{seed_task.id}.ic{_suffix(rng)}", tpl.name, params)


def _valid_params(tpl: Template, params: dict) -> bool:
    try:
        make_task("_probe", tpl.name, params)
    except (ValueError, ZeroDivisionError):
        return False
    return True


def synthesize_direct(features: Sequence[float], rng: np.random.Generator,
                      family_weights: Optional[Mapping[str, float]] = None) -> Task:
    """Create a fresh question from the context features alone.

    The family is drawn from ``family_weights`` (uniform by default), so the
    question type can differ from whatever the features came from.
    """
    weights = dict(family_weights) if family_weights else {f: 1.0 for f in FAMILIES}
    names = [f for f in FAMILIES if weights.get(f, 0.0) > 0]
    for f in weights:
        template_for(f)
    w = np.array([weights[f] for f in names], dtype=float)
    family = names[int(rng.choice(len(names), p=w / w.sum()))]
    feat = np.asarray(features, dtype=np.float64)
    ctx = np.random.default_rng([zlib.crc32(feat.tobytes()), int(rng.integers(0, 2**32))])
    params = TEMPLATES[family].sample(ctx)
    return make_task(f"direct-{family}-{_suffix(rng)}", family, params)


def poison_truths(tasks: TaskSet, sentinel: object = None) -> TaskSet:
    """Copy of ``tasks`` whose truths are replaced by a sentinel.

    The default sentinel raises on any attribute access, so any code path
    that reads a truth fails loudly.
    """
    out = []
    for t in tasks:
        c = copy.copy(t)
        object.__setattr__(c, "truth", PoisonedTruth() if sentinel is None else sentinel)
        out.append(c)
    return TaskSet(tuple(out), tasks.seed)


class PoisonedTruth:
    def __getattr__(self, name):
        raise RuntimeError(f"ground truth accessed ({name}) on a label-free path")

    def __repr__(self):
        return "PoisonedTruth()"


# --- file format ---------------------------------------------------------------


def save_tasks(path, tasks: TaskSet) -> None:
    header = {"schema_version": SCHEMA_VERSION, "seed": tasks.seed, "count": len(tasks)}
    lines = [json.dumps(header)]
    for t in tasks:
        lines.append(json.dumps({
            "id": t.id,
            "family": t.family,
            "parameters": dict(t.params),
            "features": list(t.features),
            "answer_space": [a.canonical for a in t.answer_space],
            "truth": t.truth.canonical,
        }))
    Path(path).write_text("\n".join(lines) + "\n")


def load_tasks(path) -> TaskSet:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty task file")
    header = json.loads(lines[0])
    if header.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema version {header.get('schema_version')!r}")
    tasks = []
    for ln in lines[1:]:
        rec = json.loads(ln)
        tasks.append(Task(
            rec["id"], rec["family"], {k: int(v) for k, v in rec["parameters"].items()},
            tuple(float(x) for x in rec["features"]),
            tuple(canonicalize(a) for a in rec["answer_space"]),
            canonicalize(rec["truth"]),
        ))
    return TaskSet(tuple(tasks), header.get("seed"))
