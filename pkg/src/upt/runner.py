"""Training loop, evaluation, run-directory I/O and the built-in experiment suites."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .answers import ExtractedAnswer, extract
from .grpo import AdamState, GroupStats, NonFiniteError, normalize_advantages, optimizer_step, surrogate
from .metrics import EntropyReport, accuracy, mean_majority_reward, semantic_entropy, task_scores
from .policy import (Policy, PolicyParams, Response, WrongMass, make_policy, save_checkpoint, stream)
from .tasks import Task, TaskSet, generate_tasks
from .voting import VoteResult, majority_vote, pseudo_rewards, supervised_rewards

log = logging.getLogger(__name__)

SHUFFLE_STREAM = 0x5EED


@dataclass
class TrainConfig:
    group_size: int = 8
    clip_eps: float = 0.2
    kl_beta: float = 0.01
    learning_rate: float = 1e-6
    weight_decay: float = 1e-2
    grad_clip_norm: float = 1.0
    episodes: int = 15
    batch_tasks_per_step: int = 1
    temperature: float = 1.0
    seed: int = 0
    reward_mode: str = "majority"
    policy_kind: str = "bandit"
    std_mode: str = "population"
    inner_epochs: int = 1
    skip_zero_variance: bool = False
    eval_every: int = 50
    # fraction of tasks held out for evaluation; 0 evaluates on the training tasks
    eval_split: float = 0.2
    # stop after this many steps (0 = run all episodes)
    max_steps: int = 0
    # > 0: start from init_with_accuracy(p=init_accuracy) instead of zeros
    init_accuracy: float = 0.0
    init_wrong_mass: float = 0.0
    seq_buckets: int = 16
    log_wall_time: bool = True

    def validate(self) -> "TrainConfig":
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must lie in (0, 1)")
        if self.kl_beta < 0:
            raise ValueError("kl_beta must be >= 0")
        for name in ("learning_rate", "temperature"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("episodes", "batch_tasks_per_step", "inner_epochs", "seq_buckets"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.weight_decay < 0 or self.grad_clip_norm <= 0:
            raise ValueError("weight_decay must be >= 0 and grad_clip_norm > 0")
        if self.eval_every < 0 or self.max_steps < 0:
            raise ValueError("eval_every and max_steps must be >= 0")
        if not 0 <= self.eval_split < 1:
            raise ValueError("eval_split must lie in [0, 1)")
        if self.reward_mode not in ("majority", "ground_truth"):
            raise ValueError(f"unknown reward_mode {self.reward_mode!r}")
        if self.policy_kind not in ("bandit", "seq"):
            raise ValueError(f"unknown policy_kind {self.policy_kind!r}")
        if self.std_mode not in ("population", "sample"):
            raise ValueError(f"unknown std_mode {self.std_mode!r}")
        if not 0 <= self.init_accuracy < 1:
            raise ValueError("init_accuracy must lie in [0, 1)")
        return self


def _parse_value(raw: str, like):
    if isinstance(like, bool):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def parse_config(text: str) -> TrainConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    defaults = TrainConfig()
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or key not in known:
            raise ValueError(f"line {n}: unknown or malformed entry {line!r}")
        values[key] = _parse_value(raw, getattr(defaults, key))
    return TrainConfig(**values).validate()


def format_config(config: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text())


@dataclass
class MetricRecord:
    step: int
    episode: int
    mean_majority_reward: float
    mean_entropy: Optional[float]
    greedy_accuracy: Optional[float]
    clip_fraction: float
    mean_kl: float
    grad_norm: float
    objective: float
    wall_ms: float

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self))


@dataclass
class RewardedGroup:
    task_id: str
    responses: list[Response]
    answers: list[ExtractedAnswer]
    vote: VoteResult
    pseudo_rewards: list[float]
    rewards: list[float]
    stats: GroupStats
    entropy: EntropyReport


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, last_checkpoint: Optional[Path]):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


@dataclass
class TrainResult:
    params: PolicyParams
    log: list[MetricRecord]
    policy: Policy
    checkpoints: list[Path] = field(default_factory=list)


def worker_count(default: int = 1) -> int:
    env = os.environ.get("UPT_WORKERS")
    n = int(env) if env else default
    return max(1, n)


def split_tasks(tasks: TaskSet, eval_split: float) -> tuple[TaskSet, TaskSet]:
    """Deterministic train/eval split by a hash of each task id."""
    if eval_split <= 0:
        return tasks, tasks
    cut = int(round(eval_split * 1000))
    held = [zlib.crc32(t.id.encode()) % 1000 < cut for t in tasks]
    train = TaskSet(tuple(t for t, h in zip(tasks, held) if not h), tasks.seed)
    ev = TaskSet(tuple(t for t, h in zip(tasks, held) if h), tasks.seed)
    if len(train) == 0:
        return tasks, ev if len(ev) else tasks
    return train, ev if len(ev) else train


def build_policy(config: TrainConfig, tasks: TaskSet) -> Policy:
    if config.policy_kind == "seq":
        return make_policy("seq", tasks, n_buckets=config.seq_buckets)
    return make_policy(config.policy_kind, tasks)


def initial_params(config: TrainConfig, policy: Policy, tasks: TaskSet) -> PolicyParams:
    if config.init_accuracy > 0:
        return policy.init_with_accuracy(tasks, config.init_accuracy, WrongMass(config.init_wrong_mass))
    return policy.zeros()


def rollout(policy: Policy, params: PolicyParams, task: Task, config: TrainConfig, step: int,
            pool=None) -> RewardedGroup:
    """Sample a group, extract answers, vote, and compute rewards and advantages."""
    group = policy.sample_group(params, task, config.group_size, config.temperature,
                                key=(config.seed, step), pool=pool)
    answers = [extract(o.text) for o in group]
    vote = majority_vote(answers)
    pseudo = pseudo_rewards(answers, vote)
    if config.reward_mode == "ground_truth":
        rewards = supervised_rewards(answers, task.truth)
    else:
        rewards = pseudo
    stats = normalize_advantages(rewards, config.std_mode)
    return RewardedGroup(task.id, group, answers, vote, pseudo, rewards, stats, semantic_entropy(answers))


def train(config: TrainConfig, tasks: TaskSet, initial: Optional[PolicyParams] = None,
          policy: Optional[Policy] = None, out_dir=None, workers: Optional[int] = None,
          callback: Optional[Callable[[int, PolicyParams, Policy], None]] = None) -> TrainResult:
    """Majority-vote GRPO over ``tasks`` (or supervised GRPO with ``reward_mode = ground_truth``).

    Each step samples ``batch_tasks_per_step`` tasks, rolls out a group per
    task, and takes ``inner_epochs`` optimizer steps on the mean surrogate.
    The next step samples from the updated parameters.
    """
    config.validate()
    if len(tasks) == 0:
        raise ValueError("no tasks to train on")
    policy = policy or build_policy(config, tasks)
    params = initial if initial is not None else initial_params(config, policy, tasks)
    ref = params
    train_set, eval_set = split_tasks(tasks, config.eval_split)
    n_workers = worker_count(workers or 1)

    run_dir = Path(out_dir) if out_dir is not None else None
    ckpt_dir = None
    metrics_fh = None
    checkpoints: list[Path] = []
    if run_dir is not None:
        ckpt_dir = run_dir / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.resolved").write_text(format_config(config))
        metrics_fh = open(run_dir / "metrics.log", "w")

    def checkpoint(name):
        if ckpt_dir is not None:
            path = ckpt_dir / f"{name}.ckpt"
            save_checkpoint(path, params, policy.kind)
            checkpoints.append(path)

    state = AdamState.zeros(policy.dim)
    records: list[MetricRecord] = []
    step = 0
    pool_cm = ThreadPoolExecutor(n_workers) if n_workers > 1 else nullcontext(None)
    try:
        with pool_cm as pool:
            checkpoint("ep0")
            for ep in range(config.episodes):
                order = stream(config.seed, SHUFFLE_STREAM, ep).permutation(len(train_set))
                for start in range(0, len(order), config.batch_tasks_per_step):
                    if config.max_steps and step >= config.max_steps:
                        break
                    step += 1
                    t0 = time.perf_counter()
                    batch = [train_set[int(i)] for i in order[start:start + config.batch_tasks_per_step]]
                    groups = [rollout(policy, params, t, config, step, pool) for t in batch]
                    used = [(t, g) for t, g in zip(batch, groups)
                            if not (config.skip_zero_variance and g.stats.zero_variance)]
                    objective = clip_frac = mean_kl = gnorm = 0.0
                    for _ in range(config.inner_epochs):
                        if not used:
                            break
                        results = [surrogate(g.responses, g.stats, policy, t, params, ref,
                                             config.clip_eps, config.kl_beta) for t, g in used]
                        grad = sum(r.grad for r in results) / len(results)
                        n_tok = sum(r.n_tokens for r in results)
                        objective = sum(r.objective for r in results) / len(results)
                        clip_frac = sum(r.clip_fraction * r.n_tokens for r in results) / n_tok
                        mean_kl = sum(r.mean_kl * r.n_tokens for r in results) / n_tok
                        try:
                            res = optimizer_step(params, grad, state, config.learning_rate,
                                                 config.weight_decay, config.grad_clip_norm)
                        except FloatingPointError as e:
                            last = checkpoints[-1] if checkpoints else None
                            raise TrainingAborted(f"step {step}: {e}", last) from e
                        params, state, gnorm = res.params, res.state, res.grad_norm
                    ent = [g.entropy.entropy for g in groups if not g.entropy.degenerate]
                    acc = None
                    if config.eval_every and step % config.eval_every == 0:
                        acc = accuracy(policy, params, eval_set, "greedy")
                    rec = MetricRecord(
                        step=step, episode=ep,
                        mean_majority_reward=mean_majority_reward(g.pseudo_rewards for g in groups),
                        mean_entropy=float(np.mean(ent)) if ent else None,
                        greedy_accuracy=acc, clip_fraction=clip_frac, mean_kl=mean_kl,
                        grad_norm=gnorm, objective=objective,
                        wall_ms=(time.perf_counter() - t0) * 1e3 if config.log_wall_time else 0.0,
                    )
                    records.append(rec)
                    if metrics_fh is not None:
                        metrics_fh.write(rec.to_json() + "\n")
                    if callback is not None:
                        callback(step, params, policy)
                checkpoint(f"ep{ep + 1}")
                if config.max_steps and step >= config.max_steps:
                    break
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    return TrainResult(params, records, policy, checkpoints)


def read_metrics(path) -> list[MetricRecord]:
    return [MetricRecord(**json.loads(ln)) for ln in Path(path).read_text().splitlines() if ln.strip()]


@dataclass
class EvalResult:
    accuracy: float
    per_task: list[dict]


def evaluate(policy: Policy, params, tasks: TaskSet, mode="greedy", report_path=None,
             seed: int = 0) -> EvalResult:
    scores = task_scores(policy, params, tasks, mode, seed)
    if not scores:
        raise ValueError("no tasks to evaluate")
    per_task = []
    for t, s in zip(tasks, scores):
        per_task.append({"id": t.id, "greedy_answer": extract(policy.greedy(params, t).text).canonical,
                         "truth": t.truth.canonical, "score": s})
    result = EvalResult(float(np.mean(scores)), per_task)
    if report_path is not None:
        Path(report_path).write_text("".join(json.dumps(r) + "\n" for r in per_task))
    return result


# --- experiment suites ------------------------------------------------------------

SUITE_LR = 1e-2


@dataclass(frozen=True)
class SuiteSpec:
    name: str
    p0: float
    wrong: WrongMass
    n_tasks: int = 50
    family: str = "modular"
    steps: int = 300
    group_size: int = 8
    batch_tasks: int = 10
    curve_every: int = 10


SUITES = {
    "improve": SuiteSpec("improve", 0.7, WrongMass()),
    "degrade": SuiteSpec("degrade", 0.3, WrongMass(designated_mass=0.4)),
    "dynamics": SuiteSpec("dynamics", 0.7, WrongMass()),
}


def suite_config(spec: SuiteSpec, seed: int) -> TrainConfig:
    per_episode = -(-spec.n_tasks // spec.batch_tasks)
    return TrainConfig(
        group_size=spec.group_size, learning_rate=SUITE_LR, seed=seed,
        batch_tasks_per_step=spec.batch_tasks,
        episodes=-(-spec.steps // per_episode), max_steps=spec.steps,
        eval_every=0, eval_split=0.0, log_wall_time=False,
    ).validate()


def run_suite_seed(spec: SuiteSpec, seed: int, out_dir=None) -> dict:
    tasks = generate_tasks(spec.family, spec.n_tasks, seed)
    config = suite_config(spec, seed)
    policy = build_policy(config, tasks)
    init = policy.init_with_accuracy(tasks, spec.p0, spec.wrong)
    curve: list[tuple[int, float]] = [(0, accuracy(policy, init, tasks, "expected"))]

    def on_step(step, params, pol):
        if step % spec.curve_every == 0:
            curve.append((step, accuracy(pol, params, tasks, "expected")))

    res = train(config, tasks, init, policy, out_dir=out_dir, callback=on_step)
    rewards = [r.mean_majority_reward for r in res.log]
    entropy = [r.mean_entropy for r in res.log]
    ent = [e for e in entropy if e is not None]
    return {
        "seed": seed,
        "steps": len(res.log),
        "greedy_initial": accuracy(policy, init, tasks, "greedy"),
        "greedy_final": accuracy(policy, res.params, tasks, "greedy"),
        "expected_initial": curve[0][1],
        "expected_final": accuracy(policy, res.params, tasks, "expected"),
        "reward_first50": float(np.mean(rewards[:50])),
        "reward_last50": float(np.mean(rewards[-50:])),
        "entropy_first50": float(np.mean(ent[:50])),
        "entropy_last50": float(np.mean(ent[-50:])),
        "curves": {"majority_reward": rewards, "entropy": entropy,
                   "expected_accuracy": [list(c) for c in curve]},
    }


def run_experiment_suite(name: str, seeds: Sequence[int] = range(5), out_dir=None) -> dict:
    """Run a built-in suite and return a machine-readable pass/fail report.

    Suites override the learning rate to ``SUITE_LR``. Accuracy checks use the
    exact expected accuracy; greedy accuracy is reported alongside.
    """
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    spec = SUITES[name]
    runs = []
    for s in seeds:
        sub = Path(out_dir) / f"seed{s}" if out_dir is not None else None
        runs.append(run_suite_seed(spec, s, sub))
        log.info("suite %s seed %s done", name, s)

    def mean(key):
        return float(np.mean([r[key] for r in runs]))

    exp_gain = mean("expected_final") - mean("expected_initial")
    greedy_gain = mean("greedy_final") - mean("greedy_initial")
    reward_up = sum(r["reward_last50"] > r["reward_first50"] for r in runs)
    entropy_down = sum(r["entropy_last50"] < r["entropy_first50"] for r in runs)
    need = max(1, len(runs) - 1)
    if name == "improve":
        checks = {
            "expected_gain_ge_0.15": exp_gain >= 0.15,
            "expected_final_ge_0.85_every_seed": all(r["expected_final"] >= 0.85 for r in runs),
        }
    elif name == "degrade":
        checks = {"expected_drop_ge_0.10": -exp_gain >= 0.10}
    else:
        checks = {
            "reward_increases": reward_up >= need,
            "entropy_decreases": entropy_down >= need,
            "accuracy_increases": sum(r["expected_final"] > r["expected_initial"] for r in runs) >= need,
        }
    report = {
        "suite": name,
        "seeds": list(seeds),
        "learning_rate_override": SUITE_LR,
        "summary": {
            "expected_initial": mean("expected_initial"), "expected_final": mean("expected_final"),
            "expected_gain": exp_gain,
            "greedy_initial": mean("greedy_initial"), "greedy_final": mean("greedy_final"),
            "greedy_gain": greedy_gain,
            "seeds_reward_up": reward_up, "seeds_entropy_down": entropy_down,
        },
        "checks": checks,
        "passed": all(checks.values()),
        "runs": runs,
    }
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "report").write_text(json.dumps(report, indent=1))
    return report
