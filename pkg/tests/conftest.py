import numpy as np
import pytest

from upt.grpo import normalize_advantages
from upt.policy import BanditPolicy, PolicyParams, SeqPolicy
from upt.tasks import generate_tasks


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of scalar ``f`` at ``x``."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(g, ref):
    return float(np.max(np.abs(g - ref)) / max(np.max(np.abs(ref)), 1e-8))


def surrogate_instance(policy, tasks, rng, eps=0.2, G=4, kink=1e-4):
    """Random (theta, theta_old, ref, group) away from clip kinks."""
    while True:
        task = tasks[int(rng.integers(len(tasks)))]
        old = PolicyParams(rng.normal(scale=0.7, size=policy.dim))
        theta = PolicyParams(old.values + rng.normal(scale=0.25, size=policy.dim))
        ref = PolicyParams(rng.normal(scale=0.7, size=policy.dim))
        group = policy.sample_group(old, task, G, key=(int(rng.integers(2**31)),))
        stats = normalize_advantages(rng.normal(size=G))
        ratios = [np.exp(policy.logprobs(theta, task, o.tokens) - o.old_logprobs) for o in group]
        r = np.concatenate(ratios)
        if np.min(np.abs(r - (1 - eps))) > kink and np.min(np.abs(r - (1 + eps))) > kink:
            return task, old, theta, ref, group, stats


@pytest.fixture
def modular_tasks():
    return generate_tasks("modular", 6, seed=3)


@pytest.fixture
def pattern_tasks():
    return generate_tasks("pattern", 4, seed=1)


@pytest.fixture
def bandit(modular_tasks):
    return BanditPolicy(modular_tasks)


@pytest.fixture
def seq(pattern_tasks):
    # small vocabulary keeps finite-difference checks cheap
    return SeqPolicy(pattern_tasks, n_fillers=2, n_buckets=4)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
