import json
from pathlib import Path

import numpy as np
import pytest

from upt import runner
from upt.metrics import accuracy
from upt.policy import BanditPolicy, PolicyParams, load_checkpoint, make_policy
from upt.runner import (SUITES, TrainConfig, TrainingAborted, evaluate, format_config, load_config,
                        parse_config, read_metrics, run_experiment_suite, split_tasks, train)
from upt.tasks import generate_tasks, poison_truths


def small_config(**kw):
    base = dict(learning_rate=1e-2, episodes=2, batch_tasks_per_step=2, eval_every=3, seed=1)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture
def tasks():
    return generate_tasks("modular", 12, seed=5)


def test_config_defaults_and_validation():
    c = TrainConfig()
    assert (c.episodes, c.kl_beta, c.learning_rate, c.weight_decay, c.grad_clip_norm) == (15, 0.01, 1e-6, 1e-2, 1.0)
    assert (c.group_size, c.clip_eps, c.temperature, c.batch_tasks_per_step) == (8, 0.2, 1.0, 1)
    for bad in (dict(clip_eps=1.0), dict(kl_beta=-0.1), dict(group_size=1), dict(reward_mode="oracle"),
                dict(learning_rate=0.0), dict(policy_kind="mlp")):
        with pytest.raises(ValueError):
            TrainConfig(**bad).validate()


def test_config_text_round_trip():
    c = small_config(policy_kind="seq", skip_zero_variance=True)
    assert parse_config(format_config(c)) == c
    text = "# comment\ngroup_size = 4\nreward_mode = ground_truth  # trailing\n"
    p = parse_config(text)
    assert p.group_size == 4 and p.reward_mode == "ground_truth" and p.kl_beta == 0.01
    for bad in ("grp = 3\n", "group_size 3\n", "skip_zero_variance = maybe\n"):
        with pytest.raises(ValueError):
            parse_config(bad)


def test_split_is_deterministic(tasks):
    tr, ev = split_tasks(tasks, 0.2)
    assert len(tr) + len(ev) == len(tasks)
    assert {t.id for t in tr}.isdisjoint(t.id for t in ev)
    assert [t.id for t in split_tasks(tasks, 0.2)[1]] == [t.id for t in ev]
    assert split_tasks(tasks, 0.0) == (tasks, tasks)


def test_unanimous_policy_without_kl_stays_put(tasks):
    pol = BanditPolicy(tasks)
    init = pol.init_with_accuracy(tasks, 1 - 1e-12)
    cfg = small_config(kl_beta=0.0, weight_decay=0.0)
    res = train(cfg, tasks, init, pol)
    assert res.params == init
    assert all(r.grad_norm == 0 and r.mean_majority_reward == 1.0 for r in res.log)


def test_run_directory_layout(tasks, tmp_path):
    cfg = small_config()
    res = train(cfg, tasks, out_dir=tmp_path)
    assert load_config(tmp_path / "config.resolved") == cfg
    assert sorted(p.name for p in (tmp_path / "checkpoints").iterdir()) == ["ep0.ckpt", "ep1.ckpt", "ep2.ckpt"]
    log = read_metrics(tmp_path / "metrics.log")
    assert log == res.log
    steps = [r.step for r in log]
    assert steps == sorted(set(steps)) and steps[0] == 1
    first = json.loads((tmp_path / "metrics.log").read_text().splitlines()[0])
    assert list(first) == ["step", "episode", "mean_majority_reward", "mean_entropy", "greedy_accuracy",
                           "clip_fraction", "mean_kl", "grad_norm", "objective", "wall_ms"]
    evals = [r for r in log if r.greedy_accuracy is not None]
    assert [r.step for r in evals] == [s for s in steps if s % 3 == 0]
    kind, params = load_checkpoint(tmp_path / "checkpoints" / "ep2.ckpt")
    assert kind == "bandit" and params == res.params


def test_rerun_from_resolved_config(tasks, tmp_path):
    cfg = small_config(log_wall_time=False)
    train(cfg, tasks, out_dir=tmp_path / "a")
    again = load_config(tmp_path / "a" / "config.resolved")
    train(again, tasks, out_dir=tmp_path / "b")
    for name in ("metrics.log", "checkpoints/ep2.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def run_bytes(cfg, tasks, out):
    train(cfg, tasks, out_dir=out)
    return (out / "metrics.log").read_bytes(), (out / "checkpoints" / f"ep{cfg.episodes}.ckpt").read_bytes()


@pytest.mark.parametrize("kind", ["bandit", "seq"])
def test_worker_count_does_not_change_results(tasks, tmp_path, monkeypatch, kind):
    cfg = small_config(policy_kind=kind, log_wall_time=False, group_size=6)
    monkeypatch.setenv("UPT_WORKERS", "1")
    one = run_bytes(cfg, tasks, tmp_path / "w1")
    monkeypatch.setenv("UPT_WORKERS", "4")
    assert runner.worker_count() == 4
    four = run_bytes(cfg, tasks, tmp_path / "w4")
    assert one == four


def test_majority_mode_never_reads_truth(tasks):
    pol = BanditPolicy(tasks)
    init = pol.init_with_accuracy(tasks, 0.6)
    cfg = small_config(eval_every=0)
    trail_a, trail_b = [], []
    a = train(cfg, tasks, init, pol, callback=lambda s, p, _: trail_a.append(p.values.tobytes()))
    b = train(cfg, poison_truths(tasks), init, pol, callback=lambda s, p, _: trail_b.append(p.values.tobytes()))
    assert trail_a == trail_b and a.params == b.params
    with pytest.raises(RuntimeError):
        train(small_config(eval_every=0, reward_mode="ground_truth"), poison_truths(tasks), init, pol)


def test_nonfinite_gradient_aborts_with_last_checkpoint(tasks, tmp_path, monkeypatch):
    real = runner.surrogate
    calls = {"n": 0}

    def flaky(*args, **kw):
        out = real(*args, **kw)
        calls["n"] += 1
        if calls["n"] > 8:
            out.grad = out.grad * np.nan
        return out

    monkeypatch.setattr(runner, "surrogate", flaky)
    seen = {}
    with pytest.raises(TrainingAborted) as err:
        train(small_config(episodes=3), tasks, out_dir=tmp_path,
              callback=lambda step, p, _: seen.__setitem__(step, p))
    ckpts = sorted((tmp_path / "checkpoints").iterdir())
    assert err.value.last_checkpoint == ckpts[-1] and ckpts[-1].name == "ep1.ckpt"
    # the retained checkpoint holds the parameters after the first full episode
    steps_per_episode = -(-len(split_tasks(tasks, 0.2)[0]) // 2)
    kind, params = load_checkpoint(err.value.last_checkpoint)
    assert params == seen[steps_per_episode]
    assert np.all(np.isfinite(params.values))


def test_skip_zero_variance_and_inner_epochs(tasks):
    pol = BanditPolicy(tasks)
    init = pol.init_with_accuracy(tasks, 1 - 1e-12)
    res = train(small_config(skip_zero_variance=True), tasks, init, pol)
    # every group is unanimous, so nothing is optimized, not even weight decay
    assert res.params == init and all(r.grad_norm == 0 for r in res.log)
    clipped = train(small_config(inner_epochs=4, learning_rate=0.3, kl_beta=0.0), tasks)
    assert any(r.clip_fraction > 0 for r in clipped.log)


def test_seq_policy_training_improves_expected_accuracy():
    tasks = generate_tasks("pattern", 8, seed=2)
    cfg = TrainConfig(policy_kind="seq", seq_buckets=8, learning_rate=5e-2, episodes=25,
                      batch_tasks_per_step=4, eval_every=0, eval_split=0.0, init_accuracy=0.6, seed=3)
    pol = runner.build_policy(cfg, tasks)
    init = runner.initial_params(cfg, pol, tasks)
    res = train(cfg, tasks, init, pol)
    assert accuracy(pol, res.params, tasks, "expected") > accuracy(pol, init, tasks, "expected") + 0.05
    assert all(0 <= r.clip_fraction <= 1 and r.mean_kl >= 0 for r in res.log)


def test_evaluate_writes_report(tasks, tmp_path):
    pol = BanditPolicy(tasks)
    params = pol.init_with_accuracy(tasks, 0.9)
    res = evaluate(pol, params, tasks, "greedy", report_path=tmp_path / "r.jsonl")
    rows = [json.loads(x) for x in (tmp_path / "r.jsonl").read_text().splitlines()]
    assert len(rows) == len(tasks) and res.accuracy == 1.0
    assert all(r["greedy_answer"] == r["truth"] for r in rows)
    assert evaluate(pol, params, tasks, "expected").accuracy == pytest.approx(0.9)


def test_supervised_baseline_keeps_pace_with_majority():
    gains = {"majority": [], "ground_truth": []}
    for seed in range(5):
        tasks = generate_tasks("modular", 50, seed)
        pol = BanditPolicy(tasks)
        init = pol.init_with_accuracy(tasks, 0.7)
        base = accuracy(pol, init, tasks, "expected")
        for mode in gains:
            cfg = TrainConfig(learning_rate=1e-2, batch_tasks_per_step=10, episodes=10, eval_every=0,
                              eval_split=0.0, seed=seed, reward_mode=mode)
            res = train(cfg, tasks, init, pol)
            gains[mode].append(accuracy(pol, res.params, tasks, "expected") - base)
    assert min(gains["majority"]) > 0 and min(gains["ground_truth"]) > 0
    assert np.mean(gains["ground_truth"]) >= np.mean(gains["majority"])


def test_dynamics_suite_trends(tmp_path):
    report = run_experiment_suite("dynamics", seeds=[0, 1], out_dir=tmp_path)
    assert report["passed"], report["checks"]
    saved = json.loads((tmp_path / "report").read_text())
    assert saved["checks"] == report["checks"]
    assert set(saved["runs"][0]["curves"]) == {"majority_reward", "entropy", "expected_accuracy"}
    assert (tmp_path / "seed0" / "metrics.log").exists()
    assert report["learning_rate_override"] == runner.SUITE_LR


def test_unknown_suite():
    with pytest.raises(ValueError):
        run_experiment_suite("explode")
    assert set(SUITES) == {"improve", "degrade", "dynamics"}
