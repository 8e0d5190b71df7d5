"""Acceptance suite: one test per criterion, each reporting a pass/fail line.

Criteria 5 and 6 train real agents (about an hour on one core together);
everything else finishes in seconds.
"""
import statistics
import time
from pathlib import Path

import numpy as np
import pytest

from reacherbench.agent import Agent, AgentConfig, Transition, her_relabel
from reacherbench.arm import forward_kinematics, ur5
from reacherbench.config import load_config_file
from reacherbench.env import CLOSE_BOX, FAR_BOX, EnvConfig, ReacherEnv, Unconstrained, ZHeight, contains
from reacherbench.harness import (
    Interrupted,
    RunRecord,
    TestSessionRecord,
    aggregate_runs,
    frozen_policy,
    oracle_policy,
    read_record,
    run_test_session,
    run_training,
)
from reacherbench.nn import grad_check, init_params, mlp_backward, mlp_forward, relative_error

from oracles import fk_oracle, kink_margin, numeric_grad, probe_rows, t_interval_oracle

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
REGIONS = {
    "unconstrained": Unconstrained(),
    "z-height 0.4": ZHeight(0.4),
    "close box": CLOSE_BOX,
    "far box": FAR_BOX,
}


def test_criterion_1_fk_oracle(criterion):
    arm = ur5()
    thetas = np.random.default_rng(2024).uniform(arm.lower, arm.upper, size=(1000, 6))
    want = np.array([fk_oracle(t) for t in thetas])
    t0 = time.perf_counter()
    got = np.array([forward_kinematics(arm, t) for t in thetas])
    elapsed = time.perf_counter() - t0
    err = float(np.abs(got - want).max())
    batch_err = float(np.abs(forward_kinematics(arm, thetas) - want).max())
    ok = err <= 1e-9 and batch_err <= 1e-9
    criterion(1, "FK oracle equivalence", ok,
              f"max |err| {err:.2e} m (batched {batch_err:.2e}), tol 1e-9, 1000 vectors in {elapsed:.2f} s")
    assert ok


def _chain_error(seed: int) -> float:
    rng = np.random.default_rng(1000 + seed)
    obs, act = int(rng.integers(3, 8)), int(rng.integers(1, 4))
    h1, h2 = (int(v) for v in rng.integers(3, 9, size=2))
    lo = -rng.uniform(0.5, 3.0, size=act)
    actor = init_params((obs, h1, h2, act), "actor", rng, lo, -lo, final_scale=0.5)
    critic = init_params((obs, h1, h2, 1), "critic", rng, extra_dim=act, inject_at=1, final_scale=0.5)

    def margin(row):
        a, actor_cache = mlp_forward(actor, row[None])
        return min(kink_margin(actor_cache), kink_margin(mlp_forward(critic, row[None], a)[1]))

    s = probe_rows(rng, 5, obs, margin)

    def objective(flat):
        saved = actor.flat()
        actor.set_flat(flat)
        q, _ = mlp_forward(critic, s, mlp_forward(actor, s)[0])
        actor.set_flat(saved)
        return float(q.mean())

    a, actor_cache = mlp_forward(actor, s)
    _, critic_cache = mlp_forward(critic, s, a)
    dq = mlp_backward(critic, critic_cache, np.full((5, 1), 1 / 5))
    g = mlp_backward(actor, actor_cache, dq.extra_grad)
    analytic = np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in g.param_grads])
    return float(relative_error(analytic, numeric_grad(objective, actor.flat(), h=1e-5)).max())


def test_criterion_2_gradients(criterion):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        sizes = tuple(int(v) for v in rng.integers(2, 9, size=int(rng.integers(3, 5))))
        lo = -rng.uniform(0.5, 2.0, size=sizes[-1])
        actor = init_params(sizes, "actor", rng, lo, -lo, final_scale=0.5)
        critic = init_params(sizes[:-1] + (1,), "critic", rng, extra_dim=2, inject_at=1, final_scale=0.5)
        x = probe_rows(rng, 4, sizes[0], lambda r: kink_margin(mlp_forward(actor, r[None])[1]))
        worst = max(worst, grad_check(actor, x, h=1e-5, seed=seed).max_rel_err)
        d = sizes[0]
        rows = probe_rows(rng, 4, d + 2, lambda r: kink_margin(mlp_forward(critic, r[None, :d], r[None, d:])[1]))
        x, extra = rows[:, :d], rows[:, d:]
        worst = max(worst, grad_check(critic, x, extra=extra, h=1e-5, seed=seed).max_rel_err)
        worst = max(worst, _chain_error(seed))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4
    criterion(2, "gradient verification", ok,
              f"max relative error {worst:.2e} over 10 actors, 10 critics, 10 actor-through-critic chains, "
              f"tol 1e-4, {elapsed:.1f} s")
    assert ok


def test_criterion_3_goal_feasibility(criterion):
    t0 = time.perf_counter()
    bad = {}
    for name, region in REGIONS.items():
        env = ReacherEnv(ur5(), EnvConfig(region=region, n_active=3))
        goals = env.sample_goals(10_000, np.random.default_rng(3))
        bad[name] = sum(
            not contains(region, g.position)
            or g.position.tobytes() != forward_kinematics(env.model, g.generator_theta).tobytes()
            for g in goals
        ) + (10_000 - len(goals))
    elapsed = time.perf_counter() - t0
    ok = not any(bad.values())
    criterion(3, "goal feasibility and containment", ok,
              f"violations per region {bad}, 10000 goals each, {elapsed:.1f} s")
    assert ok


def test_criterion_4_protocol_oracle(criterion):
    t0 = time.perf_counter()
    scores = {}
    for name, region in REGIONS.items():
        cfg = EnvConfig(region=region, n_active=3)
        scores[name] = run_test_session(oracle_policy, cfg, 100, np.random.default_rng(4)).successes
    frozen = run_test_session(frozen_policy, EnvConfig(region=FAR_BOX, n_active=3), 100, np.random.default_rng(4))
    elapsed = time.perf_counter() - t0
    ok = all(v == 100 for v in scores.values()) and frozen.successes == 0
    criterion(4, "protocol oracle", ok,
              f"oracle {scores}, frozen far box {frozen.successes}/100, {elapsed:.1f} s")
    assert ok


def _learning_runs(config_path: Path, tmp_path: Path) -> list[RunRecord]:
    cfg = load_config_file(config_path)
    return [run_training(cfg, seed, tmp_path / cfg.name) for seed in cfg.seeds]


@pytest.mark.slow
def test_criterion_5_learnability(criterion, tmp_path):
    t0 = time.perf_counter()
    cfg = load_config_file(CONFIGS / "unconstrained_2j.cfg")
    assert (cfg.network_profile, cfg.env.n_active, cfg.episodes, len(cfg.seeds)) == ("reduced", 2, 2000, 5)
    assert isinstance(cfg.env.region, Unconstrained)
    runs = _learning_runs(CONFIGS / "unconstrained_2j.cfg", tmp_path)
    best = [r.best for r in runs]
    hits = sum(b >= 80 for b in best)
    ok = hits >= 3
    criterion(5, "desk-scale learnability", ok,
              f"best session per seed {best}, {hits}/5 seeds reach 80 (need 3), {(time.perf_counter() - t0) / 60:.0f} min")
    assert ok


@pytest.mark.slow
def test_criterion_6_constraint_ordering(criterion, tmp_path):
    t0 = time.perf_counter()
    far = _learning_runs(CONFIGS / "farbox_3j.cfg", tmp_path)
    free = _learning_runs(CONFIGS / "unconstrained_3j.cfg", tmp_path)
    for runs in (far, free):
        assert len(runs) == 3
    far_med = statistics.median(r.best for r in far)
    free_med = statistics.median(r.best for r in free)
    ok = far_med - free_med >= 20
    criterion(6, "constraint-difficulty ordering", ok,
              f"far box best {[r.best for r in far]} (median {far_med}), unconstrained "
              f"{[r.best for r in free]} (median {free_med}), gap {far_med - free_med} (need 20), "
              f"{(time.perf_counter() - t0) / 60:.0f} min")
    assert ok


def _reward_oracle(ee, goal, a, eps):
    d = sum((float(e) - float(g)) ** 2 for e, g in zip(ee, goal)) ** 0.5
    return -d - sum(float(v) ** 2 for v in a) + (100.0 if d <= eps else 0.0)


def test_criterion_7_her(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    settings = [(2, Unconstrained()), (3, FAR_BOX), (3, CLOSE_BOX), (6, Unconstrained())]
    worst, bonus_ok, fill_ok, n_eps = 0.0, True, True, 0
    for k in range(100):
        n, region = settings[k % len(settings)]
        env = ReacherEnv(ur5(), EnvConfig(region=region, n_active=n, max_steps=int(rng.integers(1, 40))), seed=k)
        agent = Agent(env.obs_dim, env.lower, env.upper, AgentConfig(buffer_capacity=10_000), hidden=(4, 4), seed=k)
        obs = env.reset()
        episode = []
        while not env.done:
            a = rng.uniform(env.lower, env.upper)
            res = env.step(a)
            episode.append(Transition(obs, a, res.observation, res.reward, res.success))
            obs = res.observation
        tail = env.start[n:]
        final_ee = fk_oracle(np.concatenate([episode[-1].s_next[:n], tail]))
        relabelled = her_relabel(episode, env.config)
        for t, r in zip(episode, relabelled):
            ee = fk_oracle(np.concatenate([t.s_next[:n], tail]))
            worst = max(worst, abs(r.r - _reward_oracle(ee, final_ee, t.a, 0.1)))
        last = relabelled[-1]
        bonus_ok &= last.terminal and abs(last.r - (100.0 - float(episode[-1].a @ episode[-1].a))) < 1e-9
        before = len(agent.buffer)
        agent.push_episode(episode, env.config)
        fill_ok &= len(agent.buffer) - before == 2 * len(episode)
        n_eps += 1
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and bonus_ok and fill_ok
    criterion(7, "HER correctness", ok,
              f"{n_eps} episodes, max reward deviation {worst:.2e}, final bonus {'ok' if bonus_ok else 'MISSING'}, "
              f"fill +2L {'ok' if fill_ok else 'WRONG'}, {elapsed:.1f} s")
    assert ok


def test_criterion_8_determinism_and_resume(criterion, tmp_path):
    t0 = time.perf_counter()
    cfg = load_config_file(CONFIGS / "smoke.cfg")
    assert cfg.episodes == 200 and cfg.test_every == 100
    first = run_training(cfg, 0, tmp_path / "a")
    second = run_training(cfg, 0, tmp_path / "b")
    same = first == second and read_record(tmp_path / "a" / "run_seed0.jsonl") == read_record(
        tmp_path / "b" / "run_seed0.jsonl")
    with pytest.raises(Interrupted):
        run_training(cfg, 0, tmp_path / "c", stop_after_sessions=1)
    resumed = run_training(cfg, 0, tmp_path / "c")
    resumed_same = resumed == first and read_record(tmp_path / "c" / "run_seed0.jsonl") == first
    elapsed = time.perf_counter() - t0
    ok = same and resumed_same and len(first.sessions) == 2
    criterion(8, "determinism and resume", ok,
              f"repeat identical: {same}, resumed identical: {resumed_same}, sessions {first.successes}, "
              f"{elapsed:.0f} s")
    assert ok


def _records(table):
    """``table[run][session]`` of success counts -> RunRecords."""
    return [
        RunRecord("synthetic", k, 100, [TestSessionRecord(100 * (i + 1), int(v), 0.0) for i, v in enumerate(row)])
        for k, row in enumerate(table)
    ]


def test_criterion_9_aggregation(criterion):
    rng = np.random.default_rng(9)
    # interior values keep the intervals away from the [0, 100] clip
    sets = [np.array([[10], [20], [30], [40], [50]])]
    sets += [rng.integers(30, 71, size=(n, 12)) for n in (2, 3, 5, 5, 8)]
    t0 = time.perf_counter()
    curves = [aggregate_runs(_records(table)) for table in sets]
    flat = aggregate_runs(_records(np.full((5, 4), 37)))
    elapsed = time.perf_counter() - t0
    worst = 0.0
    for table, curve in zip(sets, curves):
        for point, values in zip(curve, table.T):
            want = t_interval_oracle(values.tolist())
            worst = max(worst, *(abs(g - w) for g, w in zip((point.mean, point.ci_low, point.ci_high), want)))
    zero_width = all(p.ci_low == p.ci_high == p.mean == 37 for p in flat)
    ok = worst <= 1e-9 and zero_width
    criterion(9, "aggregation oracle", ok,
              f"max deviation from mpmath oracle {worst:.2e} (tol 1e-9), zero-variance width 0: {zero_width}, "
              f"aggregation {elapsed * 1e3:.0f} ms")
    assert ok
