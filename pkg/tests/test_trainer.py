import json

import numpy as np
import pytest

from topodesign.agents import BackendError, HashEmbedder
from topodesign.config import ModelConfig, TrainConfig
from topodesign.designer import RefinedMatrix, design, init_params
from topodesign.errors import ConfigError
from topodesign.executor import Team
from topodesign.network import build_task_graph, make_anchor
from topodesign.numerics import Rng
from topodesign.tasks import generate_suite
from topodesign.trainer import (
    CHECKPOINT_VERSION,
    Adam,
    Checkpoint,
    CheckpointError,
    GradientError,
    advantages,
    bernoulli_log_prob,
    compute_gradient,
    compute_losses,
    load_checkpoint,
    reinforce_step,
    sample_episode,
    save_checkpoint,
    surrogate_loss,
    train,
)

from conftest import make_agents, make_team

SMALL = ModelConfig(d_hidden=8, d_latent=4, d_ffn=6)


def setup(n=4, dim=16, query="compute 3+4", seed=0, model=SMALL):
    g = build_task_graph(make_agents(n), query, model.anchor, HashEmbedder(dim))
    return g, init_params(dim, model, Rng(seed))


def episodes(g, p, cfg, utility_fn, seed=0, m=None):
    return [sample_episode(g, p, cfg, None, None, Rng(seed).child(k), utility_fn) for k in range(m or cfg.m_samples)]


def test_compute_losses_examples():
    a = make_anchor("chain", 3)
    z = np.eye(3)
    l_a, _ = compute_losses(a, RefinedMatrix(a.copy(), z, a.copy(), 3), a, 0.1)
    assert l_a == 0
    _, l_s = compute_losses(np.zeros((2, 2)), RefinedMatrix(np.zeros((2, 2)), np.eye(2), np.diag([1.0, 2.0]), 2), np.zeros((2, 2)), 0.1)
    assert abs(l_s - 0.3) < 1e-12


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.zeta, cfg.tau, cfg.m_samples, cfg.k_rounds, cfg.budget) == (0.1, 0.01, 10, 3, 40)
    assert cfg.rank_for(5) == 3 and cfg.rank_for(1) == 1


@pytest.mark.parametrize("kw", [dict(m_samples=0), dict(tau=0), dict(zeta=-1), dict(threshold=1), dict(rank_r=0), dict(budget=-1)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_log_prob_definition():
    p = np.array([[0, 0.8], [0.3, 0]])
    mask = np.array([[False, True], [False, False]])
    assert abs(bernoulli_log_prob(mask, p) - (np.log(0.8) + np.log(0.7))) < 1e-15


def test_episode_perfect_agents():
    g, p = setup(5)
    task = generate_suite(0, {"arith_easy": 1})[0]
    ep = sample_episode(g, p, TrainConfig(), task, make_team(5), Rng(0))
    assert ep.utility == 1.0 and ep.prompt_tokens > 0
    assert ep.log_prob == bernoulli_log_prob(ep.sampled_edges, ep.edge_probs)
    assert ep.topology.edge_set <= {(int(i), int(j)) for i, j in zip(*np.nonzero(ep.sampled_edges))}


def test_episode_empty_graph_likelihood():
    g, p = setup(4)
    ep = sample_episode(g, p, TrainConfig(zeta=100.0), None, None, Rng(0), lambda t: 0.0)
    assert not ep.sampled_edges.any()
    assert ep.log_prob == pytest.approx(12 * np.log1p(-1e-6), abs=1e-15)
    assert -1e-4 < ep.log_prob < 0


def test_zero_advantage_zeroes_policy_term():
    g, p = setup()
    cfg = TrainConfig(m_samples=4)
    eps = episodes(g, p, cfg, lambda t: 0.7)
    grad, info = compute_gradient(eps, g, p, cfg, regularize=False)
    assert info.policy_zero
    assert all(np.all(v == 0) for _, v in grad.items())
    full, _ = compute_gradient(eps, g, p, cfg)
    assert any(np.any(v != 0) for _, v in full.items())


def test_baseline_invariance():
    g, p = setup()
    cfg = TrainConfig(m_samples=6, tau=0.5)
    eps = episodes(g, p, cfg, lambda t: float(len(t.edges) % 2))
    shifted = [type(e)(**{**e.__dict__, "utility": e.utility + 4.0}) for e in eps]
    assert np.array_equal(advantages(eps, True), advantages(shifted, True))
    g1, _ = compute_gradient(eps, g, p, cfg, regularize=False)
    g2, _ = compute_gradient(shifted, g, p, cfg, regularize=False)
    assert g1.equals(g2)
    g3, _ = compute_gradient(shifted, g, p, TrainConfig(m_samples=6, tau=0.5, baseline=False), regularize=False)
    assert not g1.equals(g3)


@pytest.mark.parametrize("tau", [1.0, 0.05])
def test_gradient_matches_finite_differences(tau):
    g, p = setup(4, 16)
    cfg = TrainConfig(m_samples=4, tau=tau, baseline=False)
    eps = episodes(g, p, cfg, lambda t: len(t.edges) / 4)
    grad, info = compute_gradient(eps, g, p, cfg)
    rng = Rng(99)
    for name, arr in p.items():
        for _ in range(3):
            idx = tuple(int(rng.integers(0, d)) for d in arr.shape)

            def f(v):
                q = p.copy()
                getattr(q, name)[idx] = v
                return surrogate_loss(q, g, cfg, eps, info.reg_z)

            h = 1e-6
            fd = (f(arr[idx] + h) - f(arr[idx] - h)) / (2 * h)
            an = getattr(grad, name)[idx]
            assert abs(an - fd) <= 1e-4 * max(abs(an), abs(fd)) + 1e-9, (name, idx, an, fd)


def test_reinforce_step_rejects_non_finite():
    g, p = setup()
    cfg = TrainConfig(m_samples=3)
    eps = episodes(g, p, cfg, lambda t: float(len(t.edges) > 1))
    bad = p.copy()
    bad.ffn_w2[0, 0] = np.nan
    opt = Adam(0.01)
    with pytest.raises(GradientError):
        reinforce_step(eps, g, bad, cfg, opt)
    assert opt.t == 0 and np.isnan(bad.ffn_w2[0, 0])


def test_reinforce_step_moves_params():
    g, p = setup()
    cfg = TrainConfig(m_samples=4)
    new, info = reinforce_step(episodes(g, p, cfg, lambda t: float(len(t.edges) > 1)), g, p, cfg)
    assert not new.equals(p) and new.all_finite()
    assert info.l_anchor >= 0 and info.l_sparse >= 0


def test_reinforce_needs_episodes():
    g, p = setup()
    with pytest.raises(ValueError):
        compute_gradient([], g, p, TrainConfig())


def test_adam_first_step_is_lr_sign():
    p = init_params(4, SMALL, Rng(0))
    grad = p.zeros_like()
    grad.ffn_b2[:] = 3.0
    out = Adam(0.1).step(p, grad)
    assert out.ffn_b2[0] == pytest.approx(p.ffn_b2[0] - 0.1, abs=1e-9)
    assert np.array_equal(out.w_mu, p.w_mu)


def _small_run(budget=6, seed=0, **kw):
    team = make_team(4, {"arith_easy": 0.9, "arith_hard": 1.0})
    suite = generate_suite(seed, {"arith_easy": 3, "arith_hard": 3})
    cfg = TrainConfig(budget=budget, seed=seed, m_samples=3, **kw)
    return train(suite, team, HashEmbedder(32), cfg, SMALL), team, cfg


def test_train_budget_zero_returns_params():
    team = make_team(3)
    p0 = init_params(32, SMALL, Rng(5))
    p, log = train(generate_suite(0, {"arith_easy": 2}), team, HashEmbedder(32), TrainConfig(budget=0), SMALL, params=p0)
    assert p.equals(p0) and log.records == []


def test_train_deterministic():
    (p1, log1), _, _ = _small_run()
    (p2, log2), _, _ = _small_run()
    assert p1.equals(p2) and log1.to_jsonl() == log2.to_jsonl()


def test_train_log_records():
    (_, log), _, _ = _small_run(budget=4)
    lines = [json.loads(x) for x in log.to_jsonl().splitlines()]
    assert [r["query_index"] for r in lines] == [0, 1, 2, 3]
    assert set(lines[0]) == {"query_index", "mean_utility", "mean_edges", "l_anchor", "l_sparse"}


def test_train_empty_tasks():
    with pytest.raises(ValueError):
        train([], make_team(2), HashEmbedder(8), TrainConfig())


def test_train_drops_failed_episodes():
    class Flaky:
        def __init__(self, inner):
            self.inner, self.calls = inner, 0

        def respond(self, prompt, rng):
            self.calls += 1
            if self.calls % 7 == 0:
                raise BackendError("flaky")
            return self.inner.respond(prompt, rng)

    team = make_team(3)
    flaky = Team(team.agents, [Flaky(b) for b in team.backends], team.summarizer)
    p, log = train(generate_suite(0, {"arith_easy": 2}), flaky, HashEmbedder(16), TrainConfig(budget=3, m_samples=4), SMALL)
    assert p.all_finite() and len(log.records) == 3


def test_thousand_steps_stay_finite():
    team = make_team(5, {"arith_easy": 0.9, "arith_hard": 1.0, "choice": 0.9})
    suite = generate_suite(1, {"arith_easy": 10, "arith_hard": 10, "choice": 10})
    cfg = TrainConfig(budget=1000, m_samples=2, k_rounds=1, learning_rate=0.05)
    p, log = train(suite, team, HashEmbedder(64), cfg, SMALL)
    assert p.all_finite()
    assert all(r["l_anchor"] is not None and np.isfinite(r["l_anchor"]) for r in log.records)


def test_zeta_reduces_learned_edges():
    means = []
    for zeta in (0.0, 0.1, 1.0):
        edges = []
        for seed in range(5):
            (p, _), team, cfg = _small_run(budget=10, seed=seed, zeta=zeta)
            for task in generate_suite(seed + 50, {"arith_easy": 3, "arith_hard": 3}):
                g = build_task_graph(team.agents, task.query, "chain", HashEmbedder(32))
                edges.append(len(design(g, p, cfg, deterministic=True).topology.edges))
        means.append(np.mean(edges))
    assert means[0] >= means[1] >= means[2]


# -- checkpoints


def test_checkpoint_round_trip(tmp_path):
    p = init_params(16, SMALL, Rng(0))
    p.ffn_b2[0] = 0.1 + 0.2  # not representable in short decimal
    ck = Checkpoint(TrainConfig(seed=3), p, 3, 0, SMALL)
    save_checkpoint(tmp_path / "c.json", ck)
    back = load_checkpoint(tmp_path / "c.json")
    assert back.params.equals(p) and back.config == ck.config and back.model == SMALL
    assert back.version == CHECKPOINT_VERSION and back.rng_seed == 3
    assert back.to_json() == ck.to_json()


def test_checkpoint_version_guard(tmp_path):
    ck = Checkpoint(TrainConfig(), init_params(4, SMALL, Rng(0)), 0, 0, SMALL)
    doc = json.loads(ck.to_json())
    doc["version"] = "v0"
    (tmp_path / "old.json").write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "old.json")


def test_checkpoint_io_errors(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.json")
    (tmp_path / "junk.json").write_text("{not json")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.json")
    (tmp_path / "partial.json").write_text(json.dumps({"version": CHECKPOINT_VERSION}))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "partial.json")


def test_checkpoint_behavioral_equivalence(tmp_path):
    (p, _), team, cfg = _small_run(budget=10, tau=0.3)
    save_checkpoint(tmp_path / "c.json", Checkpoint(cfg, p, cfg.seed, 10, SMALL))
    back = load_checkpoint(tmp_path / "c.json")
    emb = HashEmbedder(32)
    for task in generate_suite(9, {"arith_easy": 3, "arith_hard": 2}):
        g = build_task_graph(team.agents, task.query, "chain", emb)
        assert design(g, p, cfg, deterministic=True).topology == design(g, back.params, back.config, deterministic=True).topology
