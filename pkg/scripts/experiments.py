"""Desk-scale experiments: learning signal, task adaptivity, robustness,
token cost ordering and reproducibility.

    python scripts/experiments.py bandit --seeds 0 1 2 3 4
    python scripts/experiments.py adaptivity --seeds 0 1 2 3 4
    python scripts/experiments.py robustness --seeds 0 1 2 3 4
    python scripts/experiments.py cost
    python scripts/experiments.py reproduce

Every experiment uses mock agents only and prints one line per seed.
"""

from __future__ import annotations

import argparse
import contextlib
import io
import json
import tempfile
from dataclasses import dataclass
from pathlib import Path

from topodesign.agents import AgentSpec, AttackSpec, HashEmbedder, MockAgent, MockSummarizer
from topodesign.cli import main as cli_main
from topodesign.config import ModelConfig, TrainConfig
from topodesign.designer import design, init_params
from topodesign.executor import Team
from topodesign.harness import baseline_topologies, designer_topologies, run_attack, run_baseline, run_designer
from topodesign.network import build_task_graph
from topodesign.numerics import Rng
from topodesign.trainer import Adam, reinforce_step, sample_episode, train
from topodesign.tasks import generate_suite

ROLES = ["Math Solver", "Mathematical Analyst", "Programming Expert", "Inspector", "Knowledge Expert"]
SKILLS = {"arith_easy": 0.95, "arith_hard": 1.0, "choice": 0.95}
ROOT = Path(__file__).resolve().parent.parent


def mock_team(n: int = 5, skills: dict | None = None) -> Team:
    agents = [AgentSpec(i, "mock", ROLES[i % len(ROLES)]) for i in range(n)]
    backends = [MockAgent(a.id, a.role, SKILLS if skills is None else skills) for a in agents]
    return Team(agents, backends, MockSummarizer())


# -- learning signal


def bandit(seed: int, steps: int = 500, tau: float = 0.1, lr: float = 0.05) -> tuple[int | None, float]:
    """Two agents; utility 1 iff edge 0 -> 1 is sampled.

    Returns the first step at which the deterministic-mode probability of
    that edge exceeds 0.9 (None if never) and the final probability.
    """
    emb = HashEmbedder()
    agents = [AgentSpec(i, "mock", ROLES[i]) for i in range(2)]
    graph = build_task_graph(agents, "compute 3+4", "chain", emb)
    cfg = TrainConfig(tau=tau, learning_rate=lr, rank_r=2, seed=seed)
    rng = Rng(seed)
    params = init_params(emb.dim, ModelConfig(), rng.child(0))
    opt = Adam(lr)
    hit, prob = None, 0.0
    reward = lambda topo: float((0, 1) in topo.edge_set)  # noqa: E731
    for step in range(steps):
        eps = [sample_episode(graph, params, cfg, None, None, rng.child(1, step, m), reward) for m in range(cfg.m_samples)]
        params, _ = reinforce_step(eps, graph, params, cfg, opt)
        prob = float(design(graph, params, cfg, deterministic=True).refined.probs()[0, 1])
        if hit is None and prob > 0.9:
            hit = step + 1
    return hit, prob


# -- adaptivity


@dataclass
class Trained:
    params: object
    team: Team
    emb: HashEmbedder
    cfg: TrainConfig
    model: ModelConfig


def train_arith(seed: int, budget: int = 40, **overrides) -> Trained:
    team, emb = mock_team(), HashEmbedder()
    cfg = TrainConfig(seed=seed, budget=budget, **overrides)
    suite = generate_suite(seed, {"arith_easy": 20, "arith_hard": 20})
    params, _ = train(suite, team, emb, cfg, ModelConfig())
    return Trained(params, team, emb, cfg, ModelConfig())


def adaptivity(seed: int) -> tuple[float, float, float]:
    """Mean designed edges on easy and hard test tasks, and test utility."""
    t = train_arith(seed)
    test = generate_suite(seed + 100, {"arith_easy": 20, "arith_hard": 20})
    rep = run_designer(t.params, test, t.team, t.emb, t.cfg, t.model)
    return rep.edges_by_category["arith_easy"], rep.edges_by_category["arith_hard"], rep.mean_utility


# -- robustness


def robustness(seed: int, target: int = 0) -> tuple[float, float, float]:
    """Utility drop of the trained designer and of the complete graph under
    an attack on one agent; also returns the designer's mean edge count."""
    team, emb = mock_team(), HashEmbedder()
    cfg = TrainConfig(seed=seed)
    params, _ = train(generate_suite(seed, {"choice": 40}), team, emb, cfg)
    test = generate_suite(seed + 100, {"choice": 40})
    attack = AttackSpec(target)
    fn = designer_topologies(params, team, emb, cfg)
    d_clean, d_hit = run_attack("designer", test, team, fn, attack, cfg.k_rounds, seed)
    _, c_hit = run_attack("complete", test, team, baseline_topologies("complete", team.n, seed), attack, cfg.k_rounds, seed)
    return d_hit.robustness_drop, c_hit.robustness_drop, d_clean.mean_edges


# -- cost ordering


def cost(seed: int = 0) -> dict[str, int]:
    """Prompt tokens on the easy test tasks for chain, designer, complete."""
    t = train_arith(seed)
    easy = generate_suite(seed + 100, {"arith_easy": 20})
    out = {k: run_baseline(k, easy, t.team, t.cfg).total_prompt_tokens for k in ("chain", "complete")}
    rep = run_designer(t.params, easy, t.team, t.emb, t.cfg, t.model)
    out["designer"] = rep.total_prompt_tokens
    out["designer_edges"] = rep.mean_edges
    return out


# -- reproducibility


def reproduce(config: Path = ROOT / "configs" / "mock5.json") -> bool:
    """Train and bench twice from the same config; compare output bytes."""
    blobs = []
    with tempfile.TemporaryDirectory() as tmp:
        for run in ("a", "b"):
            d = Path(tmp) / run
            d.mkdir()
            ck = d / "ck.json"
            with contextlib.redirect_stdout(io.StringIO()):
                cli_main(["train", "--config", str(config), "--out", str(ck)])
                cli_main(["bench", "--config", str(config), "--checkpoint", str(ck), "--out", str(d / "bench")])
            files = sorted(p for p in d.rglob("*") if p.is_file())
            blobs.append({str(p.relative_to(d)): p.read_bytes() for p in files})
    return blobs[0] == blobs[1] and len(blobs[0]) > 3


def _main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("experiment", choices=["bandit", "adaptivity", "robustness", "cost", "reproduce"])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    args = p.parse_args()
    if args.experiment == "cost":
        print(json.dumps(cost(args.seeds[0])))
        return
    if args.experiment == "reproduce":
        print("byte-identical:", reproduce())
        return
    for seed in args.seeds:
        if args.experiment == "bandit":
            hit, prob = bandit(seed)
            print(f"seed {seed}: first step above 0.9 = {hit}, final p = {prob:.4f}", flush=True)
        elif args.experiment == "adaptivity":
            e, h, u = adaptivity(seed)
            print(f"seed {seed}: edges easy {e:.2f} hard {h:.2f} utility {u:.3f}", flush=True)
        else:
            d, c, edges = robustness(seed)
            print(f"seed {seed}: drop designer {d:.3f} complete {c:.3f} (designer edges {edges:.2f})", flush=True)


if __name__ == "__main__":
    _main()
