"""Benchmark sweeps, MACP reporting, robustness runs and DOT export."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .agents import AgentSpec, AttackSpec, Embedder
from .config import ModelConfig, TrainConfig
from .designer import CommTopology, DesignerParams, design
from .errors import ConfigError
from .executor import Team
from .network import ANCHOR_KINDS, build_task_graph, make_anchor
from .numerics import Rng
from .tasks import SyntheticTask, evaluate

log = logging.getLogger(__name__)

TopologyFn = Callable[[int, SyntheticTask], CommTopology]


@dataclass
class BenchReport:
    """Aggregate metrics of one method on one suite.

    ``mean_edges`` counts edges of the executed (acyclic) topology;
    ``mean_raw_edges`` counts them before cycle breaking.
    """

    method: str
    mean_utility: float
    mean_edges: float
    total_prompt_tokens: int
    total_completion_tokens: int
    robustness_drop: float | None = None
    beta1: float = 0.01
    beta2: float = 1.0
    mean_raw_edges: float = 0.0
    n_tasks: int = 0
    edges_by_category: dict[str, float] = field(default_factory=dict)
    utility_by_category: dict[str, float] = field(default_factory=dict)

    @property
    def macp_score(self) -> float:
        drop = 0.0 if self.robustness_drop is None else self.robustness_drop
        return -self.mean_utility + self.beta1 * self.mean_edges + self.beta2 * drop

    def to_dict(self) -> dict:
        d = asdict(self)
        d["macp_score"] = self.macp_score
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    CSV_FIELDS = (
        "method", "mean_utility", "mean_edges", "mean_raw_edges", "total_prompt_tokens",
        "total_completion_tokens", "robustness_drop", "macp_score", "n_tasks",
    )

    def csv_row(self) -> dict:
        d = self.to_dict()
        return {k: ("" if d[k] is None else d[k]) for k in self.CSV_FIELDS}


def reports_to_csv(reports: list[BenchReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BenchReport.CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def fixed_topology(kind: str, n: int, rng: Rng | None = None) -> tuple[CommTopology, int]:
    """A baseline structure made acyclic, together with its raw edge count."""
    a = make_anchor(kind, n, rng)
    return CommTopology.from_adjacency(a), int(a.sum())


def run_suite(
    method: str,
    suite: list[SyntheticTask],
    team: Team,
    topology_fn: Callable[[int, SyntheticTask], tuple[CommTopology, int]],
    k_rounds: int = 3,
    seed: int = 0,
    attack: AttackSpec | None = None,
    beta1: float = 0.01,
    beta2: float = 1.0,
    transcripts: list | None = None,
) -> BenchReport:
    """Run every task once; task ``k`` uses dialogue stream ``Rng(seed).child(k)``."""
    root = Rng(seed)
    utils, edges, raw = [], [], []
    by_cat_e: dict[str, list[int]] = {}
    by_cat_u: dict[str, list[float]] = {}
    prompt_tokens = completion_tokens = 0
    for k, task in enumerate(suite):
        topology, n_raw = topology_fn(k, task)
        tr = team.run(topology, task.query, k_rounds, root.child(k), attack)
        u = evaluate(tr.final_answer, task)
        utils.append(u)
        edges.append(len(topology.edges))
        raw.append(n_raw)
        by_cat_e.setdefault(task.category, []).append(len(topology.edges))
        by_cat_u.setdefault(task.category, []).append(u)
        prompt_tokens += tr.total_prompt_tokens
        completion_tokens += tr.total_completion_tokens
        if transcripts is not None:
            transcripts.append(tr)
    mean = lambda xs: float(np.mean(xs)) if xs else 0.0  # noqa: E731
    return BenchReport(
        method=method,
        mean_utility=mean(utils),
        mean_edges=mean(edges),
        total_prompt_tokens=prompt_tokens,
        total_completion_tokens=completion_tokens,
        beta1=beta1,
        beta2=beta2,
        mean_raw_edges=mean(raw),
        n_tasks=len(suite),
        edges_by_category={c: mean(v) for c, v in sorted(by_cat_e.items())},
        utility_by_category={c: mean(v) for c, v in sorted(by_cat_u.items())},
    )


def baseline_topologies(kind: str, n: int, seed: int = 0):
    if kind not in ANCHOR_KINDS:
        raise ConfigError(f"unknown baseline {kind!r}; expected one of {ANCHOR_KINDS}")
    fixed = None if kind == "random" else fixed_topology(kind, n)
    root = Rng(seed).child(0xBA5E)

    def topology_fn(k: int, task: SyntheticTask):
        # the random baseline draws a fresh graph per task
        return fixed if fixed is not None else fixed_topology(kind, n, root.child(k))

    return topology_fn


def run_baseline(
    kind: str,
    suite: list[SyntheticTask],
    team: Team,
    config: TrainConfig = TrainConfig(),
    seed: int | None = None,
    attack: AttackSpec | None = None,
) -> BenchReport:
    seed = config.seed if seed is None else seed
    return run_suite(
        kind, suite, team, baseline_topologies(kind, team.n, seed), config.k_rounds, seed, attack,
        config.beta1_cost, config.beta2_robust,
    )


def designer_topologies(
    params: DesignerParams, team: Team, embedder: Embedder, config: TrainConfig, model: ModelConfig = ModelConfig()
):
    graphs: dict[str, object] = {}

    def topology_fn(k: int, task: SyntheticTask):
        if task.query not in graphs:
            graphs[task.query] = build_task_graph(team.agents, task.query, model.anchor, embedder)
        topo = design(graphs[task.query], params, config, deterministic=True).topology
        return topo, len(topo.edges)

    return topology_fn


def run_designer(
    params: DesignerParams,
    suite: list[SyntheticTask],
    team: Team,
    embedder: Embedder,
    config: TrainConfig,
    model: ModelConfig = ModelConfig(),
    seed: int | None = None,
    attack: AttackSpec | None = None,
    method: str = "designer",
) -> BenchReport:
    """Deterministic-mode designs, one per task, run and scored."""
    seed = config.seed if seed is None else seed
    return run_suite(
        method, suite, team, designer_topologies(params, team, embedder, config, model), config.k_rounds,
        seed, attack, config.beta1_cost, config.beta2_robust,
    )


def run_attack(
    method: str,
    suite: list[SyntheticTask],
    team: Team,
    topology_fn,
    attack: AttackSpec,
    k_rounds: int = 3,
    seed: int = 0,
    beta1: float = 0.01,
    beta2: float = 1.0,
) -> tuple[BenchReport, BenchReport]:
    """Clean and attacked runs over identical topologies and dialogue streams."""
    if not 0 <= attack.target_agent < team.n:
        raise ConfigError(f"attack target {attack.target_agent} out of range for {team.n} agents")
    clean = run_suite(method, suite, team, topology_fn, k_rounds, seed, None, beta1, beta2)
    attacked = run_suite(method, suite, team, topology_fn, k_rounds, seed, attack, beta1, beta2)
    attacked.robustness_drop = clean.mean_utility - attacked.mean_utility
    return clean, attacked


def to_dot(topology: CommTopology, agents: list[AgentSpec]) -> str:
    lines = ["digraph communication {"]
    for a in agents:
        label = f"{a.id}: {a.role}".replace("\\", "\\\\").replace('"', '\\"')
        lines.append(f'  {a.id} [label="{label}"];')
    for i, j, w in topology.edges:
        lines.append(f'  {i} -> {j} [label="{w:.2f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_dot(topology: CommTopology, agents: list[AgentSpec], path) -> Path:
    path = Path(path)
    path.write_text(to_dot(topology, agents))
    return path
