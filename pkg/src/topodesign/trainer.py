"""Policy-gradient training of the designer, with checkpoint persistence.

The per-query loss is

    L = -(1/M) * sum_m adv_m * log P(mask_m) + l_anchor + l_sparse

where ``P`` is the Bernoulli likelihood of the sampled edge mask under the
clamped refined matrix. Gradients are hand-derived. The refinement basis Z
is held fixed; the regulariser gradient with respect to the sketch is
``S - S_tilde`` because ``l_anchor + l_sparse`` is the minimum over W of the
refinement objective.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .agents import Embedder
from .config import ModelConfig, TrainConfig
from .designer import (
    CommTopology,
    DesignerParams,
    RefinedMatrix,
    SketchMatrix,
    draw_eps,
    ffn_forward,
    gcn_forward,
    gumbel_sigmoid,
    init_params,
    refine_with_basis,
)
from .executor import ExecutionError, Team
from .network import TaskGraph, build_task_graph
from .numerics import NumericError, Rng, svd, svt_vjp
from .tasks import SyntheticTask, evaluate

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-6
CHECKPOINT_VERSION = "gdesigner-ckpt-v1"


class GradientError(ArithmeticError):
    """A gradient or an updated parameter came out non-finite."""


class CheckpointError(IOError):
    """Unreadable or mismatched checkpoint file."""


def compute_losses(
    sketch: SketchMatrix | np.ndarray, refined: RefinedMatrix, anchor: np.ndarray, zeta: float
) -> tuple[float, float]:
    s = sketch.s if isinstance(sketch, SketchMatrix) else np.asarray(sketch)
    st = refined.s_tilde
    l_anchor = 0.5 * float(np.sum((s - st) ** 2)) + 0.5 * float(np.sum((anchor - st) ** 2))
    l_sparse = zeta * float(np.sum(svd(refined.w)[1]))
    return l_anchor, l_sparse


def clamp_probs(s_tilde: np.ndarray) -> np.ndarray:
    return np.clip(s_tilde, PROB_CLAMP, 1.0 - PROB_CLAMP)


def bernoulli_log_prob(mask: np.ndarray, probs: np.ndarray) -> float:
    off = ~np.eye(mask.shape[0], dtype=bool)
    p = probs[off]
    e = mask[off].astype(np.float64)
    return float(np.sum(e * np.log(p) + (1.0 - e) * np.log1p(-p)))


# --------------------------------------------------------------------------
# forward / backward


def forward(
    graph: TaskGraph,
    params: DesignerParams,
    config: TrainConfig,
    noise: np.ndarray,
    eps: np.ndarray,
    z: np.ndarray | None = None,
) -> dict:
    """One replayable pass through the designer.

    ``z=None`` computes the basis from the sketch; pass a stored basis to
    replay with Z frozen.
    """
    gc = gcn_forward(graph, params)
    h = gc["mu"] + np.exp(gc["log_sigma"]) * noise
    ff = ffn_forward(h, params)
    s = gumbel_sigmoid(ff["logits"], eps, config.tau)
    if z is None:
        z = svd(s)[0][:, : config.rank_for(graph.n)]
    s_tilde, w, b = refine_with_basis(s, graph.anchor, z, config.zeta)
    return dict(gc=gc, h=h, noise=noise, ff=ff, eps=eps, s=s, z=z, b=b, w=w, s_tilde=s_tilde)


def _grad_log_prob_wrt_s(tr: dict, mask: np.ndarray, zeta: float) -> np.ndarray:
    st = tr["s_tilde"]
    p = clamp_probs(st)
    inside = (st > PROB_CLAMP) & (st < 1.0 - PROB_CLAMP)
    e = mask.astype(np.float64)
    g_st = np.where(inside, e / p - (1.0 - e) / (1.0 - p), 0.0)
    np.fill_diagonal(g_st, 0.0)
    z = tr["z"]
    g_b = svt_vjp(tr["b"], zeta / 2.0, z.T @ g_st @ z)
    return 0.5 * (z @ g_b @ z.T)


def backward(tr: dict, params: DesignerParams, g_s: np.ndarray, tau: float) -> DesignerParams:
    """Parameter gradient given the gradient with respect to the sketch S."""
    s = tr["s"]
    g_y = g_s * s * (1.0 - s) / tau
    np.fill_diagonal(g_y, 0.0)

    ff = tr["ff"]
    h = tr["h"]
    n = s.shape[0]
    lat = h.shape[1]
    agents, task = h[:n], h[n]
    w1a, w1b, w1c = params.ffn_w1[:lat], params.ffn_w1[lat : 2 * lat], params.ffn_w1[2 * lat :]

    g = DesignerParams.zeros_like(params)
    g.ffn_b2[0] = g_y.sum()
    g.ffn_w2[:, 0] = np.einsum("ij,ijf->f", g_y, ff["act"])
    g_pre = g_y[:, :, None] * params.ffn_w2[:, 0][None, None, :] * (ff["pre"] > 0)
    rows = g_pre.sum(axis=1)
    cols = g_pre.sum(axis=0)
    tot = rows.sum(axis=0)
    g.ffn_b1[:] = tot
    g.ffn_w1[:lat] = agents.T @ rows
    g.ffn_w1[lat : 2 * lat] = agents.T @ cols
    g.ffn_w1[2 * lat :] = np.outer(task, tot)
    g_h = np.zeros_like(h)
    g_h[:n] = rows @ w1a.T + cols @ w1b.T
    g_h[n] = tot @ w1c.T

    gc = tr["gc"]
    g_mu = g_h
    g_ls = g_h * np.exp(gc["log_sigma"]) * tr["noise"]
    g_ls = np.where(np.abs(gc["ls_raw"]) < 10.0, g_ls, 0.0)
    g.w_mu[:] = gc["a_hidden"].T @ g_mu
    g.w_logsigma[:] = gc["a_hidden"].T @ g_ls
    g_a_hidden = g_mu @ params.w_mu.T + g_ls @ params.w_logsigma.T
    g_hidden = gc["a_hat"].T @ g_a_hidden
    g_pre1 = g_hidden * (gc["pre"] > 0)
    g.w_shared[:] = gc["ax"].T @ g_pre1
    return g


def _axpy(acc: DesignerParams, a: float, g: DesignerParams) -> None:
    for k, v in acc.items():
        v += a * getattr(g, k)


# --------------------------------------------------------------------------
# episodes


@dataclass
class EpisodeRecord:
    sampled_edges: np.ndarray  # bool (N, N)
    edge_probs: np.ndarray  # clamped s_tilde at sample time
    utility: float
    log_prob: float
    topology: CommTopology
    noise: np.ndarray
    eps: np.ndarray
    z: np.ndarray
    prompt_tokens: int = 0


def sample_episode(
    graph: TaskGraph,
    params: DesignerParams,
    config: TrainConfig,
    task: SyntheticTask | None,
    team: Team | None,
    rng: Rng,
    utility_fn: Callable[[CommTopology], float] | None = None,
) -> EpisodeRecord:
    """Sample a topology in stochastic mode, run it, and score it.

    ``utility_fn`` replaces the dialogue + evaluator when given.
    """
    n = graph.n
    lat = params.dims[2]
    noise = rng.child(0).normal((n + 1, lat))
    eps = draw_eps(n, rng.child(1), deterministic=False)
    tr = forward(graph, params, config, noise, eps)
    probs = clamp_probs(tr["s_tilde"])
    mask = rng.child(2).uniform((n, n)) < probs
    np.fill_diagonal(mask, False)
    topology = CommTopology.from_adjacency(mask, probs)
    tokens = 0
    if utility_fn is not None:
        utility = float(utility_fn(topology))
    else:
        transcript = team.run(topology, task.query, config.k_rounds, rng.child(3))
        utility = evaluate(transcript.final_answer, task)
        tokens = transcript.total_prompt_tokens
    return EpisodeRecord(
        mask, probs, utility, bernoulli_log_prob(mask, probs), topology, noise, eps, tr["z"], tokens
    )


def advantages(episodes: list[EpisodeRecord], baseline: bool) -> np.ndarray:
    u = np.array([e.utility for e in episodes], dtype=np.float64)
    return u - u.mean() if baseline else u


def deterministic_trace(graph: TaskGraph, params: DesignerParams, config: TrainConfig, z=None) -> dict:
    lat = params.dims[2]
    return forward(graph, params, config, np.zeros((graph.n + 1, lat)), np.full((graph.n, graph.n), 0.5), z)


def surrogate_loss(
    params: DesignerParams,
    graph: TaskGraph,
    config: TrainConfig,
    episodes: list[EpisodeRecord],
    reg_z: np.ndarray | None,
    adv: np.ndarray | None = None,
) -> float:
    """Scalar whose gradient :func:`compute_gradient` returns, with every
    random draw and both refinement bases frozen."""
    if adv is None:
        adv = advantages(episodes, config.baseline)
    total = 0.0
    for a, ep in zip(adv, episodes):
        tr = forward(graph, params, config, ep.noise, ep.eps, ep.z)
        total -= a / len(episodes) * bernoulli_log_prob(ep.sampled_edges, clamp_probs(tr["s_tilde"]))
    if reg_z is not None:
        tr = deterministic_trace(graph, params, config, reg_z)
        l_a, l_s = compute_losses(tr["s"], RefinedMatrix(tr["s_tilde"], tr["z"], tr["w"], tr["z"].shape[1]), graph.anchor, config.zeta)
        total += l_a + l_s
    return total


@dataclass
class GradientInfo:
    l_anchor: float
    l_sparse: float
    reg_z: np.ndarray
    policy_zero: bool


def compute_gradient(
    episodes: list[EpisodeRecord],
    graph: TaskGraph,
    params: DesignerParams,
    config: TrainConfig,
    regularize: bool = True,
    adv: np.ndarray | None = None,
) -> tuple[DesignerParams, GradientInfo]:
    if not episodes:
        raise ValueError("need at least one episode")
    if adv is None:
        adv = advantages(episodes, config.baseline)
    grad = params.zeros_like()
    for a, ep in zip(adv, episodes):
        if a == 0.0:
            continue
        tr = forward(graph, params, config, ep.noise, ep.eps, ep.z)
        g_s = _grad_log_prob_wrt_s(tr, ep.sampled_edges, config.zeta)
        _axpy(grad, -a / len(episodes), backward(tr, params, g_s, config.tau))
    l_a = l_s = 0.0
    tr = deterministic_trace(graph, params, config)
    if regularize:
        l_a, l_s = compute_losses(tr["s"], RefinedMatrix(tr["s_tilde"], tr["z"], tr["w"], tr["z"].shape[1]), graph.anchor, config.zeta)
        _axpy(grad, 1.0, backward(tr, params, tr["s"] - tr["s_tilde"], config.tau))
    return grad, GradientInfo(l_a, l_s, tr["z"], bool(np.all(adv == 0.0)))


class Adam:
    """Adaptive moment estimation (beta1 0.9, beta2 0.999, eps 1e-8)."""

    def __init__(self, lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: DesignerParams, grad: DesignerParams) -> DesignerParams:
        t = self.t + 1
        out = params.copy()
        new_m, new_v = {}, {}
        for k, g in grad.items():
            m = self.beta1 * self.m.get(k, 0.0) + (1 - self.beta1) * g
            v = self.beta2 * self.v.get(k, 0.0) + (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            setattr(out, k, getattr(params, k) - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
            new_m[k], new_v[k] = m, v
        if not out.all_finite():
            raise GradientError("parameter update produced non-finite values")
        self.t, self.m, self.v = t, new_m, new_v
        return out


def reinforce_step(
    episodes: list[EpisodeRecord],
    graph: TaskGraph,
    params: DesignerParams,
    config: TrainConfig,
    optimizer: Adam | None = None,
) -> tuple[DesignerParams, GradientInfo]:
    """One optimizer update; raises :class:`GradientError` and leaves the
    parameters (and optimizer state) untouched on non-finite gradients."""
    try:
        grad, info = compute_gradient(episodes, graph, params, config)
    except NumericError as exc:
        raise GradientError(f"gradient computation failed: {exc}") from exc
    bad = [k for k, v in grad.items() if not np.all(np.isfinite(v))]
    if bad:
        raise GradientError(f"non-finite gradient in {', '.join(bad)}")
    optimizer = optimizer or Adam(config.learning_rate)
    return optimizer.step(params, grad), info


# --------------------------------------------------------------------------
# training loop


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


class GraphCache:
    def __init__(self, team: Team, embedder: Embedder, anchor: str):
        self.team, self.embedder, self.anchor = team, embedder, anchor
        self._graphs: dict[str, TaskGraph] = {}

    def __call__(self, query: str) -> TaskGraph:
        if query not in self._graphs:
            self._graphs[query] = build_task_graph(self.team.agents, query, self.anchor, self.embedder)
        return self._graphs[query]


def train(
    tasks: list[SyntheticTask],
    team: Team,
    embedder: Embedder,
    config: TrainConfig,
    model: ModelConfig = ModelConfig(),
    params: DesignerParams | None = None,
    rng: Rng | None = None,
) -> tuple[DesignerParams, TrainLog]:
    """Cycle through ``tasks`` for ``config.budget`` queries, one update each."""
    if not tasks:
        raise ValueError("need at least one task")
    rng = rng or Rng(config.seed)
    if params is None:
        params = init_params(embedder.dim, model, rng.child(0))
    graphs = GraphCache(team, embedder, model.anchor)
    opt = Adam(config.learning_rate)
    history = TrainLog()
    for q in range(config.budget):
        task = tasks[q % len(tasks)]
        graph = graphs(task.query)
        qrng = rng.child(1, q)
        episodes = []
        for m in range(config.m_samples):
            try:
                episodes.append(sample_episode(graph, params, config, task, team, qrng.child(m)))
            except ExecutionError as exc:
                log.warning("query %d episode %d dropped: %s", q, m, exc)
        record = {"query_index": q, "mean_utility": None, "mean_edges": None, "l_anchor": None, "l_sparse": None}
        if episodes:
            record["mean_utility"] = float(np.mean([e.utility for e in episodes]))
            record["mean_edges"] = float(np.mean([len(e.topology.edges) for e in episodes]))
            try:
                params, info = reinforce_step(episodes, graph, params, config, opt)
                record["l_anchor"], record["l_sparse"] = info.l_anchor, info.l_sparse
            except GradientError as exc:
                log.warning("query %d step skipped: %s", q, exc)
        history.records.append(record)
    return params, history


# --------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    config: TrainConfig
    params: DesignerParams
    rng_seed: int
    trained_queries: int
    model: ModelConfig = ModelConfig()
    version: str = CHECKPOINT_VERSION

    def to_json(self) -> str:
        doc = {
            "version": self.version,
            "config": self.config.to_dict(),
            "model": asdict(self.model),
            "params": {k: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]} for k, v in self.params.items()},
            "rng_seed": self.rng_seed,
            "trained_queries": self.trained_queries,
        }
        return json.dumps(doc, sort_keys=True, indent=1)


def save_checkpoint(path, checkpoint: Checkpoint) -> None:
    Path(path).write_text(checkpoint.to_json())


def load_checkpoint(path) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    except ValueError as exc:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {doc.get('version')!r} is not {CHECKPOINT_VERSION!r}")
    try:
        arrays = {
            k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in doc["params"].items()
        }
        params = DesignerParams(**arrays)
        return Checkpoint(
            config=TrainConfig(**doc["config"]),
            params=params,
            rng_seed=int(doc["rng_seed"]),
            trained_queries=int(doc["trained_queries"]),
            model=ModelConfig(**doc["model"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint {path} has an invalid schema: {exc}") from exc
