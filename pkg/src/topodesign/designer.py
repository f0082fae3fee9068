"""Variational graph auto-encoder that designs communication topologies.

Pipeline: two-layer GCN encoder -> reparameterised latent sample ->
Gumbel-sigmoid sketch of pairwise edges -> low-rank, anchor-regularised,
nuclear-norm-shrunk refinement -> thresholded DAG.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from .config import ModelConfig, TrainConfig
from .errors import ConfigError
from .network import TaskGraph
from .numerics import Rng, logit, relu, sigmoid, svd, svt

LOG_SIGMA_CLAMP = 10.0
EPS_CLAMP = 1e-10


@dataclass
class DesignerParams:
    w_shared: np.ndarray  # (D, d_hidden)
    w_mu: np.ndarray  # (d_hidden, d_latent)
    w_logsigma: np.ndarray  # (d_hidden, d_latent)
    ffn_w1: np.ndarray  # (3 * d_latent, d_ffn)
    ffn_b1: np.ndarray  # (d_ffn,)
    ffn_w2: np.ndarray  # (d_ffn, 1)
    ffn_b2: np.ndarray  # (1,), the scalar output bias

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def items(self):
        for name in self.names():
            yield name, getattr(self, name)

    def copy(self) -> "DesignerParams":
        return DesignerParams(**{k: v.copy() for k, v in self.items()})

    def zeros_like(self) -> "DesignerParams":
        return DesignerParams(**{k: np.zeros_like(v) for k, v in self.items()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for _, v in self.items())

    def equals(self, other: "DesignerParams") -> bool:
        return all(np.array_equal(v, getattr(other, k)) for k, v in self.items())

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """(D, d_hidden, d_latent, d_ffn)."""
        return (self.w_shared.shape[0], self.w_shared.shape[1], self.w_mu.shape[1], self.ffn_w1.shape[1])


def _glorot(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return (2.0 * rng.uniform((fan_in, fan_out)) - 1.0) * bound


def init_params(dim: int, model: ModelConfig, rng: Rng) -> DesignerParams:
    h, lat, f = model.d_hidden, model.d_latent, model.d_ffn
    return DesignerParams(
        w_shared=_glorot(rng, dim, h),
        w_mu=_glorot(rng, h, lat),
        w_logsigma=_glorot(rng, h, lat),
        ffn_w1=_glorot(rng, 3 * lat, f),
        ffn_b1=np.zeros(f),
        ffn_w2=_glorot(rng, f, 1),
        ffn_b2=np.zeros(1),
    )


class LatentState(NamedTuple):
    mu: np.ndarray
    log_sigma: np.ndarray
    h: np.ndarray
    noise: np.ndarray
    task_row_index: int


class SketchMatrix(NamedTuple):
    s: np.ndarray
    logits: np.ndarray
    noise: np.ndarray


class RefinedMatrix(NamedTuple):
    """``s_tilde = z @ w @ z.T`` exactly; use :meth:`probs` for the
    [0, 1]-clamped edge weights."""

    s_tilde: np.ndarray
    z: np.ndarray
    w: np.ndarray
    rank_r: int

    def probs(self) -> np.ndarray:
        return np.clip(self.s_tilde, 0.0, 1.0)


@dataclass(frozen=True)
class CommTopology:
    n: int
    edges: tuple[tuple[int, int, float], ...]

    @property
    def edge_set(self) -> set[tuple[int, int]]:
        return {(i, j) for i, j, _ in self.edges}

    def in_neighbors(self, j: int) -> list[int]:
        return sorted(i for i, k, _ in self.edges if k == j)

    def out_degree(self, i: int) -> int:
        return sum(1 for k, _, _ in self.edges if k == i)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j, _ in self.edges:
            a[i, j] = 1
        return a

    @classmethod
    def from_adjacency(cls, a: np.ndarray, weights: np.ndarray | None = None) -> "CommTopology":
        n = a.shape[0]
        w = np.ones_like(a, dtype=np.float64) if weights is None else weights
        edges = {(i, j): float(w[i, j]) for i in range(n) for j in range(n) if i != j and a[i, j]}
        return cls(n, break_cycles(n, edges))


def normalized_adjacency(augmented: np.ndarray) -> np.ndarray:
    sym = np.maximum(augmented, augmented.T)
    a = sym + np.eye(sym.shape[0])
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return a * d[:, None] * d[None, :]


def _check_dims(graph: TaskGraph, params: DesignerParams) -> None:
    d, hid, lat, ffn = params.dims
    if graph.agent_features.shape[1] != d or graph.task_feature.shape != (d,):
        raise ConfigError(f"feature dimension {graph.agent_features.shape[1]} does not match params ({d})")
    ok = (
        params.w_mu.shape == (hid, lat)
        and params.w_logsigma.shape == (hid, lat)
        and params.ffn_w1.shape == (3 * lat, ffn)
        and params.ffn_b1.shape == (ffn,)
        and params.ffn_w2.shape == (ffn, 1)
        and params.ffn_b2.shape == (1,)
    )
    if not ok:
        raise ConfigError("designer parameter shapes are inconsistent")


def gcn_forward(graph: TaskGraph, params: DesignerParams) -> dict:
    """Encoder forward pass keeping the intermediates needed for backprop."""
    _check_dims(graph, params)
    a_hat = normalized_adjacency(graph.augmented_anchor)
    x = graph.features
    ax = a_hat @ x
    pre = ax @ params.w_shared
    hidden = relu(pre)
    a_hidden = a_hat @ hidden
    mu = a_hidden @ params.w_mu
    ls_raw = a_hidden @ params.w_logsigma
    log_sigma = np.clip(ls_raw, -LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP)
    return dict(a_hat=a_hat, ax=ax, pre=pre, hidden=hidden, a_hidden=a_hidden, mu=mu, ls_raw=ls_raw, log_sigma=log_sigma)


def gcn_encode(graph: TaskGraph, params: DesignerParams) -> tuple[np.ndarray, np.ndarray]:
    c = gcn_forward(graph, params)
    return c["mu"], c["log_sigma"]


def sample_latent(mu: np.ndarray, log_sigma: np.ndarray, rng: Rng | None, noise: np.ndarray | None = None) -> LatentState:
    """Reparameterised draw ``h = mu + exp(log_sigma) * noise``.

    Pass ``noise`` explicitly to replay a draw; ``rng=None`` without noise
    gives the mean (``noise = 0``).
    """
    if mu.shape != log_sigma.shape:
        raise ValueError("mu and log_sigma shapes differ")
    if noise is None:
        noise = np.zeros_like(mu) if rng is None else rng.normal(mu.shape)
    h = mu + np.exp(log_sigma) * noise
    return LatentState(mu, log_sigma, h, noise, mu.shape[0] - 1)


def ffn_forward(h: np.ndarray, params: DesignerParams) -> dict:
    """Edge logits ``logits[i, j] = FFN([h_i, h_j, h_task])`` for all pairs."""
    n = h.shape[0] - 1
    lat = h.shape[1]
    w1a, w1b, w1c = params.ffn_w1[:lat], params.ffn_w1[lat : 2 * lat], params.ffn_w1[2 * lat :]
    agents, task = h[:n], h[n]
    pre = (agents @ w1a)[:, None, :] + (agents @ w1b)[None, :, :] + (task @ w1c + params.ffn_b1)
    act = relu(pre)
    logits = act @ params.ffn_w2[:, 0] + params.ffn_b2[0]
    return dict(pre=pre, act=act, logits=logits)


def gumbel_sigmoid(logits: np.ndarray, eps: np.ndarray, tau: float) -> np.ndarray:
    s = sigmoid((logit(eps) + logits) / tau)
    np.fill_diagonal(s, 0.0)
    return s


def draw_eps(n: int, rng: Rng | None, deterministic: bool) -> np.ndarray:
    if deterministic:
        return np.full((n, n), 0.5)
    return np.clip(rng.uniform((n, n)), EPS_CLAMP, 1.0 - EPS_CLAMP)


def sketch_edges(
    latent: LatentState,
    params: DesignerParams,
    tau: float,
    rng: Rng | None,
    deterministic: bool = False,
    eps: np.ndarray | None = None,
) -> SketchMatrix:
    if not tau > 0:
        raise ValueError("tau must be positive")
    logits = ffn_forward(latent.h, params)["logits"]
    n = logits.shape[0]
    if eps is None:
        eps = draw_eps(n, rng, deterministic)
    return SketchMatrix(gumbel_sigmoid(logits, eps, tau), logits, eps)


def refine_with_basis(s: np.ndarray, anchor: np.ndarray, z: np.ndarray, zeta: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form minimiser over W for a fixed orthonormal basis ``z``.

    Returns ``(s_tilde, w, b)`` where ``b = z.T @ ((s + anchor) / 2) @ z`` is
    the matrix that gets soft-thresholded.
    """
    b = z.T @ (0.5 * (s + anchor)) @ z
    w = svt(b, zeta / 2.0)
    return z @ w @ z.T, w, b


def refine_low_rank(sketch: SketchMatrix | np.ndarray, anchor: np.ndarray, r: int, zeta: float) -> RefinedMatrix:
    s = sketch.s if isinstance(sketch, SketchMatrix) else np.asarray(sketch, dtype=np.float64)
    n = s.shape[0]
    if not 1 <= r <= n:
        raise ConfigError(f"rank must lie in [1, {n}], got {r}")
    if zeta < 0:
        raise ConfigError("zeta must be non-negative")
    if anchor.shape != s.shape:
        raise ConfigError("anchor must be the N x N (non-augmented) adjacency")
    z = svd(s)[0][:, :r]
    s_tilde, w, _ = refine_with_basis(s, anchor, z, zeta)
    return RefinedMatrix(s_tilde, z, w, r)


def refinement_objective(s: np.ndarray, anchor: np.ndarray, z: np.ndarray, w: np.ndarray, zeta: float) -> float:
    recon = z @ w @ z.T
    return float(
        0.5 * np.sum((s - recon) ** 2) + zeta * np.sum(svd(w)[1]) + 0.5 * np.sum((anchor - recon) ** 2)
    )


def _find_cycle(n: int, out: dict[int, list[int]]) -> list[int] | None:
    color = [0] * n
    parent = [-1] * n
    for root in range(n):
        if color[root]:
            continue
        stack = [(root, iter(out[root]))]
        color[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[node] = 2
                stack.pop()
            elif color[nxt] == 1:
                cycle = [nxt]
                cur = node
                while cur != nxt:
                    cycle.append(cur)
                    cur = parent[cur]
                return cycle[::-1]
            elif color[nxt] == 0:
                color[nxt] = 1
                parent[nxt] = node
                stack.append((nxt, iter(out[nxt])))
    return None


def break_cycles(n: int, edges: dict[tuple[int, int], float]) -> tuple[tuple[int, int, float], ...]:
    """Delete the minimum-weight edge of some directed cycle until none is left.

    Cycles are searched depth-first from the lowest index; weight ties are
    resolved by deleting the lexicographically largest ``(from, to)`` pair,
    which on uniform weights always removes an edge pointing to a lower index.
    """
    live = dict(edges)
    while True:
        out = {i: sorted(j for (a, j) in live if a == i) for i in range(n)}
        cycle = _find_cycle(n, out)
        if cycle is None:
            break
        ring = [(cycle[k], cycle[(k + 1) % len(cycle)]) for k in range(len(cycle))]
        victim = min(ring, key=lambda e: (live[e], -e[0], -e[1]))
        del live[victim]
    return tuple((i, j, w) for (i, j), w in sorted(live.items()))


def extract_topology(refined: RefinedMatrix | np.ndarray, threshold: float = 0.5) -> CommTopology:
    probs = refined.probs() if isinstance(refined, RefinedMatrix) else np.clip(refined, 0.0, 1.0)
    n = probs.shape[0]
    edges = {(i, j): float(probs[i, j]) for i in range(n) for j in range(n) if i != j and probs[i, j] > threshold}
    return CommTopology(n, break_cycles(n, edges))


class Design(NamedTuple):
    topology: CommTopology
    sketch: SketchMatrix
    refined: RefinedMatrix
    latent: LatentState


def design(
    graph: TaskGraph,
    params: DesignerParams,
    config: TrainConfig,
    rng: Rng | None = None,
    deterministic: bool = False,
) -> Design:
    """Encode, sample, sketch, refine and extract one topology.

    Deterministic mode uses the latent mean and fixes the uniform draw at 0.5.
    """
    mu, log_sigma = gcn_encode(graph, params)
    latent = sample_latent(mu, log_sigma, None if deterministic else rng)
    sketch = sketch_edges(latent, params, config.tau, rng, deterministic=deterministic)
    refined = refine_low_rank(sketch, graph.anchor, config.rank_for(graph.n), config.zeta)
    return Design(extract_topology(refined, config.threshold), sketch, refined, latent)
