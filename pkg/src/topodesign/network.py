"""Task-specific multi-agent network: agent features, anchor topology and the
virtual task node."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agents import AgentSpec, Embedder, encode_agent
from .errors import ConfigError
from .numerics import Rng

ANCHOR_KINDS = ("chain", "star", "tree", "complete", "random")


def make_anchor(kind: str, n: int, rng: Rng | None = None) -> np.ndarray:
    """0/1 adjacency of a fixed topology; ``a[i, j] = 1`` means i sends to j."""
    if n < 1:
        raise ConfigError("anchor needs at least one node")
    a = np.zeros((n, n))
    if kind == "chain":
        for i in range(n - 1):
            a[i, i + 1] = 1
    elif kind == "star":
        a[0, 1:] = 1
    elif kind == "tree":
        for i in range(n):
            for j in (2 * i + 1, 2 * i + 2):
                if j < n:
                    a[i, j] = 1
    elif kind == "complete":
        a[:] = 1
    elif kind == "random":
        if rng is None:
            raise ConfigError("random anchor needs an rng")
        a = (rng.uniform((n, n)) < 0.5).astype(np.float64)
    else:
        raise ConfigError(f"unknown topology kind {kind!r}; expected one of {ANCHOR_KINDS}")
    np.fill_diagonal(a, 0)
    return a


def augment(anchor: np.ndarray) -> np.ndarray:
    """Append the task node (index N) with edges to and from every agent."""
    n = anchor.shape[0]
    out = np.ones((n + 1, n + 1))
    out[:n, :n] = anchor
    out[n, n] = 0
    return out


@dataclass(frozen=True)
class TaskGraph:
    agent_features: np.ndarray  # (N, D)
    task_feature: np.ndarray  # (D,)
    anchor: np.ndarray  # (N, N)
    augmented_anchor: np.ndarray  # (N+1, N+1), task node last

    @property
    def n(self) -> int:
        return self.anchor.shape[0]

    @property
    def features(self) -> np.ndarray:
        """Stacked node features with the task embedding as the last row."""
        return np.vstack([self.agent_features, self.task_feature[None, :]])


def build_task_graph(
    agents: list[AgentSpec],
    query: str,
    anchor_kind: str,
    provider: Embedder,
    rng: Rng | None = None,
    dim: int | None = None,
) -> TaskGraph:
    if not agents:
        raise ConfigError("need at least one agent")
    expected = provider.dim if dim is None else dim
    if provider.dim != expected:
        raise ConfigError(f"embedder dimension {provider.dim} does not match configured {expected}")
    rows = [encode_agent(a, provider) for a in agents]
    task = provider.embed(query)
    for v in [*rows, task]:
        if v.shape != (expected,):
            raise ConfigError(f"embedding length {v.shape} does not match configured {expected}")
    anchor = make_anchor(anchor_kind, len(agents), rng)
    return TaskGraph(np.vstack(rows), np.asarray(task), anchor, augment(anchor))
