from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    """Designer network sizes and the anchor prior."""

    d_hidden: int = 64
    d_latent: int = 32
    d_ffn: int = 128
    anchor: str = "chain"

    def __post_init__(self):
        if min(self.d_hidden, self.d_latent, self.d_ffn) < 1:
            raise ConfigError("model dimensions must be positive")


@dataclass(frozen=True)
class TrainConfig:
    m_samples: int = 10
    k_rounds: int = 3
    tau: float = 1e-2
    zeta: float = 1e-1
    threshold: float = 0.5
    rank_r: int | None = None  # None: ceil(N / 2)
    learning_rate: float = 0.01
    budget: int = 40
    seed: int = 0
    baseline: bool = True
    beta1_cost: float = 0.01
    beta2_robust: float = 1.0

    def __post_init__(self):
        if self.m_samples < 1:
            raise ConfigError("m_samples must be >= 1")
        if self.k_rounds < 1:
            raise ConfigError("k_rounds must be >= 1")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if self.zeta < 0:
            raise ConfigError("zeta must be non-negative")
        if not 0 < self.threshold < 1:
            raise ConfigError("threshold must lie in (0, 1)")
        if self.rank_r is not None and self.rank_r < 1:
            raise ConfigError("rank_r must be >= 1")
        if self.budget < 0:
            raise ConfigError("budget must be non-negative")

    def rank_for(self, n: int) -> int:
        r = math.ceil(n / 2) if self.rank_r is None else self.rank_r
        return max(1, min(r, n))

    def to_dict(self) -> dict:
        return asdict(self)
