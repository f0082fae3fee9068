"""JSON run configuration: agents, backends, embedder, training and metrics.

Unknown keys anywhere in the document are rejected, so typos fail loudly
instead of silently falling back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .agents import (
    DEFAULT_DIM,
    AgentSpec,
    HashEmbedder,
    HttpChatBackend,
    HttpEmbedder,
    MockAgent,
    MockSummarizer,
)
from .config import ModelConfig, TrainConfig
from .errors import ConfigError
from .executor import AGGREGATIONS, Team
from .network import ANCHOR_KINDS
from .tasks import CATEGORIES

# JSON key -> TrainConfig field
_TRAIN_KEYS = {
    "m": "m_samples",
    "k": "k_rounds",
    "tau": "tau",
    "zeta": "zeta",
    "threshold": "threshold",
    "rank": "rank_r",
    "lr": "learning_rate",
    "budget": "budget",
    "seed": "seed",
    "baseline": "baseline",
}
_MODEL_KEYS = {"d_hidden", "d_latent", "d_ffn", "anchor"}


def _check_keys(section: str, doc: dict, allowed: set[str], required: set[str] = frozenset()) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{section}: expected an object")
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"{section}: unknown field(s) {', '.join(unknown)}")
    missing = sorted(required - set(doc))
    if missing:
        raise ConfigError(f"{section}: missing field(s) {', '.join(missing)}")


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"
    base_url: str = ""
    model: str = ""
    temperature: float = 1.0
    max_in_flight: int = 4


@dataclass(frozen=True)
class EmbedderConfig:
    kind: str = "hash"
    dim: int = DEFAULT_DIM
    base_url: str = ""
    model: str = ""


@dataclass
class RunConfig:
    agents: list[AgentSpec]
    skills: dict[int, dict[str, float]] = field(default_factory=dict)
    backend: BackendConfig = BackendConfig()
    embedder: EmbedderConfig = EmbedderConfig()
    train: TrainConfig = TrainConfig()
    model: ModelConfig = ModelConfig()
    aggregate: str = "summarizer_agent"
    suite: dict[str, int] = field(default_factory=lambda: {"arith_easy": 20, "arith_hard": 20})
    suite_seed: int = 0
    out_dir: str | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        _check_keys(
            "config", doc,
            {"agents", "backend", "embedder", "train", "model", "aggregate", "macp", "suite", "outputs"},
            {"agents"},
        )
        agents, skills = [], {}
        if not isinstance(doc["agents"], list) or not doc["agents"]:
            raise ConfigError("agents: expected a non-empty array")
        for k, a in enumerate(doc["agents"]):
            _check_keys(f"agents[{k}]", a, {"id", "base", "role", "plugins", "skills"}, {"id", "role"})
            if not str(a["role"]).strip():
                raise ConfigError(f"agents[{k}]: role must be non-empty")
            agents.append(AgentSpec(int(a["id"]), str(a.get("base", "")), str(a["role"]), [], list(a.get("plugins", []))))
            if "skills" in a:
                bad = sorted(set(a["skills"]) - set(CATEGORIES))
                if bad:
                    raise ConfigError(f"agents[{k}].skills: unknown categories {', '.join(bad)}")
                skills[int(a["id"])] = {c: float(v) for c, v in a["skills"].items()}
        if [a.id for a in agents] != list(range(len(agents))):
            raise ConfigError("agents: ids must be 0..N-1 in order")

        b = doc.get("backend", {})
        _check_keys("backend", b, {"kind", "base_url", "model", "temperature", "max_in_flight"})
        backend = BackendConfig(**b)
        if backend.kind not in ("mock", "http"):
            raise ConfigError(f"backend.kind must be 'mock' or 'http', got {backend.kind!r}")
        if backend.kind == "http" and not (backend.base_url and backend.model):
            raise ConfigError("http backend needs base_url and model")

        e = doc.get("embedder", {})
        _check_keys("embedder", e, {"kind", "dim", "base_url", "model"})
        embedder = EmbedderConfig(**e)
        if embedder.kind not in ("hash", "http"):
            raise ConfigError(f"embedder.kind must be 'hash' or 'http', got {embedder.kind!r}")

        t = doc.get("train", {})
        _check_keys("train", t, set(_TRAIN_KEYS))
        m = doc.get("macp", {})
        _check_keys("macp", m, {"beta1", "beta2"})
        kwargs = {_TRAIN_KEYS[k]: v for k, v in t.items()}
        if "beta1" in m:
            kwargs["beta1_cost"] = float(m["beta1"])
        if "beta2" in m:
            kwargs["beta2_robust"] = float(m["beta2"])
        train = TrainConfig(**kwargs)

        md = doc.get("model", {})
        _check_keys("model", md, _MODEL_KEYS)
        model = ModelConfig(**md)
        if model.anchor not in ANCHOR_KINDS:
            raise ConfigError(f"model.anchor must be one of {ANCHOR_KINDS}")

        ag = doc.get("aggregate", {"kind": "summarizer_agent"})
        _check_keys("aggregate", ag, {"kind"}, {"kind"})
        if ag["kind"] not in AGGREGATIONS:
            raise ConfigError(f"aggregate.kind must be one of {AGGREGATIONS}")

        s = doc.get("suite", {})
        _check_keys("suite", s, {"seed", "counts"})
        counts = dict(s.get("counts", {"arith_easy": 20, "arith_hard": 20}))
        bad = sorted(set(counts) - set(CATEGORIES))
        if bad:
            raise ConfigError(f"suite.counts: unknown categories {', '.join(bad)}")

        o = doc.get("outputs", {})
        _check_keys("outputs", o, {"dir"})
        return cls(
            agents, skills, backend, embedder, train, model, ag["kind"], counts, int(s.get("seed", 0)), o.get("dir")
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def build_team(self) -> Team:
        if self.backend.kind == "mock":
            backends = [MockAgent(a.id, a.role, self.skills.get(a.id)) for a in self.agents]
            summarizer = MockSummarizer() if self.aggregate == "summarizer_agent" else None
        else:
            def chat(agent_id):
                return HttpChatBackend(
                    self.backend.base_url, self.backend.model, agent_id,
                    temperature=self.backend.temperature, max_in_flight=self.backend.max_in_flight,
                )
            backends = [chat(a.id) for a in self.agents]
            summarizer = chat(-1) if self.aggregate == "summarizer_agent" else None
        return Team(self.agents, backends, summarizer, self.aggregate)

    def build_embedder(self):
        if self.embedder.kind == "hash":
            return HashEmbedder(self.embedder.dim)
        return HttpEmbedder(self.embedder.base_url, self.embedder.model, self.embedder.dim)
