"""Multi-round dialogue execution over a communication DAG."""

from __future__ import annotations

import heapq
import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .agents import AgentBackend, AgentResponse, AgentSpec, AttackSpec, BackendError, Prompt
from .designer import CommTopology
from .errors import ConfigError
from .numerics import Rng
from .tasks import normalize_answer

AGGREGATIONS = ("majority_vote", "summarizer_agent", "last_agent")


class ScheduleError(RuntimeError):
    """The topology handed to the scheduler contains a cycle."""


class ExecutionError(RuntimeError):
    def __init__(self, message: str, partial: list, cause: Exception | None = None):
        super().__init__(message)
        self.partial = partial
        self.cause = cause


def topo_order(topology: CommTopology) -> list[int]:
    """Kahn's algorithm; among ready agents the lowest index runs first."""
    n = topology.n
    indeg = [0] * n
    out: dict[int, list[int]] = {i: [] for i in range(n)}
    for i, j, _ in topology.edges:
        out[i].append(j)
        indeg[j] += 1
    ready = [i for i in range(n) if indeg[i] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        i = heapq.heappop(ready)
        order.append(i)
        for j in out[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(ready, j)
    if len(order) != n:
        raise ScheduleError("communication topology contains a cycle")
    return order


def satisfies_order(topology: CommTopology, order: list[int]) -> bool:
    pos = {v: k for k, v in enumerate(order)}
    return sorted(order) == list(range(topology.n)) and all(pos[i] < pos[j] for i, j, _ in topology.edges)


def system_prompt(agent: AgentSpec) -> str:
    if not agent.state:
        return agent.role
    return agent.role + "\nMemory:\n" + "\n".join(agent.state)


def build_prompt(
    agent: AgentSpec,
    query: str,
    upstream: list[tuple[AgentSpec, AgentResponse]],
    attack: AttackSpec | None = None,
) -> Prompt:
    """``upstream`` holds (sender, response) pairs already in execution order."""
    if attack is not None and attack.target_agent == agent.id:
        system = attack.adversarial_system_prompt
    else:
        system = system_prompt(agent)
    parts = [query] + [f"Agent {spec.id} ({spec.role}): {resp.text}" for spec, resp in upstream]
    return Prompt(system, "\n\n".join(parts))


def run_round(
    topology: CommTopology,
    agents: list[AgentSpec],
    backends: list[AgentBackend],
    query: str,
    round_index: int,
    attack: AttackSpec | None,
    rng: Rng,
    max_workers: int = 1,
) -> list[AgentResponse]:
    """Execute every agent once; returns responses in execution order.

    Agents whose in-neighbours have all answered are dispatched together
    (concurrently when ``max_workers > 1``); results are committed in
    execution order so the outcome does not depend on completion order.
    """
    order = topo_order(topology)
    pos = {v: k for k, v in enumerate(order)}
    parents = {j: sorted(topology.in_neighbors(j), key=pos.get) for j in range(topology.n)}
    done: dict[int, AgentResponse] = {}

    def call(i: int) -> AgentResponse:
        upstream = [(agents[p], done[p]) for p in parents[i]]
        prompt = build_prompt(agents[i], query, upstream, attack)
        return backends[i].respond(prompt, rng.child(round_index, i))

    pool = ThreadPoolExecutor(max_workers) if max_workers > 1 else None
    try:
        remaining = list(order)
        while remaining:
            wave = [i for i in remaining if all(p in done for p in parents[i])]
            try:
                if pool is None:
                    results = [call(i) for i in wave]
                else:
                    results = list(pool.map(call, wave))
            except BackendError as exc:
                partial = [done[i] for i in order if i in done]
                raise ExecutionError(f"round {round_index}: {exc}", partial, exc) from exc
            for i, r in zip(wave, results):
                done[i] = r
            remaining = [i for i in remaining if i not in done]
    finally:
        if pool is not None:
            pool.shutdown()
    return [done[i] for i in order]


def aggregate(
    responses: list[AgentResponse],
    strategy: str,
    order: list[int],
    summarizer: AgentBackend | None = None,
    query: str = "",
    agents: list[AgentSpec] | None = None,
    rng: Rng | None = None,
) -> tuple[str, AgentResponse | None]:
    """Round answer; the second element is the summarizer's response, if any."""
    if not responses:
        raise ValueError("nothing to aggregate")
    by_id = {r.agent_id: r for r in responses}
    ranked = [by_id[i] for i in order if i in by_id]
    if strategy == "majority_vote":
        answers = [normalize_answer(r.text) for r in ranked]
        counts = Counter(answers)
        top = max(counts.values())
        winner = next(a for a in answers if counts[a] == top)
        return winner, None
    if strategy == "last_agent":
        return ranked[-1].text, None
    if strategy == "summarizer_agent":
        if summarizer is None:
            raise ConfigError("summarizer_agent aggregation needs a summarizer backend")
        names = {a.id: a.role for a in agents or []}
        parts = [query] + [f"Agent {r.agent_id} ({names.get(r.agent_id, 'agent')}): {r.text}" for r in ranked]
        prompt = Prompt("You summarize a multi-agent discussion and state the final answer.", "\n\n".join(parts))
        resp = summarizer.respond(prompt, rng if rng is not None else Rng(0))
        return resp.text, resp
    raise ConfigError(f"unknown aggregation {strategy!r}; expected one of {AGGREGATIONS}")


@dataclass
class Team:
    """Agents, their backends and the aggregation rule of one system."""

    agents: list[AgentSpec]
    backends: list[AgentBackend]
    summarizer: AgentBackend | None = None
    strategy: str | None = None
    max_workers: int = 1

    def __post_init__(self):
        if len(self.agents) != len(self.backends):
            raise ConfigError("need exactly one backend per agent")
        if [a.id for a in self.agents] != list(range(len(self.agents))):
            raise ConfigError("agent ids must be 0..N-1 in order")
        if self.strategy is None:
            self.strategy = "summarizer_agent" if self.summarizer is not None else "majority_vote"
        if self.strategy not in AGGREGATIONS:
            raise ConfigError(f"unknown aggregation {self.strategy!r}")

    @property
    def n(self) -> int:
        return len(self.agents)

    def run(self, topology, query: str, k_rounds: int, rng: Rng, attack: AttackSpec | None = None) -> "Transcript":
        return run_dialogue(
            topology, self.agents, self.backends, query, k_rounds, self.strategy, attack, rng,
            self.summarizer, self.max_workers,
        )


@dataclass
class Transcript:
    rounds: list[list[AgentResponse]] = field(default_factory=list)
    answers: list[str] = field(default_factory=list)
    summaries: list[AgentResponse] = field(default_factory=list)
    order: list[int] = field(default_factory=list)

    @property
    def final_answer(self) -> str:
        return self.answers[-1] if self.answers else ""

    def _all(self):
        yield from (r for rnd in self.rounds for r in rnd)
        yield from self.summaries

    @property
    def total_prompt_tokens(self) -> int:
        return sum(r.prompt_tokens for r in self._all())

    @property
    def total_completion_tokens(self) -> int:
        return sum(r.completion_tokens for r in self._all())

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "rounds": [[r.to_dict() for r in rnd] for rnd in self.rounds],
            "summaries": [r.to_dict() for r in self.summaries],
            "answers": self.answers,
            "final_answer": self.final_answer,
            "total_prompt_tokens": self.total_prompt_tokens,
            "total_completion_tokens": self.total_completion_tokens,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def run_dialogue(
    topology: CommTopology,
    agents: list[AgentSpec],
    backends: list[AgentBackend],
    query: str,
    k_rounds: int,
    strategy: str,
    attack: AttackSpec | None,
    rng: Rng,
    summarizer: AgentBackend | None = None,
    max_workers: int = 1,
) -> Transcript:
    """K rounds of dialogue; agents remember their own responses between rounds.

    ``agents`` are not mutated: state updates apply to private copies.
    """
    if k_rounds < 1:
        raise ConfigError("k_rounds must be >= 1")
    if attack is not None and not 0 <= attack.target_agent < len(agents):
        raise ConfigError(f"attack target {attack.target_agent} out of range")
    agents = [AgentSpec(a.id, a.base, a.role, list(a.state), list(a.plugins)) for a in agents]
    order = topo_order(topology)
    transcript = Transcript(order=order)
    for t in range(k_rounds):
        try:
            responses = run_round(topology, agents, backends, query, t, attack, rng, max_workers)
        except ExecutionError as exc:
            exc.partial = transcript.rounds + [exc.partial]
            raise
        transcript.rounds.append(responses)
        answer, summary = aggregate(
            responses, strategy, order, summarizer, query, agents, rng.child(t, len(agents))
        )
        if summary is not None:
            transcript.summaries.append(summary)
        transcript.answers.append(answer)
        for r in responses:
            agents[r.agent_id].remember(r.text)
    return transcript
