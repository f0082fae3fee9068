import pytest

from topodesign.agents import AgentSpec, HashEmbedder, MockAgent, MockSummarizer
from topodesign.executor import Team

ROLES = ["Math Solver", "Mathematical Analyst", "Programming Expert", "Inspector", "Knowledge Expert"]


def make_agents(n=5, roles=ROLES):
    return [AgentSpec(i, "mock-llm", roles[i % len(roles)] + ("" if i < len(roles) else f" {i}")) for i in range(n)]


def make_team(n=5, skills=None, summarizer=True, strategy=None):
    agents = make_agents(n)
    backends = [MockAgent(a.id, a.role, skills) for a in agents]
    return Team(agents, backends, MockSummarizer() if summarizer else None, strategy)


@pytest.fixture
def team():
    return make_team()


@pytest.fixture
def embedder():
    return HashEmbedder(384)
