"""Task-adaptive communication topologies for LLM multi-agent systems."""

from .agents import AgentSpec, AttackSpec, HashEmbedder, MockAgent, MockSummarizer
from .config import ModelConfig, TrainConfig
from .designer import CommTopology, DesignerParams, design, init_params
from .executor import Team, run_dialogue, topo_order
from .harness import BenchReport, run_attack, run_baseline, run_designer
from .network import build_task_graph, make_anchor
from .numerics import Rng
from .tasks import SyntheticTask, evaluate, generate_suite
from .trainer import Checkpoint, load_checkpoint, save_checkpoint, train

__all__ = [
    "AgentSpec", "AttackSpec", "BenchReport", "Checkpoint", "CommTopology", "DesignerParams",
    "HashEmbedder", "MockAgent", "MockSummarizer", "ModelConfig", "Rng", "SyntheticTask", "Team",
    "TrainConfig", "build_task_graph", "design", "evaluate", "generate_suite", "init_params",
    "load_checkpoint", "make_anchor", "run_attack", "run_baseline", "run_designer", "run_dialogue",
    "save_checkpoint", "topo_order", "train",
]
