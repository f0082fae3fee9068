import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from topodesign.agents import AgentSpec, HashEmbedder
from topodesign.designer import CommTopology
from topodesign.errors import ConfigError
from topodesign.executor import topo_order
from topodesign.network import ANCHOR_KINDS, augment, build_task_graph, make_anchor
from topodesign.numerics import Rng

from conftest import make_agents


def edges(a):
    return {(int(i), int(j)) for i, j in zip(*np.nonzero(a))}


def test_anchor_examples():
    assert edges(make_anchor("chain", 3)) == {(0, 1), (1, 2)}
    assert edges(make_anchor("complete", 2)) == {(0, 1), (1, 0)}
    assert edges(make_anchor("star", 4)) == {(0, 1), (0, 2), (0, 3)}
    assert edges(make_anchor("tree", 5)) == {(0, 1), (0, 2), (1, 3), (1, 4)}
    assert edges(make_anchor("chain", 1)) == set()


def test_anchor_errors():
    with pytest.raises(ConfigError):
        make_anchor("ring", 3)
    with pytest.raises(ConfigError):
        make_anchor("chain", 0)
    with pytest.raises(ConfigError):
        make_anchor("random", 3)


def test_random_anchor_density():
    a = make_anchor("random", 40, Rng(0))
    assert abs(a.sum() / (40 * 39) - 0.5) < 0.03


@given(st.sampled_from(ANCHOR_KINDS), st.integers(1, 8), st.integers(0, 1000))
def test_anchor_shape_property(kind, n, seed):
    a = make_anchor(kind, n, Rng(seed))
    assert a.shape == (n, n)
    assert np.all(np.diag(a) == 0)
    assert set(np.unique(a)) <= {0.0, 1.0}
    if kind in ("chain", "star", "tree"):
        topo = CommTopology(n, tuple((i, j, 1.0) for i, j in sorted(edges(a))))
        assert len(topo_order(topo)) == n


def test_task_graph_examples():
    e = HashEmbedder()
    g = build_task_graph(make_agents(2), "compute 3+4", "chain", e)
    assert edges(g.augmented_anchor) == {(0, 1), (0, 2), (2, 0), (1, 2), (2, 1)}
    g1 = build_task_graph(make_agents(1), "q", "chain", e)
    assert edges(g1.augmented_anchor) == {(0, 1), (1, 0)}
    np.testing.assert_array_equal(g.task_feature, e.embed("compute 3+4"))
    assert g.features.shape == (3, 384)


def test_task_graph_deterministic():
    e = HashEmbedder()
    g1 = build_task_graph(make_agents(4), "compute 1+2", "tree", e)
    g2 = build_task_graph(make_agents(4), "compute 1+2", "tree", e)
    for f in ("agent_features", "task_feature", "anchor", "augmented_anchor"):
        assert getattr(g1, f).tobytes() == getattr(g2, f).tobytes()


@given(st.sampled_from(ANCHOR_KINDS), st.integers(1, 8), st.integers(0, 100))
def test_augmentation_lossless(kind, n, seed):
    a = make_anchor(kind, n, Rng(seed))
    aug = augment(a)
    np.testing.assert_array_equal(aug[:n, :n], a)
    assert np.all(aug[:n, n] == 1) and np.all(aug[n, :n] == 1) and aug[n, n] == 0


def test_dimension_mismatch_is_error():
    with pytest.raises(ConfigError):
        build_task_graph(make_agents(2), "q", "chain", HashEmbedder(16), dim=384)


def test_empty_agents_rejected():
    with pytest.raises(ConfigError):
        build_task_graph([], "q", "chain", HashEmbedder(8))


def test_roles_give_distinct_rows():
    g = build_task_graph([AgentSpec(0, "b", "A"), AgentSpec(1, "b", "B")], "q", "chain", HashEmbedder())
    assert not np.array_equal(g.agent_features[0], g.agent_features[1])
