import copy
import json

import pytest

from topodesign.agents import HttpChatBackend, MockAgent, MockSummarizer
from topodesign.cli import main
from topodesign.errors import ConfigError
from topodesign.runconfig import RunConfig

BASE = {
    "agents": [
        {"id": 0, "base": "mock", "role": "Math Solver", "plugins": ["calculator"], "skills": {"arith_easy": 0.9}},
        {"id": 1, "base": "mock", "role": "Inspector"},
        {"id": 2, "base": "mock", "role": "Knowledge Expert"},
    ],
    "backend": {"kind": "mock"},
    "embedder": {"kind": "hash", "dim": 32},
    "train": {"m": 2, "k": 2, "tau": 0.5, "zeta": 0.1, "threshold": 0.5, "lr": 0.01, "budget": 3, "seed": 1, "baseline": True},
    "model": {"d_hidden": 8, "d_latent": 4, "d_ffn": 6, "anchor": "chain"},
    "aggregate": {"kind": "summarizer_agent"},
    "macp": {"beta1": 0.02, "beta2": 0.5},
    "suite": {"seed": 0, "counts": {"arith_easy": 2, "arith_hard": 2, "choice": 2}},
    "outputs": {"dir": "out"},
}


def doc(**patch):
    d = copy.deepcopy(BASE)
    for k, v in patch.items():
        d[k] = v
    return d


def test_parse_full_config():
    cfg = RunConfig.from_dict(BASE)
    assert [a.role for a in cfg.agents] == ["Math Solver", "Inspector", "Knowledge Expert"]
    assert cfg.agents[0].plugins == ["calculator"]
    assert cfg.skills == {0: {"arith_easy": 0.9}}
    t = cfg.train
    assert (t.m_samples, t.k_rounds, t.tau, t.budget, t.seed, t.beta1_cost, t.beta2_robust) == (2, 2, 0.5, 3, 1, 0.02, 0.5)
    assert cfg.model.d_latent == 4 and cfg.embedder.dim == 32 and cfg.out_dir == "out"
    team = cfg.build_team()
    assert isinstance(team.backends[0], MockAgent) and isinstance(team.summarizer, MockSummarizer)
    assert team.backends[0].skills["arith_easy"] == 0.9
    assert cfg.build_embedder().dim == 32


def test_minimal_config_defaults():
    cfg = RunConfig.from_dict({"agents": [{"id": 0, "role": "Solver"}]})
    assert cfg.train.zeta == 0.1 and cfg.aggregate == "summarizer_agent" and cfg.backend.kind == "mock"


@pytest.mark.parametrize(
    "bad",
    [
        doc(extra=1),
        doc(train={"m": 2, "epochs": 3}),
        doc(backend={"kind": "mock", "url": "x"}),
        doc(agents=[{"id": 0, "role": "A", "colour": "red"}]),
        doc(agents=[{"id": 0, "role": "A", "skills": {"poetry": 1.0}}]),
        doc(agents=[{"id": 1, "role": "A"}]),
        doc(agents=[{"id": 0, "role": " "}]),
        doc(agents=[]),
        doc(macp={"beta3": 1}),
        doc(model={"anchor": "ring"}),
        doc(aggregate={"kind": "borda"}),
        doc(backend={"kind": "http"}),
        doc(embedder={"kind": "bert"}),
        doc(suite={"counts": {"poetry": 2}}),
        doc(outputs={"path": "x"}),
        doc(train={"tau": 0}),
    ],
)
def test_rejects_bad_configs(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad)


def test_http_backend_config(monkeypatch):
    cfg = RunConfig.from_dict(doc(backend={"kind": "http", "base_url": "http://llm", "model": "m", "max_in_flight": 2}))
    team = cfg.build_team()
    assert all(isinstance(b, HttpChatBackend) for b in team.backends)
    assert team.summarizer.agent_id == -1 and team.backends[2].url == "http://llm/chat/completions"


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "bad.json")


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "run.json"
    p.write_text(json.dumps(BASE))
    return p


def test_cli_end_to_end(tmp_path, cfg_path, capsys):
    ck = tmp_path / "ck.json"
    assert main(["train", "--config", str(cfg_path), "--out", str(ck)]) == 0
    log_lines = ck.with_suffix(".log.jsonl").read_text().splitlines()
    assert len(log_lines) == 3

    assert main(["design", "--config", str(cfg_path), "--checkpoint", str(ck), "--query", "compute 3+4", "--out", str(tmp_path / "d.dot")]) == 0
    out = capsys.readouterr().out
    assert json.loads(out.splitlines()[-1])["n"] == 3
    assert (tmp_path / "d.dot").read_text().startswith("digraph communication {")

    assert main(["run", "--config", str(cfg_path), "--query", "compute 3+4", "--topology", "star", "--out", str(tmp_path / "t.json")]) == 0
    assert json.loads((tmp_path / "t.json").read_text())["order"] == [0, 1, 2]

    bench = tmp_path / "bench"
    assert main(["bench", "--config", str(cfg_path), "--checkpoint", str(ck), "--baselines", "chain,complete", "--out", str(bench)]) == 0
    reports = json.loads((bench / "bench.json").read_text())
    assert [r["method"] for r in reports] == ["chain", "complete", "designer"]
    assert len((bench / "bench.csv").read_text().splitlines()) == 4
    assert len(list((bench / "topologies").glob("*.dot"))) == 6

    atk = tmp_path / "atk"
    assert main(["attack", "--config", str(cfg_path), "--topology", "complete", "--target", "1", "--out", str(atk)]) == 0
    clean, hit = json.loads((atk / "attack.json").read_text())
    assert clean["robustness_drop"] is None and hit["robustness_drop"] == clean["mean_utility"] - hit["mean_utility"]

    assert main(["export-dot", "--config", str(cfg_path), "--topology", "tree", "--out", str(tmp_path / "tree.dot")]) == 0
    assert "0 -> 1" in (tmp_path / "tree.dot").read_text()


def test_cli_seed_override_changes_training(tmp_path, cfg_path):
    a, b, c = (tmp_path / n for n in ("a.json", "b.json", "c.json"))
    main(["train", "--config", str(cfg_path), "--out", str(a)])
    main(["train", "--config", str(cfg_path), "--out", str(b)])
    main(["train", "--config", str(cfg_path), "--seed", "9", "--out", str(c)])
    assert a.read_bytes() == b.read_bytes() != c.read_bytes()


def test_cli_errors(tmp_path, cfg_path, capsys):
    assert main(["design", "--config", str(cfg_path), "--query", "q"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc(unknown=True)))
    assert main(["bench", "--config", str(bad)]) == 2
    assert "unknown field" in capsys.readouterr().err
    assert main(["design", "--config", str(cfg_path), "--checkpoint", str(tmp_path / "none.json"), "--query", "q"]) == 2
    with pytest.raises(SystemExit):
        main(["frobnicate"])
