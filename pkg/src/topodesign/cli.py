"""Command line entry point: ``topodesign <command> --config run.json ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .agents import AttackSpec
from .designer import design
from .errors import ConfigError
from .harness import (
    baseline_topologies,
    designer_topologies,
    export_dot,
    reports_to_csv,
    run_attack,
    run_baseline,
    run_designer,
)
from .network import ANCHOR_KINDS, build_task_graph
from .numerics import Rng
from .runconfig import RunConfig
from .tasks import generate_suite
from .trainer import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint, train

log = logging.getLogger("topodesign")


def _setup(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.train = replace(cfg.train, seed=args.seed)
    return cfg


def _suite(cfg: RunConfig):
    return generate_suite(cfg.suite_seed, cfg.suite)


def _params(path):
    ckpt = load_checkpoint(path)
    return ckpt.params, ckpt.config, ckpt.model


def cmd_train(args) -> int:
    cfg = _setup(args)
    team, emb = cfg.build_team(), cfg.build_embedder()
    params, history = train(_suite(cfg), team, emb, cfg.train, cfg.model)
    ckpt = Checkpoint(cfg.train, params, cfg.train.seed, cfg.train.budget, cfg.model)
    out = Path(args.out or "checkpoint.json")
    save_checkpoint(out, ckpt)
    out.with_suffix(".log.jsonl").write_text(history.to_jsonl())
    print(f"wrote {out}")
    return 0


def cmd_design(args) -> int:
    cfg = _setup(args)
    params, tcfg, model = _params(args.checkpoint)
    team, emb = cfg.build_team(), cfg.build_embedder()
    graph = build_task_graph(team.agents, args.query, model.anchor, emb)
    topo = design(graph, params, tcfg, deterministic=True).topology
    print(json.dumps({"n": topo.n, "edges": [list(e) for e in topo.edges]}))
    if args.out:
        export_dot(topo, team.agents, args.out)
    return 0


def _topology_for(cfg: RunConfig, args, team, emb, query: str):
    if args.checkpoint:
        params, tcfg, model = _params(args.checkpoint)
        graph = build_task_graph(team.agents, query, model.anchor, emb)
        return design(graph, params, tcfg, deterministic=True).topology
    return baseline_topologies(args.topology, team.n, cfg.train.seed)(0, None)[0]


def cmd_run(args) -> int:
    cfg = _setup(args)
    team, emb = cfg.build_team(), cfg.build_embedder()
    topo = _topology_for(cfg, args, team, emb, args.query)
    tr = team.run(topo, args.query, cfg.train.k_rounds, Rng(cfg.train.seed))
    text = tr.to_json()
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def cmd_bench(args) -> int:
    cfg = _setup(args)
    team, emb, suite = cfg.build_team(), cfg.build_embedder(), _suite(cfg)
    kinds = args.baselines.split(",") if args.baselines else list(ANCHOR_KINDS)
    reports = [run_baseline(k, suite, team, cfg.train) for k in kinds]
    if args.checkpoint:
        params, tcfg, model = _params(args.checkpoint)
        reports.append(run_designer(params, suite, team, emb, cfg.train, model))
    _emit(reports, args.out, "bench")
    if args.out and args.checkpoint:
        dots = Path(args.out) / "topologies"
        dots.mkdir(parents=True, exist_ok=True)
        fn = designer_topologies(params, team, emb, tcfg, model)
        for k, task in enumerate(suite):
            export_dot(fn(k, task)[0], team.agents, dots / f"task{k:03d}.dot")
    return 0


def cmd_attack(args) -> int:
    cfg = _setup(args)
    team, emb, suite = cfg.build_team(), cfg.build_embedder(), _suite(cfg)
    attack = AttackSpec(args.target)
    if args.checkpoint:
        params, tcfg, model = _params(args.checkpoint)
        method, fn = "designer", designer_topologies(params, team, emb, tcfg, model)
    else:
        method, fn = args.topology, baseline_topologies(args.topology, team.n, cfg.train.seed)
    t = cfg.train
    clean, attacked = run_attack(method, suite, team, fn, attack, t.k_rounds, t.seed, t.beta1_cost, t.beta2_robust)
    _emit([clean, attacked], args.out, "attack")
    return 0


def cmd_export_dot(args) -> int:
    cfg = _setup(args)
    team, emb = cfg.build_team(), cfg.build_embedder()
    topo = _topology_for(cfg, args, team, emb, args.query or "")
    path = export_dot(topo, team.agents, args.out or "topology.dot")
    print(f"wrote {path}")
    return 0


def _emit(reports, out, stem) -> None:
    doc = json.dumps([r.to_dict() for r in reports], sort_keys=True, indent=1)
    print(doc)
    if out:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{stem}.json").write_text(doc + "\n")
        (d / f"{stem}.csv").write_text(reports_to_csv(reports))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="topodesign", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help, query=False, checkpoint=False, topology=False):
        s = sub.add_parser(name, help=help)
        s.add_argument("--config", required=True)
        s.add_argument("--seed", type=int)
        s.add_argument("--out")
        if checkpoint:
            s.add_argument("--checkpoint")
        if query:
            s.add_argument("--query", required=name != "export-dot")
        if topology:
            s.add_argument("--topology", default="chain", choices=ANCHOR_KINDS)
        s.set_defaults(fn=fn)
        return s

    add("train", cmd_train, "train the designer and write a checkpoint")
    add("design", cmd_design, "design a topology for one query", query=True, checkpoint=True)
    add("run", cmd_run, "run one dialogue", query=True, checkpoint=True, topology=True)
    b = add("bench", cmd_bench, "baseline sweep (plus the designer with --checkpoint)", checkpoint=True)
    b.add_argument("--baselines", help="comma-separated subset of " + ",".join(ANCHOR_KINDS))
    a = add("attack", cmd_attack, "clean vs attacked run", checkpoint=True, topology=True)
    a.add_argument("--target", type=int, default=0)
    add("export-dot", cmd_export_dot, "write a topology as DOT", query=True, checkpoint=True, topology=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if args.command == "design" and not args.checkpoint:
        print("design needs --checkpoint", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
