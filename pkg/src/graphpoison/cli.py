"""Command-line harness.

Exit codes: 0 ok, 2 config/usage error, 3 pipeline error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import attacks as atk
from . import models
from .analysis import local_perturbation_rates
from .clustering import ClusterConfig, cluster_features
from .analysis import compare_attacks
from .defense import evaluate_poisoned, jaccard_preprocess
from .experiment import ConfigError, run_experiment
from .graph import (GraphError, SbmConfig, SplitConfig, generate_sbm,
                    largest_connected_component, load_bundle, random_split,
                    save_bundle)


def _load_plan(path: str, g) -> atk.AttackPlan:
    raw = json.loads(Path(path).read_text())
    a = g.adjacency.copy()
    flips = []
    for f in raw["flips"]:
        u, v = f["u"], f["v"]
        a[u, v] = a[v, u] = 1 - a[u, v]
        flips.append(atk.Flip(f["step"], u, v, f.get("score", 0.0), f["was_edge"]))
    return atk.AttackPlan(flips=flips, adjacency=a, audit=[],
                          status=raw.get("status", "ok"),
                          config=raw.get("config", {}), seed=raw.get("seed"))


def _cmd_dataset(args) -> int:
    if args.dataset_cmd == "generate":
        g = generate_sbm(SbmConfig(
            block_sizes=tuple(args.block_sizes), p_in=args.p_in, p_out=args.p_out,
            feature_dim=args.feature_dim, feature_flip_prob=args.flip_prob,
            seed=args.seed))
        save_bundle(g, args.out)
        print(f"wrote SBM bundle: N={g.n_nodes} |E|={g.n_edges} -> {args.out}")
        return 0
    g = load_bundle(args.path)
    if args.dataset_cmd == "info":
        info = {"n_nodes": g.n_nodes, "n_edges": g.n_edges,
                "n_features": g.n_features,
                "n_classes": g.n_classes() if g.labels is not None else None,
                "splits": {k: len(v) for k, v in g.splits.items()}}
        print(json.dumps(info, sort_keys=True, indent=2))
        return 0
    if args.dataset_cmd == "lcc":
        lcc = largest_connected_component(g)
        save_bundle(lcc, args.out)
        print(f"LCC: {g.n_nodes} -> {lcc.n_nodes} nodes -> {args.out}")
        return 0
    raise ConfigError("unknown dataset subcommand")


def _cmd_cluster(args) -> int:
    g = load_bundle(args.path)
    cfg = ClusterConfig(gamma=args.gamma,
                        candidate_k=tuple(args.candidate_k),
                        seed=args.seed)
    labels, report = cluster_features(g.features.astype(float), cfg,
                                      adjacency=g.adjacency)
    Path(args.out).write_text("\n".join(str(int(c)) for c in labels) + "\n")
    print(json.dumps({"chosen_k": report["chosen_k"],
                      "ch_scores": {str(k): v for k, v in report["ch_scores"].items()}},
                     sort_keys=True, indent=2))
    return 0


def _cmd_attack(args) -> int:
    g = load_bundle(args.path)
    budget = atk.AttackBudget(rate=args.rate) if args.rate is not None \
        else atk.AttackBudget(delta=args.delta)
    constraint = atk.Constraint(g, eta=args.eta)
    if args.attack == "random":
        plan = atk.attack_random(g, budget, constraint, seed=args.seed)
    elif args.attack.startswith("dice"):
        mode = args.attack.split("-")[1] if "-" in args.attack else "free"
        if mode == "blackbox":
            labels, _ = cluster_features(g.features.astype(float),
                                         ClusterConfig(seed=args.seed))
        else:
            if g.labels is None:
                raise GraphError("DICE free/control needs a labeled bundle")
            labels = g.labels
        control = {"train": g.splits["train"]} if mode == "control" else None
        plan = atk.attack_dice(g, budget, constraint, labels, mode=mode,
                               control_sets=control, seed=args.seed)
    elif args.attack in ("bbga", "mettack-bb"):
        cfg = atk.BbgaConfig(k=args.k, T=args.T, master_seed=args.seed,
                             sigma_filter=args.sigma_filter)
        if args.attack == "mettack-bb":
            plan = atk.attack_mettack_bb(g, budget, constraint, cfg)
        else:
            plan = atk.attack_bbga(g, budget, constraint, cfg)
    else:
        raise ConfigError(f"unknown attack {args.attack!r}")
    Path(args.out).write_text(json.dumps(plan.to_dict(), sort_keys=True, indent=2))
    if args.export_bundle:
        save_bundle(g.with_adjacency(plan.adjacency), args.export_bundle)
    print(f"{plan.n_flips} flips ({plan.status}) -> {args.out}")
    return 0


def _cmd_defend(args) -> int:
    g = load_bundle(args.path)
    out = jaccard_preprocess(g, args.eta)
    save_bundle(out, args.out)
    print(f"jaccard preprocess eta={args.eta}: {g.n_edges} -> {out.n_edges} edges")
    return 0


def _cmd_evaluate(args) -> int:
    g = load_bundle(args.path)
    plan = _load_plan(args.plan, g)
    report = evaluate_poisoned(
        g, plan, defense=args.defense, trials=args.trials, seed=args.seed,
        split_cfg=SplitConfig(seed=args.seed),
        train_cfg=models.TrainConfig(steps=args.steps, learning_rate=args.lr))
    Path(args.out).write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    print(f"accuracy {report.mean:.4f} +- {report.std:.4f} -> {args.out}")
    return 0


def _cmd_experiment(args) -> int:
    if args.experiment_cmd == "run":
        payload = run_experiment(args.config, args.out)
        print(f"{len(payload['reports'])} result cells -> {args.out}")
        return 0
    if args.experiment_cmd == "compare":
        raw = json.loads(Path(args.report).read_text())
        rows = [{"attack": r["attack"], "rate": r["rate"],
                 "misclassification": [1.0 - t["accuracy"] for t in r["per_trial"]]}
                for r in raw["reports"] if r["defense"] == "none"]
        if len({r["attack"] for r in rows}) < 2:
            raise ConfigError("compare needs >= 2 attacks in the report")
        for row in compare_attacks(rows):
            print(f"{row['attack']},{row['rate']},{row['mean']:.4f},"
                  f"{row['std']:.4f},{row['gap_pct']}")
        return 0
    raise ConfigError("unknown experiment subcommand")


def _cmd_analyze(args) -> int:
    g = load_bundle(args.path)
    plan = _load_plan(args.plan, g)
    if args.set not in g.splits:
        raise ConfigError(f"bundle has no split named {args.set!r}")
    report = local_perturbation_rates(g, plan.adjacency, g.splits[args.set],
                                      set_name=args.set)
    print(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphpoison")
    sub = p.add_subparsers(dest="cmd", required=True)

    ds = sub.add_parser("dataset", help="generate / inspect graph bundles")
    dsub = ds.add_subparsers(dest="dataset_cmd", required=True)
    gen = dsub.add_parser("generate")
    gen.add_argument("--block-sizes", type=int, nargs="+", required=True)
    gen.add_argument("--p-in", type=float, default=0.1)
    gen.add_argument("--p-out", type=float, default=0.01)
    gen.add_argument("--feature-dim", type=int, default=32)
    gen.add_argument("--flip-prob", type=float, default=0.0)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", required=True)
    info = dsub.add_parser("info")
    info.add_argument("path")
    lcc = dsub.add_parser("lcc")
    lcc.add_argument("path")
    lcc.add_argument("--out", required=True)

    cl = sub.add_parser("cluster", help="spectral pseudo-labels")
    cl.add_argument("path")
    cl.add_argument("--gamma", type=float, default=0.001)
    cl.add_argument("--candidate-k", type=int, nargs="+", default=list(range(2, 11)))
    cl.add_argument("--seed", type=int, required=True)
    cl.add_argument("--out", required=True)

    at = sub.add_parser("attack", help="run a structure-poisoning attack")
    at.add_argument("path")
    at.add_argument("--attack", required=True,
                    choices=["random", "dice-free", "dice-control",
                             "dice-blackbox", "mettack-bb", "bbga"])
    at.add_argument("--rate", type=float)
    at.add_argument("--delta", type=int)
    at.add_argument("--eta", type=float, default=0.01)
    at.add_argument("--k", type=int, default=5)
    at.add_argument("--T", type=int, default=100)
    at.add_argument("--sigma-filter", default="strict",
                    choices=["strict", "lte", "off"])
    at.add_argument("--seed", type=int, required=True)
    at.add_argument("--out", required=True)
    at.add_argument("--export-bundle")

    de = sub.add_parser("defend", help="jaccard edge filtering")
    de.add_argument("path")
    de.add_argument("--eta", type=float, default=0.01)
    de.add_argument("--out", required=True)

    ev = sub.add_parser("evaluate", help="poisoned-training evaluation")
    ev.add_argument("path")
    ev.add_argument("--plan", required=True)
    ev.add_argument("--defense", default="none", choices=["none", "jaccard", "flip"])
    ev.add_argument("--trials", type=int, default=10)
    ev.add_argument("--steps", type=int, default=100)
    ev.add_argument("--lr", type=float, default=0.01)
    ev.add_argument("--seed", type=int, required=True)
    ev.add_argument("--out", required=True)

    ex = sub.add_parser("experiment", help="config-driven pipelines")
    esub = ex.add_subparsers(dest="experiment_cmd", required=True)
    run = esub.add_parser("run")
    run.add_argument("config")
    run.add_argument("--out", required=True)
    cmp_ = esub.add_parser("compare")
    cmp_.add_argument("report")

    an = sub.add_parser("analyze", help="perturbation analysis")
    asub = an.add_subparsers(dest="analyze_cmd", required=True)
    lp = asub.add_parser("local-ptb")
    lp.add_argument("path")
    lp.add_argument("--plan", required=True)
    lp.add_argument("--set", default="train")

    return p


_HANDLERS = {
    "dataset": _cmd_dataset,
    "cluster": _cmd_cluster,
    "attack": _cmd_attack,
    "defend": _cmd_defend,
    "evaluate": _cmd_evaluate,
    "experiment": _cmd_experiment,
    "analyze": _cmd_analyze,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.cmd == "attack" and (args.rate is None) == (args.delta is None):
        print("attack: give exactly one of --rate / --delta", file=sys.stderr)
        return 2
    try:
        return _HANDLERS[args.cmd](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (GraphError, atk.AttackError, np.linalg.LinAlgError, OSError) as e:
        print(f"pipeline error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
