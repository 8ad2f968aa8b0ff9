"""Command-line surface: analysis, generation, training, ablations, reports.

Exit codes: 0 on success, 2 on validation/usage errors, 3 on divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .graphs import (generate_combined, generate_lattice, generate_tree,
                     load_edge_list, load_features_csv, load_labels_csv,
                     save_edge_list)
from .hyperbolicity import histogram, local_profile, profile_to_json, to_distribution
from .layers import save_params_json
from .objectives import normalize_delta
from .training import (RunReport, TrainConfig, TrainingDiverged,
                       analyze_hyperbolicities, identity_features, mu_profile,
                       train)


def _emit(obj: dict | str, out: str | None) -> None:
    text = obj if isinstance(obj, str) else json.dumps(obj, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _load_graph(args, default_identity_features: bool = False) -> "WeightedGraph":
    g = load_edge_list(args.graph, weighted=not args.unweighted,
                       remap_ids=args.remap_ids)
    if getattr(args, "features", None):
        g = g.with_features(load_features_csv(args.features))
    elif default_identity_features:
        g = g.with_features(identity_features(g.num_nodes))
    if getattr(args, "labels", None):
        g = g.with_labels(load_labels_csv(args.labels))
    return g


def _config_from_args(args, task: str) -> TrainConfig:
    if args.config:
        cfg = TrainConfig.from_json(Path(args.config).read_text())
        if cfg.task != task:
            cfg = replace(cfg, task=task)
    else:
        cfg = TrainConfig(task=task)
    overrides = {}
    for flag, field in [("lr", "lr"), ("omega_nu", "omega_nu"),
                        ("omega_was", "omega_was"), ("k", "k"),
                        ("seed", "seed"), ("layers", "layers"),
                        ("hidden", "hidden"), ("dropout", "dropout"),
                        ("mode", "comparison_mode"),
                        ("max_epochs", "max_epochs"),
                        ("patience", "patience")]:
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    return replace(cfg, **overrides) if overrides else cfg


def _report_dict(report: RunReport) -> dict:
    return json.loads(report.to_json())


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_analyze(args) -> int:
    g = _load_graph(args)
    profile = local_profile(g, args.k, args.mode)
    _emit(profile_to_json(profile), args.out)
    if args.hist:
        histogram(to_distribution(profile), args.bin_width).to_csv(args.hist)
    return 0


def _cmd_generate(args) -> int:
    if args.kind == "lattice":
        g = generate_lattice(args.rows, args.cols)
    elif args.kind == "tree":
        g = generate_tree(args.branching, args.depth)
    else:
        g = generate_combined(generate_lattice(args.rows, args.cols),
                              generate_tree(args.branching, args.depth),
                              (args.glue_lattice, args.glue_tree))
    save_edge_list(g, args.out)
    print(f"wrote {g.num_nodes} nodes / {g.num_edges} edges to {args.out}")
    return 0


def _train_common(args, task: str) -> int:
    g = _load_graph(args, default_identity_features=True)
    cfg = _config_from_args(args, task)
    result = train(g, cfg, return_model=bool(args.checkpoint))
    if args.checkpoint:
        report, model, _ = result
        Path(args.checkpoint).write_text(save_params_json(model.state_dict()))
    else:
        report = result
    _emit(_report_dict(report), args.out)
    return 0


def _cmd_train_nc(args) -> int:
    return _train_common(args, "nc")


def _cmd_train_lp(args) -> int:
    return _train_common(args, "lp")


def _cmd_ablate(args) -> int:
    g = _load_graph(args, default_identity_features=True)
    base = _config_from_args(args, args.task)
    variants = {
        "full": base,
        "wo_nu": replace(base, omega_nu=0.0),
        "wo_w2": replace(base, omega_was=0.0),
        "wo_nu_w2": replace(base, omega_nu=0.0, omega_was=0.0),
    }
    table = {}
    for name, cfg in variants.items():
        rep = train(g, cfg)
        table[name] = {"val_metric": rep.best_val_metric,
                       "test_metric": rep.test_metric,
                       "w2_nu_unif": rep.w2_nu_unif,
                       "w2_nu_mu": rep.w2_nu_mu}
    _emit(table, args.out)
    if args.csv:
        with Path(args.csv).open("w") as fh:
            fh.write("variant,val_metric,test_metric,w2_nu_unif,w2_nu_mu\n")
            for name, row in table.items():
                fh.write(f"{name},{row['val_metric']},{row['test_metric']},"
                         f"{row['w2_nu_unif']},{row['w2_nu_mu']}\n")
    return 0


def _cmd_compare_modes(args) -> int:
    g = _load_graph(args, default_identity_features=True)
    base = _config_from_args(args, args.task)
    table = {}
    for mode in ("distribution", "pairwise", "mean"):
        rep = train(g, replace(base, comparison_mode=mode))
        table[mode] = {"val_metric": rep.best_val_metric,
                       "test_metric": rep.test_metric}
    _emit(table, args.out)
    return 0


def _cmd_report(args) -> int:
    g = _load_graph(args)
    report = RunReport.from_json(Path(args.run).read_text())
    profile = mu_profile(g, args.k, args.mode)
    mu = normalize_delta(profile)
    w2_unif, w2_mu = analyze_hyperbolicities(report, mu)
    _emit({"w2_nu_unif": w2_unif, "w2_nu_mu": w2_mu,
           "epoch_of_best": report.epoch_of_best,
           "test_metric": report.test_metric}, args.out)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_graph_args(p: argparse.ArgumentParser, with_data: bool = False) -> None:
    p.add_argument("--graph", required=True, help="edge-list file")
    p.add_argument("--unweighted", action="store_true",
                   help="reject weight columns; all weights 1")
    p.add_argument("--remap-ids", dest="remap_ids", action="store_true",
                   help="remap sparse node ids to 0..n-1")
    if with_data:
        p.add_argument("--features", help="node feature CSV (node_id,f0,...)")
        p.add_argument("--labels", help="node label CSV (node_id,label)")


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TrainConfig JSON file")
    p.add_argument("--lr", type=float)
    p.add_argument("--omega-nu", dest="omega_nu", type=float)
    p.add_argument("--omega-was", dest="omega_was", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--mode", choices=("distribution", "pairwise", "mean"),
                   help="comparison mode for the alignment term")
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--out", help="RunReport JSON output path")
    p.add_argument("--checkpoint", help="write best parameters as JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jointspace",
        description="Local hyperbolicity profiles and joint-space GNN training")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="per-node local hyperbolicity profile")
    _add_graph_args(p)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--mode", choices=("inf", "one"), default="inf")
    p.add_argument("--out", help="profile JSON output path")
    p.add_argument("--hist", help="histogram CSV output path")
    p.add_argument("--bin-width", dest="bin_width", type=float, default=0.5)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("generate", help="synthetic graph generators")
    p.add_argument("kind", choices=("lattice", "tree", "combined"))
    p.add_argument("--rows", type=int, default=5)
    p.add_argument("--cols", type=int, default=5)
    p.add_argument("--branching", type=int, default=2)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--glue-lattice", dest="glue_lattice", type=int, default=0)
    p.add_argument("--glue-tree", dest="glue_tree", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train-nc", help="node classification run")
    _add_graph_args(p, with_data=True)
    _add_train_args(p)
    p.set_defaults(func=_cmd_train_nc)

    p = sub.add_parser("train-lp", help="link prediction run")
    _add_graph_args(p, with_data=True)
    _add_train_args(p)
    p.set_defaults(func=_cmd_train_lp)

    p = sub.add_parser("ablate", help="full model and the three reduced variants")
    _add_graph_args(p, with_data=True)
    _add_train_args(p)
    p.add_argument("--task", choices=("nc", "lp"), default="nc")
    p.add_argument("--csv", help="also write the table as CSV")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("compare-modes",
                       help="alignment comparison modes side by side")
    _add_graph_args(p, with_data=True)
    _add_train_args(p)
    p.add_argument("--task", choices=("nc", "lp"), default="nc")
    p.set_defaults(func=_cmd_compare_modes)

    p = sub.add_parser("report", help="learned-hyperbolicity diagnostics of a run")
    _add_graph_args(p)
    p.add_argument("--run", required=True, help="RunReport JSON file")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--mode", choices=("inf", "one"), default="inf")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
