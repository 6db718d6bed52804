"""Command-line entry point: ``gnn-inversion <verb> [options]``.

Every numeric config field can be overridden with ``--section.field VALUE``
(for example ``--attack.alpha 0.01`` or ``--attack.rl.episodes 5``); the
config file given with ``--config`` is the base layer.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import pipeline
from .attacks.whitebox import known_labels
from .checkpoint import load_model, save_model
from .config import DpSpec, ExperimentConfig, apply_overrides, load_config, numeric_fields
from .data import DatasetError, save_dataset
from .defenses import add_similar_edges, flip, rewire
from .gcn import DpConfig, accuracy, noise_for_epsilon, split_nodes, train, train_dp
from .metrics import auc, average_precision, edge_score_set, macro_stats_similarity

log = logging.getLogger("gnn_inversion")

EXIT_FAILURE = 1
EXIT_USAGE = 2


class CliError(Exception):
    pass


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config (base layer)")
    p.add_argument("--dataset", help="dataset directory; replaces the config's dataset section")
    p.add_argument("--seed", type=int, help="run seed (default: first seed in the config)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field, value parsed as JSON")
    p.add_argument("-v", "--verbose", action="store_true")
    for path, typ in numeric_fields().items():
        p.add_argument(f"--{path}", dest=f"ov:{path}", type=typ, metavar=typ.__name__.upper(),
                       help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gnn-inversion", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="train a target GCN and write a checkpoint")
    _add_common(p)
    p.add_argument("--out", required=True, help="checkpoint path")

    p = sub.add_parser("attack", help="reconstruct edges from a trained model")
    _add_common(p)
    p.add_argument("--method", choices=["graphmi", "ge", "rl"], required=True)
    p.add_argument("--model", help="checkpoint to attack (trained on the fly if omitted)")
    p.add_argument("--out", required=True, help="result JSON path")

    p = sub.add_parser("defend", help="apply a defense: perturb a graph or train a private model")
    _add_common(p)
    p.add_argument("--strategy", choices=["dp", "rewire", "add", "flip"], required=True)
    p.add_argument("--p", type=float, help="probability (rewire/flip) or budget fraction (add)")
    p.add_argument("--epsilon", type=float, help="target epsilon for dp")
    p.add_argument("--noise-multiplier", type=float, help="noise multiplier for dp")
    p.add_argument("--out", required=True, help="dataset directory, or checkpoint path for dp")

    p = sub.add_parser("eval", help="score a stored attack result against the true graph")
    _add_common(p)
    p.add_argument("--result", required=True, help="result JSON written by 'attack'")

    p = sub.add_parser("sweep", help="run the full pipeline over seeds and defense points")
    _add_common(p)
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--workers", type=int, help=f"worker processes (default ${pipeline.WORKERS_ENV} or 1)")

    p = sub.add_parser("report", help="summarize and verify a finished run directory")
    p.add_argument("dir", help="directory holding report.json")
    p.add_argument("--json", action="store_true", help="print the summary as JSON")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args, extra: dict | None = None) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = ExperimentConfig(dataset={"sbm": {}})
    overrides: dict = {}
    if args.dataset:
        overrides["dataset"] = {"path": args.dataset, "sbm": None}
    for item in args.set:
        if "=" not in item:
            raise CliError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            overrides[key] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key] = raw
    for key, value in vars(args).items():
        if key.startswith("ov:") and value is not None:
            overrides[key[3:]] = value
    overrides.update(extra or {})
    return apply_overrides(cfg, overrides) if overrides else cfg


def _seed(args, cfg: ExperimentConfig) -> int:
    return cfg.seeds[0] if args.seed is None else args.seed


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _splits(cfg, graph, seed):
    return split_nodes(graph.labels, cfg.target.train_fraction, cfg.target.val_fraction,
                       pipeline.sub_seed(seed, "split"))


def _train_plain(cfg, graph, seed):
    tr, va, te = _splits(cfg, graph, seed)
    t = cfg.target
    model = train(graph, tr, t.epochs, t.lr, pipeline.sub_seed(seed, "train"), val_mask=va,
                  optimizer=t.optimizer, patience=t.patience, hidden=t.hidden, penultimate=t.penultimate)
    return model, accuracy(model, graph.adjacency, graph.features, graph.labels, te)


def cmd_train(args) -> dict:
    cfg = resolve_config(args)
    seed = _seed(args, cfg)
    graph = pipeline.build_graph(cfg, seed)
    model, acc = _train_plain(cfg, graph, seed)
    save_model(model, args.out)
    return {"checkpoint": args.out, "test_accuracy": acc, "dataset_hash": graph.digest(),
            "model_hash": pipeline.weights_hash(model), "seed": seed}


def cmd_attack(args) -> dict:
    cfg = resolve_config(args, {"attack.method": args.method})
    seed = _seed(args, cfg)
    graph = pipeline.build_graph(cfg, seed)
    model = load_model(args.model) if args.model else _train_plain(cfg, graph, seed)[0]
    rho = pipeline.attack_density(cfg, graph)
    Y_known = known_labels(graph.labels, cfg.attack.label_fraction, pipeline.sub_seed(seed, "labels"))
    res = pipeline.run_attack(cfg, model, graph, Y_known, rho, pipeline.sub_seed(seed, "attack"))
    metrics = pipeline.evaluate(cfg, res, graph, model, seed)
    out = {
        "method": args.method,
        "seed": seed,
        "dataset_hash": graph.digest(),
        "num_nodes": graph.num_nodes,
        "queries": res.queries,
        "wall_time": res.wall_time,
        "edge_scores": [float(v) for v in res.edge_scores],
        "sampled_edges": [[int(i), int(j)] for i, j in zip(*np.nonzero(np.triu(res.sampled, 1)))],
        "metrics": metrics,
    }
    Path(args.out).write_text(json.dumps(out, sort_keys=True) + "\n")
    return {"result": args.out, "queries": res.queries, "wall_time": res.wall_time,
            "auc": metrics["auc"], "ap": metrics["ap"]}


def cmd_defend(args) -> dict:
    cfg = resolve_config(args)
    seed = _seed(args, cfg)
    graph = pipeline.build_graph(cfg, seed)
    dseed = pipeline.sub_seed(seed, "defense")
    if args.strategy == "dp":
        if (args.epsilon is None) == (args.noise_multiplier is None):
            raise CliError("dp needs exactly one of --epsilon or --noise-multiplier")
        d = cfg.defense.dp or DpSpec(noise_multiplier=1.0)
        clip, delta, iters = d.clip_norm, d.delta, d.iterations
        sigma = args.noise_multiplier if args.epsilon is None else noise_for_epsilon(args.epsilon, iters, delta)
        tr, va, te = _splits(cfg, graph, seed)
        model, eps = train_dp(graph, tr, DpConfig(clip, sigma, delta, iters), cfg.target.lr,
                              pipeline.sub_seed(seed, "train"), val_mask=va, optimizer=cfg.target.optimizer,
                              hidden=cfg.target.hidden, penultimate=cfg.target.penultimate)
        save_model(model, args.out)
        return {"checkpoint": args.out, "epsilon": eps, "noise_multiplier": sigma,
                "test_accuracy": accuracy(model, graph.adjacency, graph.features, graph.labels, te)}
    if args.p is None:
        raise CliError(f"--strategy {args.strategy} needs --p")
    eps = None
    if args.strategy == "rewire":
        out_graph = rewire(graph, args.p, dseed)
    elif args.strategy == "add":
        out_graph = add_similar_edges(graph, args.p, dseed)
    else:
        out_graph, eps = flip(graph, args.p, dseed)
    save_dataset(out_graph, args.out)
    return {"dataset": args.out, "edges_before": graph.num_edges, "edges_after": out_graph.num_edges,
            "epsilon": eps}


def cmd_eval(args) -> dict:
    cfg = resolve_config(args)
    stored = json.loads(Path(args.result).read_text())
    seed = stored["seed"] if args.seed is None else args.seed
    graph = pipeline.build_graph(cfg, seed)
    if stored.get("dataset_hash") not in (None, graph.digest()):
        raise CliError("result was produced on a different dataset")
    scores = np.asarray(stored["edge_scores"], dtype=np.float64)
    N = graph.num_nodes
    sampled = np.zeros((N, N))
    for i, j in stored["sampled_edges"]:
        sampled[i, j] = sampled[j, i] = 1.0
    es = edge_score_set(scores, graph.adjacency, pipeline.sub_seed(seed, "eval"))
    out = {"auc": auc(es), "ap": average_precision(es)}
    if cfg.eval.graph_stats:
        out["graph_stats"] = macro_stats_similarity(sampled, graph.adjacency).as_dict()
    return out


def cmd_sweep(args) -> dict:
    extra = {"output_dir": args.out} if args.out else {}
    cfg = resolve_config(args, extra)
    if args.seed is not None:
        cfg = apply_overrides(cfg, {"seeds": [args.seed]})
    report = pipeline.run_pipeline(cfg, workers=args.workers)
    return {"output_dir": cfg.output_dir, "summary": pipeline.summarize(report)}


def cmd_report(args):
    path = Path(args.dir) / pipeline.REPORT
    if not path.exists():
        partial = Path(args.dir) / pipeline.PARTIAL
        if partial.exists():
            raise CliError(f"run in {args.dir} failed: {json.loads(partial.read_text())['error']}")
        raise CliError(f"no report in {args.dir}")
    report = json.loads(path.read_text())
    pipeline.check_aggregates(report)
    rows = pipeline.summarize(report)
    if args.json:
        return {"summary": rows}
    print(pipeline.format_summary(rows))
    return None


COMMANDS = {"train": cmd_train, "attack": cmd_attack, "defend": cmd_defend, "eval": cmd_eval,
            "sweep": cmd_sweep, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        out = COMMANDS[args.verb](args)
    except (ValidationError, CliError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, pipeline.PipelineError, OSError, ValueError, FloatingPointError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_FAILURE
    if out is not None:
        _emit(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
