"""End-to-end experiment runner: data, defense, target training, attack, evaluation, report."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .attacks.blackbox import GeConfig, HardLabelOracle, run_gradient_estimation
from .attacks.rl import RlConfig, run_rl_graphmi
from .attacks.whitebox import GraphMiConfig, ReconstructionResult, known_labels, run_graphmi
from .checkpoint import load_model
from .config import ExperimentConfig
from .data import generate_sbm, load_dataset
from .defenses import add_similar_edges, flip, rewire
from .gcn import DpConfig, GcnModel, accuracy, noise_for_epsilon, split_nodes, train, train_dp
from .graph import DensityEstimate, Graph, density, num_pairs
from .metrics import (all_edge_influences, auc, average_precision, baseline_attr_similarity,
                      baseline_emb_similarity, edge_recovery, edge_score_set, macro_stats_similarity,
                      pooled_influence_strata, strata_rows, stratum_trend)

log = logging.getLogger(__name__)

WORKERS_ENV = "GNN_INVERSION_WORKERS"
REPORT = "report.json"
TIMING = "timing.json"
PARTIAL = "report.partial.json"
CURVE = "curve.csv"
TRACES = "traces.csv"
MANIFEST = "manifest.json"


class PipelineError(RuntimeError):
    pass


def sub_seed(seed: int, name: str) -> int:
    """Independent, reproducible seed for one named stage of one repetition."""
    ss = np.random.SeedSequence([seed, zlib.crc32(name.encode())])
    return int(ss.generate_state(1)[0])


def build_graph(cfg: ExperimentConfig, seed: int) -> Graph:
    spec = cfg.dataset
    if spec.path is not None:
        return load_dataset(spec.path)
    s = spec.sbm
    return generate_sbm(s.blocks, s.nodes_per_block, s.p_in, s.p_out, s.feature_noise, seed=sub_seed(seed, "data"))


def _train_target(cfg: ExperimentConfig, graph: Graph, point, train_mask, val_mask, seed: int):
    """Apply the training-time defense and fit the target model. Returns (model, deployed graph, info)."""
    t = cfg.target
    strategy = cfg.defense.strategy
    info: dict = {}
    deployed = graph
    dseed = sub_seed(seed, "defense")
    if strategy == "flip":
        deployed, info["flip_epsilon"] = flip(graph, point, dseed)
    elif strategy == "rewire":
        deployed = rewire(graph, point, dseed)
    elif strategy == "add":
        deployed = add_similar_edges(graph, point, dseed)
    if strategy != "none":
        info["edges_after_defense"] = deployed.num_edges
    tseed = sub_seed(seed, "train")
    if t.checkpoint is not None:
        return load_model(t.checkpoint), deployed, info
    if strategy == "dp":
        d = cfg.defense.dp
        if point is not None:
            sigma = noise_for_epsilon(point, d.iterations, d.delta)
        elif d.target_epsilon is not None:
            sigma = noise_for_epsilon(d.target_epsilon, d.iterations, d.delta)
        else:
            sigma = d.noise_multiplier
        model, eps = train_dp(graph, train_mask, DpConfig(d.clip_norm, sigma, d.delta, d.iterations), t.lr, tseed,
                              val_mask=val_mask, optimizer=t.optimizer, hidden=t.hidden, penultimate=t.penultimate)
        info.update({"dp_epsilon": eps, "dp_noise_multiplier": sigma})
        return model, deployed, info
    model = train(deployed, train_mask, t.epochs, t.lr, tseed, val_mask=val_mask, optimizer=t.optimizer,
                  patience=t.patience, hidden=t.hidden, penultimate=t.penultimate)
    return model, deployed, info


def attack_density(cfg: ExperimentConfig, graph: Graph) -> DensityEstimate:
    if cfg.attack.density is not None:
        return DensityEstimate(cfg.attack.density, False)
    return DensityEstimate(density(graph.adjacency), True)


def graphmi_config(cfg: ExperimentConfig, rho: DensityEstimate) -> GraphMiConfig:
    a = cfg.attack
    return GraphMiConfig(a.alpha, a.beta, a.lr, a.iterations, a.trials, rho, a.label_fraction, a.use_gae,
                         a.degree_eps)


def ge_config(cfg: ExperimentConfig, rho: DensityEstimate) -> GeConfig:
    a = cfg.attack
    return GeConfig(a.mu, a.q, a.lr, a.iterations, a.alpha, a.beta, rho, a.trials, a.degree_eps)


def rl_config(cfg: ExperimentConfig, rho: DensityEstimate, num_nodes: int) -> RlConfig:
    r = cfg.attack.rl
    max_edges = r.max_edges or max(1, rho.num_edges(num_pairs(num_nodes)))
    return RlConfig(gamma=r.gamma, max_edges=max_edges, target_update=r.target_update, episodes=r.episodes,
                    eps_start=r.eps_start, eps_end=r.eps_end, buffer_capacity=r.buffer_capacity,
                    batch_size=r.batch_size, embed_dim=r.embed_dim, q_hidden=r.q_hidden, lr=r.lr,
                    reward_scope=r.reward_scope)


def run_attack(cfg: ExperimentConfig, model: GcnModel, graph: Graph, Y_known: np.ndarray,
               rho: DensityEstimate, seed: int) -> ReconstructionResult:
    method = cfg.attack.method
    X = graph.features
    if method == "graphmi":
        return run_graphmi(model, X, Y_known, graphmi_config(cfg, rho), seed)
    oracle = HardLabelOracle(model, X)
    if method == "ge":
        res = run_gradient_estimation(oracle, X, Y_known, ge_config(cfg, rho), seed)
    else:
        res = run_rl_graphmi(oracle, X, Y_known, rl_config(cfg, rho, graph.num_nodes), seed,
                             all_labels=graph.labels)
    res.extras["oracle_queries"] = oracle.query_count
    return res


def weights_hash(model: GcnModel) -> str:
    h = hashlib.sha256()
    for w in (model.W0, model.W1):
        h.update(np.ascontiguousarray(w, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def evaluate(cfg: ExperimentConfig, result: ReconstructionResult, graph: Graph, model: GcnModel,
             seed: int, edge_data: dict | None = None) -> dict:
    """Ranking metrics against the original edges plus optional graph-level and influence analyses.

    With influence enabled, per-edge influence and recovery arrays are stored
    in ``edge_data`` so repetitions can be pooled.
    """
    eseed = sub_seed(seed, "eval")
    scores = edge_score_set(result.edge_scores, graph.adjacency, eseed)
    out = {
        "auc": auc(scores),
        "ap": average_precision(scores),
        "baseline_attr_auc": auc(edge_score_set(baseline_attr_similarity(graph), graph.adjacency, eseed)),
    }
    if cfg.eval.embedding_baseline:
        out["baseline_emb_auc"] = auc(edge_score_set(baseline_emb_similarity(model, graph), graph.adjacency, eseed))
    if cfg.eval.graph_stats:
        out["graph_stats"] = macro_stats_similarity(result.sampled, graph.adjacency).as_dict()
    if cfg.eval.influence:
        edges, influence = all_edge_influences(model, graph)
        recovery = edge_recovery(result.edge_scores, graph, eseed, edges)
        rows = strata_rows(influence, recovery, cfg.eval.quantiles)
        if edge_data is not None:
            edge_data.update(influence=influence, recovery=recovery)
        out["influence_strata"] = rows
        out["influence_trend"] = stratum_trend(rows)
    return out


def run_unit(cfg: ExperimentConfig, point, seed: int) -> tuple[dict, dict, list, dict]:
    """One (defense point, seed) repetition.

    Returns (report entry, timings, trace rows, per-edge arrays).
    """
    timing = {}
    t0 = time.perf_counter()
    graph = build_graph(cfg, seed)
    train_mask, val_mask, test_mask = split_nodes(graph.labels, cfg.target.train_fraction,
                                                  cfg.target.val_fraction, sub_seed(seed, "split"))
    timing["data"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    model, deployed, info = _train_target(cfg, graph, point, train_mask, val_mask, seed)
    timing["train"] = time.perf_counter() - t0

    rho = attack_density(cfg, graph)
    Y_known = known_labels(graph.labels, cfg.attack.label_fraction, sub_seed(seed, "labels"))
    t0 = time.perf_counter()
    result = run_attack(cfg, model, graph, Y_known, rho, sub_seed(seed, "attack"))
    timing["attack"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    entry = {
        "seed": seed,
        "accuracy": accuracy(model, deployed.adjacency, graph.features, graph.labels, test_mask),
        "queries": int(result.queries),
        "sampled_edges": int(np.triu(result.sampled, 1).sum()),
        "true_edges": graph.num_edges,
        "density": rho.rho,
        "model_hash": weights_hash(model),
        "dataset_hash": graph.digest(),
        **info,
    }
    edge_data: dict = {}
    entry.update(evaluate(cfg, result, graph, model, seed, edge_data))
    timing["eval"] = time.perf_counter() - t0

    traces = []
    if result.attack_loss_trace:
        kind = "episode_reward" if cfg.attack.method == "rl" else "attack_loss"
        traces += [(kind, k, v) for k, v in enumerate(result.attack_loss_trace)]
    rect = result.extras.get("rectified_grad_norm")
    if rect:
        traces += [("rectified_grad_norm", k, v) for k, v in enumerate(rect)]
        q = max(1, len(rect) // 4)
        entry["rect_norm_first_quartile"] = float(np.mean(rect[:q]))
        entry["rect_norm_last_quartile"] = float(np.mean(rect[-q:]))
    return entry, timing, traces, edge_data


def _flatten(entry: dict, prefix: str = "") -> dict[str, float]:
    out = {}
    for k, v in entry.items():
        if k == "seed":
            continue
        if isinstance(v, dict):
            out.update(_flatten(v, f"{prefix}{k}."))
        elif isinstance(v, (int, float)) and not isinstance(v, bool):
            out[prefix + k] = float(v)
    return out


def aggregate(entries: list[dict]) -> dict[str, dict]:
    """Mean and population standard deviation of every numeric per-seed field."""
    flat = [_flatten(e) for e in entries]
    keys = sorted(set().union(*flat))
    out = {}
    for k in keys:
        vals = np.array([f[k] for f in flat if k in f])
        if vals.size == len(flat):
            out[k] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    return out


def check_aggregates(report: dict) -> None:
    """Raise if any stored aggregate does not recompute exactly from its per-seed entries."""
    for point in report["points"]:
        # compared as serialized text so NaN entries match themselves
        if _dump(aggregate(point["seeds"])) != _dump(point["aggregate"]):
            raise PipelineError(f"aggregate mismatch at defense point {point['param']}")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise PipelineError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def _unit_job(args):
    cfg_json, point, seed = args
    return run_unit(ExperimentConfig.model_validate_json(cfg_json), point, seed)


def run_pipeline(cfg: ExperimentConfig, workers: int | None = None) -> dict:
    """Run every (defense point, seed) unit and write the report files into ``cfg.output_dir``.

    ``report.json`` holds only deterministic content; wall times go to
    ``timing.json``. On failure a ``report.partial.json`` marker with the
    completed units is written and :class:`PipelineError` is raised.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in (REPORT, TIMING, PARTIAL, MANIFEST):
        (out / name).unlink(missing_ok=True)
    workers = worker_count() if workers is None else workers
    points = cfg.defense.points()
    jobs = [(cfg.model_dump_json(), p, s) for p in points for s in cfg.seeds]
    results: list = []
    start = time.perf_counter()
    try:
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for r in pool.map(_unit_job, jobs):
                    results.append(r)
        else:
            for job in jobs:
                results.append(_unit_job(job))
    except Exception as exc:
        done = [{"param": jobs[k][1], "seed": jobs[k][2], "entry": results[k][0]} for k in range(len(results))]
        (out / PARTIAL).write_text(_dump({
            "status": "failed",
            "error": f"{type(exc).__name__}: {exc}",
            "failed_unit": {"param": jobs[len(results)][1], "seed": jobs[len(results)][2]}
            if len(results) < len(jobs) else None,
            "completed": done,
        }))
        raise PipelineError(f"pipeline aborted after {len(results)} of {len(jobs)} units: {exc}") from exc

    report_points, timing_points, trace_rows = [], [], []
    for pi, p in enumerate(points):
        chunk = results[pi * len(cfg.seeds):(pi + 1) * len(cfg.seeds)]
        entries = [r[0] for r in chunk]
        point = {"strategy": cfg.defense.strategy, "param": p, "seeds": entries, "aggregate": aggregate(entries)}
        if cfg.eval.influence:
            rows = pooled_influence_strata([r[3]["influence"] for r in chunk], [r[3]["recovery"] for r in chunk],
                                           cfg.eval.quantiles)
            point["influence_pooled"] = {"strata": rows, "trend": stratum_trend(rows)}
        report_points.append(point)
        timing_points.append({"param": p, "seeds": [{"seed": s, **r[1]} for s, r in zip(cfg.seeds, chunk)]})
        for s, r in zip(cfg.seeds, chunk):
            trace_rows += [(p, s, *row) for row in r[2]]

    # the output location is not part of the experiment, so it stays out of the body
    echo = cfg.model_dump(mode="json", exclude={"output_dir"})
    report = {
        "status": "complete",
        "config": echo,
        "config_hash": hashlib.sha256(json.dumps(echo, sort_keys=True).encode()).hexdigest()[:16],
        "points": report_points,
    }
    # the writer verifies its own aggregates after a JSON round trip
    check_aggregates(json.loads(_dump(report)))
    (out / REPORT).write_text(_dump(report))

    with open(out / CURVE, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "param", "accuracy_mean", "accuracy_std", "auc_mean", "auc_std", "ap_mean", "ap_std"])
        for pt in report_points:
            agg = pt["aggregate"]
            w.writerow([pt["strategy"], "" if pt["param"] is None else repr(pt["param"]),
                        *(repr(agg[k][s]) for k in ("accuracy", "auc", "ap") for s in ("mean", "std"))])
    with open(out / TRACES, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["param", "seed", "kind", "step", "value"])
        for p, s, kind, k, v in trace_rows:
            w.writerow(["" if p is None else repr(p), s, kind, k, repr(float(v))])

    (out / TIMING).write_text(_dump({"total_seconds": time.perf_counter() - start, "workers": workers,
                                     "points": timing_points}))
    (out / MANIFEST).write_text(_dump({name: _sha256(out / name) for name in (REPORT, CURVE, TRACES)}))
    return report


def summarize(report: dict) -> list[dict]:
    """One row per defense point with mean/std of the headline metrics."""
    rows = []
    for pt in report["points"]:
        agg = pt["aggregate"]
        row = {"strategy": pt["strategy"], "param": pt["param"]}
        for k in ("accuracy", "auc", "ap", "queries", "baseline_attr_auc"):
            if k in agg:
                row[k] = agg[k]["mean"]
                row[k + "_std"] = agg[k]["std"]
        rows.append(row)
    return rows


def format_summary(rows: list[dict]) -> str:
    lines = []
    for r in rows:
        parts = [f"{r['strategy']}", "-" if r["param"] is None else f"{r['param']:g}"]
        for k in ("accuracy", "auc", "ap"):
            if k in r:
                parts.append(f"{k}={r[k]:.3f}±{r[k + '_std']:.3f}")
        if r.get("queries"):
            parts.append(f"AQ={r['queries']:.0f}")
        lines.append("  ".join(parts))
    return "\n".join(lines)
