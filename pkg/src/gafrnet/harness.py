"""Seed loops, tau sweeps, ablations, explanations and model gradchecks."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import ParamCheck, Tape, backward, gradcheck, zero_grads
from .dataio import FeatureTable, SynthSpec, make_synthetic
from .fuzzy import RuleActivation, export_rules, fire, top_rules
from .metrics import EvalReport, aggregate, evaluate
from .model import (
    ABLATION_LABELS,
    ABLATIONS,
    FUSION_MODES,
    Checkpoint,
    TrainConfig,
    TrainResult,
    forward,
    graph_for,
    init_params,
    loss,
    predict,
    train,
)
from .simgraph import graph_stats
from .topo import topo_features

DEFAULT_SEEDS = (0, 1, 2, 3)
DEFAULT_TAU_GRID = (0.0, 0.25, 0.5, 0.65, 0.75, 0.85, 0.95)
METRIC_COLUMNS = EvalReport.SCALARS
GRADCHECK_STEP = 1e-4
GRADIENT_FLOOR = 1e-7


@dataclass
class SeedRun:
    seed: int
    result: TrainResult
    report: EvalReport


def evaluate_checkpoint(ckpt: Checkpoint, table: FeatureTable, split: str = "test") -> EvalReport:
    pred = predict(ckpt, table)
    m = table.mask(split)
    return evaluate(pred.probs[m], pred.labels[m], table.labels[m], table.num_classes)


def run_seeds(
    table: FeatureTable,
    config: TrainConfig,
    seeds=DEFAULT_SEEDS,
    out_dir: str | Path | None = None,
    tag: str = "",
) -> list[SeedRun]:
    """Train once per seed (sorted), evaluate the best-val checkpoint on test."""
    if not seeds:
        raise ValueError("seed list must be nonempty")
    runs = []
    for seed in sorted(seeds):
        cfg = dataclasses.replace(config, seed=seed)
        result = train(table, cfg)
        report = evaluate_checkpoint(result.best, table)
        if out_dir is not None:
            base = Path(out_dir) / "checkpoints"
            result.best.save(base / f"{tag}seed{seed}_best.json")
            result.final.save(base / f"{tag}seed{seed}_final.json")
        runs.append(SeedRun(seed, result, report))
    return runs


def summary_row(label: str, reports: list[EvalReport], **extra) -> dict:
    row = {"variant": label, **extra}
    for name, (mean, std) in aggregate(reports).items():
        row[f"{name}_mean"] = mean
        row[f"{name}_std"] = std
    return row


def sweep_tau(
    table: FeatureTable,
    config: TrainConfig,
    grid=DEFAULT_TAU_GRID,
    seeds=DEFAULT_SEEDS,
) -> list[dict]:
    rows = []
    for tau in grid:
        cfg = dataclasses.replace(config, tau=float(tau))
        stats = graph_stats(graph_for(table, cfg))
        runs = run_seeds(table, cfg, seeds)
        rows.append(summary_row(
            ABLATION_LABELS[cfg.ablation],
            [r.report for r in runs],
            tau=float(tau),
            edges=stats["edges"],
            density=stats["density"],
            isolated=stats["isolated_count"],
        ))
    return rows


def ablate(table: FeatureTable, config: TrainConfig, seeds=DEFAULT_SEEDS) -> list[dict]:
    """One row per variant in the order w/o G, w/o A, w/o FR, full."""
    rows = []
    for ablation in ("no_graph", "no_attention", "no_fuzzy", "full"):
        cfg = dataclasses.replace(config, ablation=ablation)
        runs = run_seeds(table, cfg, seeds)
        rows.append(summary_row(ABLATION_LABELS[ablation], [r.report for r in runs], ablation=ablation))
    return rows


def resolve_nodes(table: FeatureTable, nodes) -> list[int]:
    lookup = {sid: i for i, sid in enumerate(table.ids)}
    out = []
    for node in nodes:
        key = str(node)
        if key in lookup:
            out.append(lookup[key])
        elif key.lstrip("-").isdigit() and 0 <= int(key) < table.n:
            out.append(int(key))
        else:
            raise KeyError(f"unknown node {node!r}")
    return out


def explain(ckpt: Checkpoint, table: FeatureTable, nodes=None, top_k: int = 3) -> dict:
    """Per-node descriptors, strongest rules, attention neighborhoods, prediction."""
    pred = predict(ckpt, table)
    params = pred.params
    idx = list(range(table.n)) if nodes is None else resolve_nodes(table, nodes)
    top_k = max(1, int(top_k))
    acts = pred.rules
    att = pred.attention
    out_nodes = []
    for u in idx:
        entry = {
            "node": table.ids[u],
            "index": u,
            "topo": {
                "clustering": float(pred.topo[u, 0]),
                "degree_norm": float(pred.topo[u, 1]),
                "label_agreement": float(pred.topo[u, 2]),
            },
            "rules": top_rules(params.rules, acts, u, top_k) if acts is not None else [],
            "attention": [],
            "predicted_class": int(pred.labels[u]),
            "probability": float(pred.probs[u, pred.labels[u]]),
        }
        for layer in range(len(att.layers)):
            nbrs, coef = att.neighborhood(u, layer)
            heads = [
                {"neighbors": [table.ids[v] for v in nbrs], "coefficients": coef[:, h].tolist()}
                for h in range(coef.shape[1])
            ]
            mean = coef.mean(axis=1)
            order = sorted(range(len(nbrs)), key=lambda i: (-mean[i], nbrs[i]))[:top_k]
            entry["attention"].append({
                "layer": layer,
                "top": [{"neighbor": table.ids[nbrs[i]], "mean_coefficient": float(mean[i])} for i in order],
                "heads": heads,
            })
        out_nodes.append(entry)
    report = {"nodes": out_nodes}
    if acts is not None:
        inventory = export_rules(params.rules, params.membership, acts, top_k, table.train_mask, table.ids)
        report["rules"] = inventory["rules"]
    return report


def recompute_rules(ckpt: Checkpoint, table: FeatureTable) -> RuleActivation:
    """Fire the checkpoint's rules directly on freshly computed descriptors."""
    g = graph_for(table, ckpt.config)
    topo = topo_features(g, table.labels, table.train_mask)
    params = ckpt.model()
    return fire(topo, params.rules, params.membership)


def gradcheck_instance(seed: int = 0, n_per_class: int = 6, dim: int = 4) -> FeatureTable:
    """12-node two-class table whose tau=0.75 graph has edges and isolated nodes."""
    return make_synthetic(SynthSpec(2, n_per_class, dim, 0.5, 0.1, seed))


def model_gradcheck(
    config: TrainConfig,
    table: FeatureTable | None = None,
    probe_count: int = 6,
    step: float = GRADCHECK_STEP,
    tolerance: float = 1e-4,
    sabotage: bool = False,
) -> list[ParamCheck]:
    """Gradcheck every parameter group of the full loss at a randomized point.

    Params are jittered away from their init so no gradient is trivially zero
    (the classifier starts at zero).  Membership widths are widened to about
    0.4: at the default 0.15, far-off rules fire at ~1e-10 and their gradients
    sink below the central-difference round-off floor (~1e-12).
    """
    table = table if table is not None else gradcheck_instance(config.seed)
    g = graph_for(table, config)
    topo = topo_features(g, table.labels, table.train_mask)
    params = init_params(config, table.dim, table.num_classes)
    base = params.state()
    rng = np.random.default_rng(config.seed + 1000)

    def loss_fn(tape: Tape):
        out = forward(tape, table.features, g, topo, params, config.ablation, config.fusion_mode)
        return loss(tape, out.logits, table.labels, table.train_mask, config.class_weighting, table.num_classes)

    # Central differences are only valid away from LeakyReLU kinks, so redraw
    # the point until every attention score clears the kink by 20 steps.
    # The target half of `a` only matters through neighborhoods whose scores
    # straddle zero (otherwise it cancels in the softmax), and its gradient can
    # sit near the ~1e-12 round-off floor; redraw such heads until every
    # coordinate of `a` has an analytic gradient of at least GRADIENT_FLOOR.
    heads = [a for layer in params.layers for a in layer.a]
    redraw = None
    for _ in range(500):
        if redraw is None:
            for p in params.all():
                p.value = base[p.name] + rng.normal(0.0, 0.3, p.shape)
            lw = params.membership.log_widths
            lw.value = np.log(0.4) + rng.normal(0.0, 0.1, lw.shape)
        else:
            for a in redraw:
                a.value = base[a.name] + rng.normal(0.0, 0.3, a.shape)
        probe = Tape()
        out = loss_fn(probe)
        scores = probe.inputs_of("leaky_relu")
        if any(np.abs(e).min() <= 20 * step for e in scores):
            redraw = None
            continue
        if not scores:
            break
        zero_grads(heads)
        backward(probe, out)
        redraw = [a for a in heads if np.abs(a.grad).min() < GRADIENT_FLOOR]
        if not redraw:
            break
    else:
        raise RuntimeError("could not find a well-conditioned gradcheck point")

    def corrupt(plist):
        plist[0].grad = plist[0].grad + 1.0

    return gradcheck(
        loss_fn, params.all(), probe_count, step, tolerance,
        rng=np.random.default_rng(config.seed),
        post_backward=corrupt if sabotage else None,
    )


def gradcheck_matrix(base: TrainConfig, table: FeatureTable | None = None, **kw) -> dict[tuple[str, str], list[ParamCheck]]:
    out = {}
    for fusion in FUSION_MODES:
        for ablation in ABLATIONS:
            cfg = dataclasses.replace(base, fusion_mode=fusion, ablation=ablation)
            out[(fusion, ablation)] = model_gradcheck(cfg, table, **kw)
    return out


def format_value(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def to_tsv(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    lines = ["\t".join(cols)]
    lines += ["\t".join(format_value(r[c]) for c in cols) for r in rows]
    return "\n".join(lines) + "\n"


def to_text(rows: list[dict], key: str = "variant") -> str:
    """Table-shaped 'mean±std' rendering."""
    lines = []
    for r in rows:
        cells = [f"{r[key]:<18}"]
        for extra in ("tau", "edges", "density", "isolated"):
            if extra in r:
                cells.append(f"{extra}={format_value(r[extra])}")
        for m in METRIC_COLUMNS:
            cells.append(f"{m}={r[m + '_mean']:.4f}±{r[m + '_std']:.4f}")
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"
