"""Command-line entry point: ``gafrnet <command> [flags]``.

Commands: synth, train, eval, sweep-tau, ablate, explain, gradcheck.
Train-style commands read an optional JSON ``--config`` mirroring TrainConfig;
explicit flags override it.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import harness
from .dataio import DataError, SynthSpec, load_table, make_synthetic, save_table
from .metrics import EvalReport, aggregate
from .model import (
    ABLATION_LABELS,
    ABLATIONS,
    FUSION_MODES,
    Checkpoint,
    ConfigError,
    FingerprintMismatch,
    TrainConfig,
    TrainingDiverged,
)

# flag dest -> TrainConfig field
FLAG_FIELDS = {
    "tau": "tau",
    "epochs": "epochs",
    "lr": "learning_rate",
    "ablation": "ablation",
    "fusion_mode": "fusion_mode",
    "heads": "heads",
    "layers": "layers",
    "hidden": "hidden",
}


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _header() -> str:
    return f"# generated {datetime.now(timezone.utc).isoformat(timespec='seconds')}\n"


def _write(out: Path, name: str, body: str, stamp: bool = True) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text((_header() if stamp else "") + body, encoding="utf-8")
    return path


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n"


def resolve_config(args) -> TrainConfig:
    base: dict = {}
    if getattr(args, "config", None):
        base = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(base, dict):
            raise ConfigError("config file must hold a JSON object")
    for flag, name in FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            base[name] = value
    return TrainConfig.from_dict(base)


def _seeds(args) -> list[int]:
    seeds = args.seeds if args.seeds is not None else list(harness.DEFAULT_SEEDS)
    if not seeds:
        raise ConfigError("--seeds must list at least one seed")
    return sorted(seeds)


def _report_payload(label: str, seeds: list[int], reports: list[EvalReport]) -> dict:
    return {
        "variant": label,
        "seeds": seeds,
        "summary": {k: {"mean": m, "std": s} for k, (m, s) in aggregate(reports).items()},
        "per_seed": [dict(seed=s, **r.to_dict()) for s, r in zip(seeds, reports)],
    }


def _emit_summary(out: Path, stem: str, label: str, seeds, reports) -> str:
    row = harness.summary_row(label, reports)
    _write(out, f"{stem}.json", _dump(_report_payload(label, seeds, reports)), stamp=False)
    _write(out, f"{stem}.tsv", harness.to_tsv([row]))
    text = harness.to_text([row])
    _write(out, f"{stem}.txt", text)
    return text


def cmd_synth(args) -> int:
    counts = args.per_class if len(args.per_class) > 1 else args.per_class[0]
    spec = SynthSpec(args.classes, counts, args.dim, args.spread, args.overlap, args.seed)
    table = make_synthetic(spec)
    save_table(table, args.out)
    total = table.n
    print(f"wrote {total} rows to {args.out}")
    for c in range(table.num_classes):
        k = int((table.labels == c).sum())
        print(f"class {c}: {k} samples, a priori {100.0 * k / total:.2f}%")
    mismatched = int((table.cluster != table.labels).sum())
    print(f"cross-class samples: {mismatched}")
    return 0


def cmd_train(args) -> int:
    config = resolve_config(args)
    table = load_table(args.data)
    seeds = _seeds(args)
    out = Path(args.out)
    runs = harness.run_seeds(table, config, seeds, out)
    label = ABLATION_LABELS[config.ablation]
    for r in runs:
        _write(out, f"history_seed{r.seed}.json", _dump(r.result.history), stamp=False)
    print(_emit_summary(out, "report", label, seeds, [r.report for r in runs]), end="")
    return 0


def _checkpoint_paths(path: Path) -> list[Path]:
    if path.is_dir():
        cands = sorted(path.glob("*_best.json")) or sorted(path.glob("checkpoints/*_best.json"))
        if not cands:
            raise FileNotFoundError(f"no *_best.json checkpoints under {path}")
        return cands
    return [path]


def cmd_eval(args) -> int:
    table = load_table(args.data)
    ckpts = [Checkpoint.load(p) for p in _checkpoint_paths(Path(args.checkpoint))]
    ckpts.sort(key=lambda c: c.config.seed)
    reports = [harness.evaluate_checkpoint(c, table) for c in ckpts]
    seeds = [c.config.seed for c in ckpts]
    label = ABLATION_LABELS[ckpts[0].config.ablation]
    print(_emit_summary(Path(args.out), "eval_report", label, seeds, reports), end="")
    return 0


def cmd_sweep_tau(args) -> int:
    config = resolve_config(args)
    table = load_table(args.data)
    grid = args.grid if args.grid is not None else list(harness.DEFAULT_TAU_GRID)
    rows = harness.sweep_tau(table, config, grid, _seeds(args))
    out = Path(args.out)
    _write(out, "sweep_tau.tsv", harness.to_tsv(rows))
    _write(out, "sweep_tau.json", _dump(rows), stamp=False)
    text = harness.to_text(rows)
    _write(out, "sweep_tau.txt", text)
    print(text, end="")
    return 0


def cmd_ablate(args) -> int:
    config = resolve_config(args)
    if args.ablation is not None:
        raise ConfigError("ablate runs every variant; --ablation is not accepted")
    table = load_table(args.data)
    rows = harness.ablate(table, config, _seeds(args))
    out = Path(args.out)
    _write(out, "ablation.tsv", harness.to_tsv(rows))
    _write(out, "ablation.json", _dump(rows), stamp=False)
    text = harness.to_text(rows)
    _write(out, "ablation.txt", text)
    print(text, end="")
    return 0


def cmd_explain(args) -> int:
    table = load_table(args.data)
    ckpt = Checkpoint.load(args.checkpoint)
    report = harness.explain(ckpt, table, args.nodes, args.top_k)
    _write(Path(args.out), "explain.json", _dump(report), stamp=False)
    for node in report["nodes"]:
        t = node["topo"]
        print(
            f"{node['node']}: C={t['clustering']:.3f} d={t['degree_norm']:.3f} "
            f"L={t['label_agreement']:.3f} -> class {node['predicted_class']} "
            f"(p={node['probability']:.3f})"
        )
        for rule in node["rules"]:
            print(f"    {rule['antecedent']}  strength={rule['strength']:.4g}")
        if node["attention"]:
            top = node["attention"][-1]["top"]
            print("    attends: " + ", ".join(f"{a['neighbor']}={a['mean_coefficient']:.3f}" for a in top))
    return 0


def cmd_gradcheck(args) -> int:
    base = TrainConfig(
        seed=args.seed,
        heads=args.heads if args.heads is not None else 4,
        layers=args.layers if args.layers is not None else 2,
        hidden=args.hidden if args.hidden is not None else 16,
    )
    fusions = [args.fusion_mode] if args.fusion_mode else list(FUSION_MODES)
    ablations = [args.ablation] if args.ablation else list(ABLATIONS)
    table = harness.gradcheck_instance(args.seed, dim=args.dim)
    ok = True
    lines = []
    for fusion in fusions:
        for ablation in ablations:
            cfg = dataclasses.replace(base, fusion_mode=fusion, ablation=ablation)
            checks = harness.model_gradcheck(
                cfg, table, step=args.step, tolerance=args.tolerance, sabotage=args.sabotage
            )
            for c in checks:
                ok &= c.passed
                status = "PASS" if c.passed else "FAIL"
                lines.append(f"{status}\t{fusion}\t{ablation}\t{c.name}\t{c.max_rel_error:.3e}")
    body = "status\tfusion\tablation\tparam\tmax_rel_error\n" + "\n".join(lines) + "\n"
    if args.out:
        _write(Path(args.out), "gradcheck.tsv", body)
    print(body, end="")
    print("gradcheck:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gafrnet", description="Graph attention with fuzzy-rule fusion: experiment commands.")
    sub = p.add_subparsers(dest="command", required=True)

    def train_flags(sp, ablation=True):
        sp.add_argument("--data", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--config")
        sp.add_argument("--tau", type=float)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--seeds", type=_ints)
        if ablation:
            sp.add_argument("--ablation", choices=ABLATIONS)
        sp.add_argument("--fusion-mode", dest="fusion_mode", choices=FUSION_MODES)
        sp.add_argument("--heads", type=int)
        sp.add_argument("--layers", type=int)
        sp.add_argument("--hidden", type=int)

    sp = sub.add_parser("synth", help="write a synthetic dataset CSV")
    sp.add_argument("--out", required=True)
    sp.add_argument("--classes", type=int, default=2)
    sp.add_argument("--per-class", dest="per_class", type=int, nargs="+", default=[50])
    sp.add_argument("--dim", type=int, default=8)
    sp.add_argument("--spread", type=float, default=0.3)
    sp.add_argument("--overlap", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train across seeds and report test metrics")
    train_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate saved checkpoints on the test split")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--checkpoint", required=True, help="checkpoint file or directory")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep-tau", help="train at each tau of a grid")
    train_flags(sp)
    sp.add_argument("--grid", type=_floats)
    sp.set_defaults(func=cmd_sweep_tau)

    sp = sub.add_parser("ablate", help="run the four ablation variants")
    train_flags(sp)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("explain", help="rule and attention report for nodes")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--nodes", type=lambda s: [t for t in s.split(",") if t])
    sp.add_argument("--top-k", dest="top_k", type=int, default=3)
    sp.set_defaults(func=cmd_explain)

    sp = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--dim", type=int, default=4, help="feature width of the 12-node instance")
    sp.add_argument("--heads", type=int)
    sp.add_argument("--layers", type=int)
    sp.add_argument("--hidden", type=int)
    sp.add_argument("--fusion-mode", dest="fusion_mode", choices=FUSION_MODES)
    sp.add_argument("--ablation", choices=ABLATIONS)
    sp.add_argument("--step", type=float, default=harness.GRADCHECK_STEP)
    sp.add_argument("--tolerance", type=float, default=1e-4)
    sp.add_argument("--sabotage", action="store_true", help="corrupt one analytic gradient")
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, FingerprintMismatch, TrainingDiverged, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
