"""Command-line surface tying the pipeline together.

Subcommands: gen-data, build-rri, train, cv, ablate, rank-biomarkers,
export-connectivity, grid-lambda. Every run writes a manifest
(arguments, seed, content hashes of inputs) next to its outputs.
Exit codes: 0 success, 2 usage error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from dataclasses import asdict, fields, replace

import numpy as np

from . import studies
from .biomarker import connectivity_for, export_connectivity, feature_ablation_rank
from .data import (
    Dataset,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    load_expression_csv,
    load_features_csv,
    save_dataset,
    train_test_indices,
)
from .errors import ConfigurationError, ParseError, TrustfuseError
from .model import ModelConfig
from .rri import build_edge_matrix, write_edge_matrix
from .trainer import TrainConfig, cross_validate, evaluate, train


# ---------------------------------------------------------------------------
# config file: line-oriented `key = value` with [section] headers

def parse_config(path) -> dict[str, dict[str, str]]:
    sections: dict[str, dict[str, str]] = {}
    current = "default"
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip()
                continue
            if "=" not in line:
                raise ParseError(f"{path}: line {lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            sections.setdefault(current, {})[key.strip()] = value.strip()
    return sections


def _coerce_into(dc_instance, values: dict[str, str]):
    """Apply string config values onto a dataclass, casting by field type."""
    updates = {}
    names = {f.name: f for f in fields(dc_instance)}
    for key, raw in values.items():
        if key not in names:
            raise ConfigurationError(f"unknown config key '{key}'")
        current = getattr(dc_instance, key)
        if isinstance(current, bool):
            updates[key] = raw.lower() in ("1", "true", "yes")
        elif isinstance(current, int):
            updates[key] = int(raw)
        elif isinstance(current, float):
            updates[key] = float(raw)
        elif isinstance(current, tuple):
            updates[key] = tuple(float(v) for v in raw.split())
        elif current is None:
            updates[key] = [int(v) for v in raw.split()]
        else:
            updates[key] = raw
    return replace(dc_instance, **updates)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(outdir, args: argparse.Namespace, input_paths: list[str]) -> None:
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write("command = " + " ".join(sys.argv[1:] or [args.command]) + "\n")
        for key, value in sorted(vars(args).items()):
            if key != "func":
                fh.write(f"arg.{key} = {value}\n")
        for path in input_paths:
            if os.path.isfile(path):
                fh.write(f"sha256.{os.path.basename(path)} = {_sha256(path)}\n")
            elif os.path.isdir(path):
                for name in sorted(os.listdir(path)):
                    full = os.path.join(path, name)
                    if os.path.isfile(full):
                        fh.write(f"sha256.{name} = {_sha256(full)}\n")


def _train_config(args) -> TrainConfig:
    tc = TrainConfig(seed=args.seed, epochs=args.epochs)
    if getattr(args, "config", None):
        sections = parse_config(args.config)
        tc = _coerce_into(tc, sections.get("train", {}))
        if args.epochs is not None:
            tc = replace(tc, epochs=args.epochs)
        tc = replace(tc, seed=args.seed)
    return tc


def _model_config(args, dataset: Dataset, **overrides) -> ModelConfig:
    cfg = ModelConfig(
        d=dataset.n_rois,
        n_classes=dataset.n_classes,
        n_modalities=len(dataset.modalities),
        **overrides,
    )
    if getattr(args, "config", None):
        sections = parse_config(args.config)
        model_keys = sections.get("model", {})
        model_keys = {k: v for k, v in model_keys.items()
                      if k not in ("d", "n_classes", "n_modalities")}
        cfg = _coerce_into(cfg, model_keys)
    return cfg


def _width_overrides(args, dataset: Dataset) -> dict:
    """Model-width settings from --config, for the study commands."""
    cfg = _model_config(args, dataset)
    return {k: getattr(cfg, k) for k in ("n_heads", "f_head", "f_att", "conf_hidden")}


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_data(args) -> int:
    spec = SyntheticSpec()
    if args.spec:
        spec = _coerce_into(spec, parse_config(args.spec).get("spec", {}))
    dataset, truth = generate_synthetic(spec, args.seed)
    save_dataset(dataset, args.out, truth)
    write_manifest(args.out, args, [args.spec] if args.spec else [])
    print(f"wrote synthetic dataset (n={spec.n}, d={spec.d}, M={spec.n_modalities}) to {args.out}")
    return 0


def cmd_build_rri(args) -> int:
    if args.expression:
        matrix = load_expression_csv(args.expression).values
        source = "transcriptomic"
        src_path = args.expression
    else:
        fm = load_features_csv(args.features, args.modality or "modality")
        matrix, source, src_path = fm.values, fm.modality_id, args.features
    edge = build_edge_matrix(matrix, args.threshold, source)
    write_edge_matrix(edge, args.out)
    write_manifest(os.path.dirname(os.path.abspath(args.out)), args, [src_path])
    print(f"wrote {edge.order}x{edge.order} edge matrix ({source}, lambda={args.threshold})")
    return 0


def cmd_train(args) -> int:
    dataset = load_dataset(args.data)
    tc = _train_config(args)
    cfg = _model_config(args, dataset)
    train_idx, test_idx = train_test_indices(dataset.labels, 5, tc.seed)
    trained = train(dataset, cfg, tc, train_idx)
    os.makedirs(args.out, exist_ok=True)
    np.savez(os.path.join(args.out, "model.npz"), **trained.params)
    with open(os.path.join(args.out, "history.csv"), "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for i, v in enumerate(trained.history):
            fh.write(f"{i},{v:.10g}\n")
    acc, f1, auc = evaluate(trained, dataset, test_idx)
    with open(os.path.join(args.out, "test_metrics.csv"), "w", encoding="utf-8") as fh:
        fh.write("acc,f1,auc\n")
        fh.write(f"{acc:.10g},{f1:.10g},{auc:.10g}\n")
    write_manifest(args.out, args, [args.data])
    print(f"trained {tc.epochs} epochs; held-out ACC {acc:.3f} F1 {f1:.3f} AUC {auc:.3f}")
    return 0


def cmd_cv(args) -> int:
    dataset = load_dataset(args.data)
    tc = _train_config(args)
    cfg = _model_config(args, dataset)
    report = cross_validate(dataset, args.k, cfg, tc, task=args.task)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)) or ".", exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    write_manifest(os.path.dirname(os.path.abspath(args.out)), args, [args.data])
    print(report.summary())
    return 0


def cmd_ablate(args) -> int:
    dataset = load_dataset(args.data)
    tc = _train_config(args)
    seeds = [args.seed + i for i in range(args.n_seeds)]
    rows: list[tuple[str, list[float]]] = []

    widths = _width_overrides(args, dataset)
    restrict_graph = args.no_trri or args.no_rri
    if args.confidence is None and not restrict_graph:
        graph = studies.graph_ablation(dataset, tc, seeds, **widths)
        for name, _, _ in studies.GRAPH_VARIANTS:
            rows.append((name, graph[name]))
        confd = studies.confidence_ablation(dataset, tc, seeds, **widths)
        for mode in studies.CONFIDENCE_VARIANTS:
            rows.append((mode.upper(), confd[mode]))
    else:
        cfg_over = dict(widths)
        cfg_over.update({"use_trri": not args.no_trri, "use_rri": not args.no_rri})
        if args.confidence:
            cfg_over["confidence"] = args.confidence
        accs = []
        for seed in seeds:
            cfg = studies._base_cfg(dataset, **cfg_over)
            accs.append(studies.run_once(dataset, cfg, replace(tc, seed=seed))[0])
        label = args.confidence.upper() if args.confidence else (
            f"trri={not args.no_trri},rri={not args.no_rri}")
        rows.append((label, accs))

    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("variant,seed,acc\n")
        for label, accs in rows:
            for seed, acc in zip(seeds, accs):
                fh.write(f"{label},{seed},{acc:.10g}\n")
    write_manifest(os.path.dirname(os.path.abspath(args.out)), args, [args.data])
    for label, accs in rows:
        print(f"{label}: mean ACC {np.mean(accs):.3f} over {len(accs)} seeds")
    return 0


def cmd_rank_biomarkers(args) -> int:
    dataset = load_dataset(args.data)
    tc = _train_config(args)
    cfg = _model_config(args, dataset)
    train_idx, test_idx = train_test_indices(dataset.labels, 5, tc.seed)
    trained = train(dataset, cfg, tc, train_idx)
    ranking = feature_ablation_rank(trained, dataset, train_idx, test_idx)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("roi,modality,importance\n")
        for roi, modality, score in ranking.entries:
            fh.write(f"{roi},{modality},{score:.10g}\n")
    write_manifest(os.path.dirname(os.path.abspath(args.out)), args, [args.data])
    print(f"ranked {len(ranking.entries)} (roi, modality) pairs")
    return 0


def cmd_export_connectivity(args) -> int:
    dataset = load_dataset(args.data)
    roi_ids = dataset.expression.roi_ids
    if args.source == "expression":
        matrix = dataset.expression.values
    else:
        match = [fm for fm in dataset.modalities if fm.modality_id == args.source]
        if not match:
            raise ConfigurationError(f"unknown source '{args.source}'")
        matrix = match[0].values

    if args.ranking:
        scores: dict[str, float] = {}
        with open(args.ranking, "r", encoding="utf-8") as fh:
            next(fh)
            for ln in fh:
                roi, modality, score = ln.strip().split(",")
                if args.source in ("expression", modality) and roi not in scores:
                    scores[roi] = float(score)
        chosen = sorted(scores, key=lambda r: -scores[r])[: args.top_k]
        sizes = [scores[r] for r in chosen]
        indices = [roi_ids.index(r) for r in chosen]
    else:
        indices = list(range(args.top_k))
        sizes = [1.0] * args.top_k
    export = connectivity_for(matrix, indices, roi_ids, sizes)
    export_connectivity(export, args.node_out, args.edge_out)
    write_manifest(os.path.dirname(os.path.abspath(args.edge_out)), args, [args.data])
    print(f"exported {len(indices)}-ROI connectivity to {args.node_out}, {args.edge_out}")
    return 0


def cmd_grid_lambda(args) -> int:
    dataset = load_dataset(args.data)
    tc = _train_config(args)
    seeds = [args.seed + i for i in range(args.n_seeds)]
    grid = studies.lambda_grid(dataset, tc, seeds, **_width_overrides(args, dataset))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("lambda_t,lambda_r,acc\n")
        for (lt, lr), acc in sorted(grid.items()):
            fh.write(f"{lt},{lr},{acc:.10g}\n")
    write_manifest(os.path.dirname(os.path.abspath(args.out)), args, [args.data])
    accs = np.array(list(grid.values()))
    print(f"{len(grid)} cells; ACC range [{accs.min():.3f}, {accs.max():.3f}]")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trustfuse",
        description="Confidence-weighted multi-view multi-modal graph classifier",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    p.add_argument("--spec", help="config file with a [spec] section")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("build-rri", help="threshold correlations into an edge matrix")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--expression", help="gene x ROI CSV")
    group.add_argument("--features", help="sample x ROI CSV")
    p.add_argument("--modality", help="modality id for --features")
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_rri)

    def _common(p):
        p.add_argument("--data", required=True, help="dataset directory")
        p.add_argument("--config", help="config file ([train]/[model] sections)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--epochs", type=int, default=300)

    p = sub.add_parser("train", help="train one model on a stratified split")
    _common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", help="k-fold cross-validation report")
    _common(p)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--task", default="synthetic")
    p.add_argument("--out", required=True, help="report CSV path")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("ablate", help="component ablation comparison")
    _common(p)
    p.add_argument("--no-trri", action="store_true")
    p.add_argument("--no-rri", action="store_true")
    p.add_argument("--confidence", choices=["tfcp", "tcp", "nn"])
    p.add_argument("--n-seeds", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("rank-biomarkers", help="feature-ablation ROI ranking")
    _common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rank_biomarkers)

    p = sub.add_parser("export-connectivity", help="top-ROI connectivity files")
    p.add_argument("--data", required=True)
    p.add_argument("--source", default="expression",
                   help="'expression' or a modality id")
    p.add_argument("--top-k", type=int, default=15)
    p.add_argument("--ranking", help="CSV from rank-biomarkers")
    p.add_argument("--node-out", required=True)
    p.add_argument("--edge-out", required=True)
    p.set_defaults(func=cmd_export_connectivity)

    p = sub.add_parser("grid-lambda", help="threshold sweep over [0.1..0.6]^2")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n-seeds", type=int, default=3)
    p.set_defaults(func=cmd_grid_lambda)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (TrustfuseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
