"""Comparison studies: component ablations, modality combinations, lambda grid.

Each study trains independent models on a single stratified train/test
split (derived seeds per run) and reports test accuracy; these back the
`ablate`, `grid-lambda`, and modality-combination CLI commands.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, train_test_indices
from .model import ModelConfig
from .trainer import TrainConfig, evaluate, train

GRAPH_VARIANTS = [
    ("trri+rri", True, True),
    ("trri-only", True, False),
    ("rri-only", False, True),
    ("neither", False, False),
]
CONFIDENCE_VARIANTS = ["tfcp", "tcp", "nn"]


def _base_cfg(dataset: Dataset, **overrides) -> ModelConfig:
    kwargs = dict(
        d=dataset.n_rois,
        n_classes=dataset.n_classes,
        n_modalities=len(dataset.modalities),
    )
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def run_once(dataset: Dataset, cfg: ModelConfig, train_cfg: TrainConfig,
             k: int = 5) -> tuple[float, float, float]:
    """Train on all-but-one stratified fold, evaluate on the held-out one."""
    train_idx, test_idx = train_test_indices(dataset.labels, k, train_cfg.seed)
    trained = train(dataset, cfg, train_cfg, train_idx)
    return evaluate(trained, dataset, test_idx)


def graph_ablation(dataset: Dataset, train_cfg: TrainConfig,
                   seeds: list[int], **cfg_overrides) -> dict[str, list[float]]:
    """Test accuracy per graph variant, one entry per seed."""
    results: dict[str, list[float]] = {}
    for name, use_trri, use_rri in GRAPH_VARIANTS:
        accs = []
        for seed in seeds:
            cfg = _base_cfg(dataset, use_trri=use_trri, use_rri=use_rri, **cfg_overrides)
            tc = replace(train_cfg, seed=seed)
            accs.append(run_once(dataset, cfg, tc)[0])
        results[name] = accs
    return results


def confidence_ablation(dataset: Dataset, train_cfg: TrainConfig,
                        seeds: list[int], **cfg_overrides) -> dict[str, list[float]]:
    """Test accuracy per confidence mechanism, one entry per seed."""
    results: dict[str, list[float]] = {}
    for mode in CONFIDENCE_VARIANTS:
        accs = []
        for seed in seeds:
            cfg = _base_cfg(dataset, confidence=mode, **cfg_overrides)
            tc = replace(train_cfg, seed=seed)
            accs.append(run_once(dataset, cfg, tc)[0])
        results[mode] = accs
    return results


def _combinations(m: int) -> list[tuple[int, ...]]:
    combos = []
    for mask in range(1, 1 << m):
        combos.append(tuple(i for i in range(m) if mask & (1 << i)))
    combos.sort(key=lambda c: (len(c), c))
    return combos


def modality_combinations(dataset: Dataset, train_cfg: TrainConfig,
                          seeds: list[int], **cfg_overrides) -> dict[tuple[int, ...], list[float]]:
    """Test accuracy for every non-empty modality subset, per seed."""
    results: dict[tuple[int, ...], list[float]] = {}
    for combo in _combinations(len(dataset.modalities)):
        sub = dataset.subset_modalities(list(combo))
        accs = []
        for seed in seeds:
            cfg = _base_cfg(sub, **cfg_overrides)
            tc = replace(train_cfg, seed=seed)
            accs.append(run_once(sub, cfg, tc)[0])
        results[combo] = accs
    return results


def lambda_grid(dataset: Dataset, train_cfg: TrainConfig,
                seeds: list[int] | None = None,
                values: list[float] | None = None,
                **cfg_overrides) -> dict[tuple[float, float], float]:
    """Mean test accuracy over the (lambda_t, lambda_r) threshold grid.

    Each cell averages several independent runs on half/half splits
    (k=2): a single run's accuracy on a small held-out fold carries a
    few points of sampling noise, which would swamp the (small) true
    effect of the thresholds.
    """
    values = values if values is not None else [round(0.1 * i, 1) for i in range(1, 7)]
    seeds = seeds if seeds is not None else [train_cfg.seed + i for i in range(3)]
    results: dict[tuple[float, float], float] = {}
    for lt in values:
        for lr in values:
            accs = []
            for seed in seeds:
                cfg = _base_cfg(dataset, **cfg_overrides)
                tc = replace(train_cfg, lambda_t=lt, lambda_r=lr, seed=seed)
                accs.append(run_once(dataset, cfg, tc, k=2)[0])
            results[(lt, lr)] = float(np.mean(accs))
    return results
