"""Feature-ablation ROI importance and connectivity export."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import DataError, DimensionError
from .trainer import TrainedModel, predict_proba


@dataclass
class BiomarkerRanking:
    """(roi_id, modality, importance) sorted by non-increasing importance."""

    entries: list[tuple[str, str, float]]

    def top(self, k: int, modality: str | None = None) -> list[tuple[str, str, float]]:
        pool = self.entries if modality is None else [
            e for e in self.entries if e[1] == modality
        ]
        return pool[:k]


def feature_ablation_rank(trained: TrainedModel, dataset: Dataset,
                          train_idx: np.ndarray, eval_idx: np.ndarray) -> BiomarkerRanking:
    """Importance = drop in mean true-class probability when one ROI's
    feature is mean-filled.

    The replaced value is the training-split mean of that (ROI, modality)
    column, so ablation stays in-distribution for standardized features.
    The probability drop is used instead of the accuracy drop because it
    is continuous: redundant informative ROIs each register a marginal
    contribution instead of tying at zero.
    """
    y = dataset.labels[eval_idx]
    rows = np.arange(y.size)
    base_probs = predict_proba(trained, dataset, eval_idx)
    base_score = base_probs[rows, y].mean()
    entries = []
    roi_ids = dataset.expression.roi_ids
    for m, fm in enumerate(dataset.modalities):
        train_means = fm.values[train_idx].mean(axis=0)
        original = fm.values
        for j, roi in enumerate(roi_ids):
            patched = original.copy()
            patched[np.ix_(eval_idx, [j])] = train_means[j]
            fm.values = patched
            try:
                probs = predict_proba(trained, dataset, eval_idx)
            finally:
                fm.values = original
            drop = base_score - probs[rows, y].mean()
            entries.append((roi, fm.modality_id, float(drop)))
    entries.sort(key=lambda e: (-e[2], e[1], e[0]))
    return BiomarkerRanking(entries)


@dataclass
class ConnectivityExport:
    roi_ids: list[str]
    weights: np.ndarray  # (k, k) pairwise PCC, symmetric
    sizes: list[float]  # importance per ROI

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (len(self.roi_ids), len(self.roi_ids)):
            raise DimensionError(f"weights {w.shape} vs {len(self.roi_ids)} ROIs")
        if not np.allclose(w, w.T):
            raise DataError("connectivity weights must be symmetric")
        self.weights = w


def connectivity_for(matrix: np.ndarray, roi_indices: list[int], roi_ids: list[str],
                     sizes: list[float]) -> ConnectivityExport:
    """Pairwise PCC of the selected ROI columns of `matrix`."""
    cols = np.asarray(matrix, dtype=np.float64)[:, roi_indices]
    corr = np.clip(np.corrcoef(cols, rowvar=False), -1.0, 1.0)
    corr = (corr + corr.T) / 2.0
    np.fill_diagonal(corr, 1.0)
    return ConnectivityExport([roi_ids[i] for i in roi_indices], corr, list(sizes))


def export_connectivity(export: ConnectivityExport, node_path, edge_path) -> None:
    """Write viewer-style node and edge files.

    The node file has one ROI per line: x, y, z, color index, size,
    label. Coordinates are deterministic ring positions (no atlas is
    involved); the header comment says so.
    """
    k = len(export.roi_ids)
    with open(node_path, "w", encoding="utf-8") as fh:
        fh.write("# synthetic ring-layout coordinates (no atlas)\n")
        for i, (roi, size) in enumerate(zip(export.roi_ids, export.sizes)):
            angle = 2.0 * math.pi * i / k
            x, y = 50.0 * math.cos(angle), 50.0 * math.sin(angle)
            fh.write(f"{x:.4f}\t{y:.4f}\t0.0000\t1\t{size:.6f}\t{roi}\n")
    with open(edge_path, "w", encoding="utf-8") as fh:
        for row in export.weights:
            fh.write(" ".join(f"{v:.6f}" for v in row) + "\n")
