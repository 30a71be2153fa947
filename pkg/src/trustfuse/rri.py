"""ROI co-function network construction.

Edge matrices are built by thresholding pairwise Pearson correlation
between ROI columns: one network from the gene-expression matrix
(transcriptomic view) and one per imaging modality (radiomic view).
Per-sample graphs pair a shared edge matrix with that sample's ROI
measurements as node features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError


@dataclass
class ExpressionMatrix:
    """Gene-by-ROI expression values."""

    values: np.ndarray  # (n_g, d)
    gene_ids: list[str]
    roi_ids: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.gene_ids), len(self.roi_ids)):
            raise DimensionError(
                f"expression values {self.values.shape} vs "
                f"{len(self.gene_ids)} genes x {len(self.roi_ids)} ROIs"
            )


@dataclass
class FeatureMatrix:
    """Sample-by-ROI measurements for one imaging modality."""

    values: np.ndarray  # (n, d)
    roi_ids: list[str]
    modality_id: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.roi_ids):
            raise DimensionError(
                f"feature values {self.values.shape} vs {len(self.roi_ids)} ROIs"
            )


@dataclass
class EdgeMatrix:
    """Binary symmetric ROI adjacency with self-loops."""

    adjacency: np.ndarray  # (d, d) of {0, 1}
    threshold: float
    source: str  # "transcriptomic" or a modality id

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionError(f"adjacency must be square, got {a.shape}")
        if not np.array_equal(a, a.T):
            raise DataError("adjacency must be symmetric")
        if not np.all((a == 0) | (a == 1)):
            raise DataError("adjacency entries must be 0 or 1")
        if not np.all(np.diag(a) == 1):
            raise DataError("adjacency diagonal must be all ones (self-loops)")
        self.adjacency = a

    @property
    def order(self) -> int:
        return self.adjacency.shape[0]


@dataclass
class SampleGraph:
    """One sample's graph: shared edges plus its own node features."""

    edges: EdgeMatrix
    node_features: np.ndarray  # (d, f)
    sample_id: str
    view: str  # "T-RRI" or "R-RRI"
    modality_id: str

    def __post_init__(self):
        self.node_features = np.asarray(self.node_features, dtype=np.float64)
        if self.node_features.shape[0] != self.edges.order:
            raise DimensionError(
                f"{self.node_features.shape[0]} nodes vs edge order {self.edges.order}"
            )


def pearson(x, y) -> float:
    """Pearson correlation of two equal-length, non-constant vectors."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise DimensionError(f"pearson needs equal-length vectors, got {x.shape}, {y.shape}")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt((xc * xc).sum())
    sy = np.sqrt((yc * yc).sum())
    if sx == 0.0 or sy == 0.0:
        raise DataError("pearson: constant input has zero variance")
    r = float((xc * yc).sum() / (sx * sy))
    return min(1.0, max(-1.0, r))


def build_edge_matrix(columns, threshold: float, source: str = "transcriptomic") -> EdgeMatrix:
    """Threshold pairwise column correlations into a binary adjacency.

    Entry (i, j) is 1 iff PCC(column_i, column_j) >= threshold for i != j;
    the diagonal is forced to 1 so every node keeps a self-loop.
    """
    cols = np.asarray(columns, dtype=np.float64)
    if cols.ndim != 2 or cols.shape[1] < 2:
        raise DimensionError(f"need a rows x d matrix with d >= 2, got {cols.shape}")
    stds = cols.std(axis=0)
    bad = np.flatnonzero(stds == 0.0)
    if bad.size:
        raise DataError(f"constant column(s) at index {bad.tolist()}: zero variance")
    corr = np.corrcoef(cols, rowvar=False)
    corr = np.clip(corr, -1.0, 1.0)
    adj = (corr >= threshold).astype(np.float64)
    adj = np.maximum(adj, adj.T)  # corrcoef is symmetric; keep it exact
    np.fill_diagonal(adj, 1.0)
    return EdgeMatrix(adjacency=adj, threshold=threshold, source=source)


def assemble_sample_graphs(
    features: FeatureMatrix, edges_t: EdgeMatrix, edges_m: EdgeMatrix
) -> list[tuple[SampleGraph, SampleGraph]]:
    """Per sample, pair a T-RRI and an R-RRI graph over the same features.

    Each sample's row becomes d nodes with one feature each; the two
    graphs of a pair differ only in their edge matrices.
    """
    d = len(features.roi_ids)
    for e in (edges_t, edges_m):
        if e.order != d:
            raise DimensionError(f"edge order {e.order} vs {d} ROIs")
    pairs = []
    for i, row in enumerate(features.values):
        nodes = row.reshape(d, 1)
        sid = str(i)
        pairs.append(
            (
                SampleGraph(edges_t, nodes, sid, "T-RRI", features.modality_id),
                SampleGraph(edges_m, nodes, sid, "R-RRI", features.modality_id),
            )
        )
    return pairs


def write_edge_matrix(edge: EdgeMatrix, path) -> None:
    """Emit the adjacency as a whitespace-separated d x d text matrix."""
    np.savetxt(path, edge.adjacency, fmt="%d")
