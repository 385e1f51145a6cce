"""Parameterized mapping families: K-cluster transport and per-sample
optimal transport, plus human-readable rendering of learned shifts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cluster import kmeans
from .data import LabeledDataset

DISPLAY_REAL_DECIMALS = 2


@dataclass
class ClusterModel:
    """K-means fit of the source rows; assignment is per-source-row."""

    k: int
    centroids: np.ndarray
    assignment: np.ndarray
    seed: int


@dataclass
class KClusterParams:
    """One shared displacement per cluster, shape (k, d)."""

    deltas: np.ndarray


@dataclass
class OTParams:
    """An independent displacement per source row, shape (n, d)."""

    deltas: np.ndarray


def fit_clusters(source: LabeledDataset, k: int, seed: int) -> ClusterModel:
    """Seeded k-means++ / Lloyd clustering of the source explanation rows."""
    centroids, labels = kmeans(source.rows, k, seed)
    return ClusterModel(k=k, centroids=centroids, assignment=labels, seed=seed)


def apply_kcluster(rows: np.ndarray, model: ClusterModel, params: KClusterParams) -> np.ndarray:
    """Shift each row by its cluster's delta. No clipping is applied."""
    if params.deltas.shape != (model.k, rows.shape[1]):
        raise ValueError(
            f"delta shape {params.deltas.shape} does not match "
            f"(k={model.k}, d={rows.shape[1]})"
        )
    return rows + params.deltas[model.assignment]


def apply_ot(rows: np.ndarray, params: OTParams) -> np.ndarray:
    """Shift each row by its own delta. No clipping is applied."""
    if params.deltas.shape != rows.shape:
        raise ValueError(f"delta shape {params.deltas.shape} does not match rows {rows.shape}")
    return rows + params.deltas


class MappingFamily:
    """Interface the optimizer drives: a parameter block, an application
    over (a subset of) the source rows, and the projection of row-space
    gradients back onto the parameter block."""

    def init_params(self) -> np.ndarray:
        raise NotImplementedError

    def apply(self, rows: np.ndarray, theta: np.ndarray, indices: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def project_grad(
        self, row_grads: np.ndarray, indices: np.ndarray, out: np.ndarray
    ) -> None:
        """Accumulate gradients w.r.t. the mapped rows at ``indices`` into
        the parameter-shaped array ``out``."""
        raise NotImplementedError


class KClusterFamily(MappingFamily):
    def __init__(self, model: ClusterModel, dim: int):
        self.model = model
        self.dim = dim

    def init_params(self) -> np.ndarray:
        return np.zeros((self.model.k, self.dim))

    def apply(self, rows, theta, indices):
        return rows + theta[self.model.assignment[indices]]

    def project_grad(self, row_grads, indices, out):
        np.add.at(out, self.model.assignment[indices], row_grads)


class OTFamily(MappingFamily):
    def __init__(self, n: int, dim: int):
        self.n = n
        self.dim = dim

    def init_params(self) -> np.ndarray:
        return np.zeros((self.n, self.dim))

    def apply(self, rows, theta, indices):
        return rows + theta[indices]

    def project_grad(self, row_grads, indices, out):
        np.add.at(out, indices, row_grads)


@dataclass
class Explanation:
    """Rendered shift explanation: plain text plus structured records
    (cluster id, column, raw delta, display term)."""

    text: str
    records: list[dict]


def _display_amount(raw: float, kind: str) -> str:
    if kind in ("integer", "boolean", "categorical"):
        amount = int(np.rint(raw))
        return f"{amount:+d}"
    return f"{raw:+.{DISPLAY_REAL_DECIMALS}f}"


def render_explanation(
    model: ClusterModel, params: KClusterParams, dataset: LabeledDataset
) -> Explanation:
    """Per-cluster 'feature +/- amount' terms in raw units.

    Deltas are inverse-scaled, integer-like kinds rounded for display,
    terms sorted by raw magnitude (name breaks ties), and small terms
    suppressed: below 0.5 for integer/boolean/categorical kinds, below
    1% of the raw range for real kinds. A note is added when a cluster's
    mapped center leaves the observed raw range of a feature.
    """
    spans = dataset.scaling[:, 1] - dataset.scaling[:, 0]
    cols = dataset.schema.expanded_columns()
    lines: list[str] = []
    records: list[dict] = []
    sizes = np.bincount(model.assignment, minlength=model.k)
    for c in range(model.k):
        raw_delta = params.deltas[c] * spans
        terms: list[tuple[float, str, str, float]] = []
        for j, (col_name, feature, _) in enumerate(cols):
            raw = float(raw_delta[j])
            if feature.kind == "real":
                threshold = 0.01 * float(spans[j])
            else:
                threshold = 0.5
            if abs(raw) < threshold:
                continue
            display = f"{_display_amount(raw, feature.kind)} {col_name}"
            terms.append((abs(raw), col_name, display, raw))
        terms.sort(key=lambda t: (-t[0], t[1]))
        body = ", ".join(t[2] for t in terms) if terms else "no change"
        out_of_range = _out_of_range_features(model, params, dataset, c)
        note = f" [maps beyond raw range: {', '.join(out_of_range)}]" if out_of_range else ""
        lines.append(f"cluster {c + 1} ({int(sizes[c])} rows): {body}{note}")
        for _, col_name, display, raw in terms:
            records.append(
                {"cluster": c + 1, "feature": col_name, "raw_delta": raw, "display": display}
            )
    return Explanation(text="\n".join(lines), records=records)


def _out_of_range_features(
    model: ClusterModel, params: KClusterParams, dataset: LabeledDataset, c: int
) -> list[str]:
    mapped_center = model.centroids[c] + params.deltas[c]
    out = np.flatnonzero((mapped_center < -1e-9) | (mapped_center > 1 + 1e-9))
    names = dataset.column_names
    return [names[j] for j in out]


def render_mean_shift(deltas: np.ndarray, dataset: LabeledDataset, label: str) -> Explanation:
    """Aggregate rendering for per-sample families: the mean displacement."""
    spans = dataset.scaling[:, 1] - dataset.scaling[:, 0]
    mean_raw = deltas.mean(axis=0) * spans
    cols = dataset.schema.expanded_columns()
    terms = []
    records = []
    for j, (col_name, feature, _) in enumerate(cols):
        raw = float(mean_raw[j])
        threshold = 0.01 * float(spans[j]) if feature.kind == "real" else 0.5
        if abs(raw) < threshold:
            continue
        display = f"{_display_amount(raw, feature.kind)} {col_name}"
        terms.append((abs(raw), col_name, display))
        records.append({"cluster": None, "feature": col_name, "raw_delta": raw, "display": display})
    terms.sort(key=lambda t: (-t[0], t[1]))
    body = ", ".join(t[2] for t in terms) if terms else "no change"
    return Explanation(text=f"{label} (mean over rows): {body}", records=records)
