"""Dataset ingestion, feature schema, preprocessing, and group assignment.

Raw CSV tables are expanded (one-hot for categoricals) and min-max
scaled into the [0, 1] explanation space. Scaling statistics are always
computed over the union of source and target so both live in one metric
space; the per-column (min, max) pairs are recorded for inverse scaling.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .cluster import kmeans
from .errors import GroupingError, IngestError, SchemaError

KINDS = ("real", "integer", "boolean", "categorical")

_BOOL_STRINGS = {
    "0": 0.0, "1": 1.0,
    "false": 0.0, "true": 1.0,
    "f": 0.0, "t": 1.0,
}


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str
    actionable: bool = True
    categories: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.name:
            raise SchemaError("feature name must be non-empty")
        if self.kind not in KINDS:
            raise SchemaError(f"unknown feature kind {self.kind!r} for {self.name!r}")
        if self.kind == "categorical":
            if self.categories is None or len(self.categories) < 2:
                raise SchemaError(
                    f"categorical feature {self.name!r} needs >= 2 categories"
                )
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"duplicate categories on feature {self.name!r}")
        elif self.categories is not None:
            raise SchemaError(f"categories only allowed on categorical features ({self.name!r})")


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered, typed feature descriptions; the feature order is the
    canonical column order for every matrix downstream."""

    features: tuple[Feature, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")
        if not names:
            raise SchemaError("schema must declare at least one feature")

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def feature(self, name: str) -> Feature:
        for f in self.features:
            if f.name == name:
                return f
        raise SchemaError(f"feature {name!r} not in schema")

    def expanded_columns(self) -> list[tuple[str, Feature, int | None]]:
        """(column name, owning feature, category index) per matrix column."""
        cols: list[tuple[str, Feature, int | None]] = []
        for f in self.features:
            if f.kind == "categorical":
                for j, cat in enumerate(f.categories):
                    cols.append((f"{f.name}={cat}", f, j))
            else:
                cols.append((f.name, f, None))
        return cols

    def to_dict(self) -> dict:
        return {
            "features": [
                {
                    "name": f.name,
                    "kind": f.kind,
                    "actionable": f.actionable,
                    **({"categories": list(f.categories)} if f.categories else {}),
                }
                for f in self.features
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        feats = []
        for item in d.get("features", []):
            feats.append(
                Feature(
                    name=item["name"],
                    kind=item["kind"],
                    actionable=bool(item.get("actionable", True)),
                    categories=tuple(item["categories"]) if "categories" in item else None,
                )
            )
        return cls(tuple(feats))

    @classmethod
    def from_json(cls, path: str) -> "FeatureSchema":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class RawTable:
    """Parsed CSV contents in schema order; categoricals keep their
    category strings."""

    schema: FeatureSchema
    role: str
    columns: dict[str, list]

    @property
    def n_rows(self) -> int:
        return len(self.columns[self.schema.names[0]])

    def to_csv(self, path: str) -> None:
        names = self.schema.names
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            for i in range(self.n_rows):
                writer.writerow([_format_cell(self.schema.feature(n), self.columns[n][i]) for n in names])


def _format_cell(feature: Feature, value) -> str:
    if feature.kind == "categorical":
        return str(value)
    if feature.kind in ("integer", "boolean"):
        return str(int(value))
    return repr(float(value))


def _parse_cell(feature: Feature, text: str, row: int):
    text = text.strip()
    try:
        if feature.kind == "real":
            v = float(text)
        elif feature.kind == "integer":
            v = float(text)
            if abs(v - round(v)) > 1e-9:
                raise ValueError("not an integer")
            v = float(round(v))
        elif feature.kind == "boolean":
            key = text.lower()
            if key not in _BOOL_STRINGS:
                raise ValueError("not a boolean")
            v = _BOOL_STRINGS[key]
        else:  # categorical
            if text not in feature.categories:
                raise ValueError(f"unknown category {text!r}")
            return text
        if not np.isfinite(v):
            raise ValueError("non-finite value")
        return v
    except ValueError as exc:
        raise IngestError(
            f"row {row}, column {feature.name!r}: cannot parse {text!r} "
            f"as {feature.kind} ({exc})"
        ) from None


def ingest_csv(path: str, schema: FeatureSchema, role: str) -> RawTable:
    """Load a CSV with a header row into a RawTable, preserving row order."""
    if role not in ("source", "target"):
        raise ValueError(f"role must be 'source' or 'target', got {role!r}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        known = set(schema.names)
        for col in header:
            if col not in known:
                raise IngestError(f"{path}: column {col!r} not declared in schema")
        missing = [n for n in schema.names if n not in header]
        if missing:
            raise IngestError(f"{path}: missing column(s) {missing}")
        index = {name: header.index(name) for name in schema.names}
        columns: dict[str, list] = {name: [] for name in schema.names}
        for row_no, record in enumerate(reader):
            if not record or (len(record) == 1 and not record[0].strip()):
                continue
            if len(record) != len(header):
                raise IngestError(
                    f"{path}: row {row_no} has {len(record)} cells, expected {len(header)}"
                )
            for f in schema.features:
                columns[f.name].append(_parse_cell(f, record[index[f.name]], row_no))
    table = RawTable(schema=schema, role=role, columns=columns)
    if table.n_rows == 0:
        raise IngestError(f"{path}: no data rows")
    return table


def raw_table_from_arrays(schema: FeatureSchema, role: str, columns: dict[str, list]) -> RawTable:
    """Build a RawTable directly from in-memory columns (same validation
    semantics as CSV parsing for kinds is assumed done by the caller)."""
    n = {len(v) for v in columns.values()}
    if len(n) != 1:
        raise IngestError("columns have inconsistent lengths")
    if set(columns) != set(schema.names):
        raise IngestError("columns do not match schema feature names")
    return RawTable(schema=schema, role=role, columns={k: list(v) for k, v in columns.items()})


@dataclass
class LabeledDataset:
    """Preprocessed feature matrix in explanation space plus group labels.

    rows is (n, D) with D the one-hot expanded column count; every entry
    is min-max scaled to [0, 1] using statistics over source u target.
    scaling is (D, 2) storing the raw (min, max) per column. group_of is
    1-based and contiguous once groups are assigned.
    """

    schema: FeatureSchema
    column_names: tuple[str, ...]
    rows: np.ndarray
    scaling: np.ndarray
    role: str
    group_of: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def n_columns(self) -> int:
        return self.rows.shape[1]

    @property
    def n_groups(self) -> int:
        if self.group_of is None:
            raise GroupingError("groups have not been assigned")
        return int(self.group_of.max())

    def inverse_scaled(self, rows: np.ndarray | None = None) -> np.ndarray:
        """Map explanation-space rows back to raw units column by column."""
        rows = self.rows if rows is None else rows
        lo = self.scaling[:, 0]
        hi = self.scaling[:, 1]
        return rows * (hi - lo) + lo

    def column_index(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise SchemaError(f"column {name!r} not present") from None

    def feature_columns(self, name: str) -> list[int]:
        """Indices of the expanded columns owned by a schema feature."""
        feature = self.schema.feature(name)
        if feature.kind == "categorical":
            return [self.column_index(f"{name}={c}") for c in feature.categories]
        return [self.column_index(name)]

    def raw_feature_values(self, name: str, rows: np.ndarray | None = None) -> np.ndarray:
        """Per-row raw value of a feature; categoricals yield the argmax
        category index (ties to the lowest index)."""
        feature = self.schema.feature(name)
        raw = self.inverse_scaled(rows)
        cols = self.feature_columns(name)
        if feature.kind == "categorical":
            return np.argmax(raw[:, cols], axis=1).astype(np.float64)
        return raw[:, cols[0]]

    def with_groups(self, group_of: np.ndarray) -> "LabeledDataset":
        group_of = np.asarray(group_of, dtype=np.int64)
        if group_of.shape != (self.n,):
            raise GroupingError("group labels must align with rows")
        return replace(self, group_of=group_of)


def preprocess(
    source_raw: RawTable, target_raw: RawTable, schema: FeatureSchema
) -> tuple[LabeledDataset, LabeledDataset]:
    """Expand categoricals to one-hot and min-max scale every column
    using statistics over the union of both tables. Constant columns
    scale to 0."""
    for table in (source_raw, target_raw):
        if table.schema.names != schema.names:
            raise SchemaError("raw table schema does not match")
    cols = schema.expanded_columns()
    mats = []
    for table in (source_raw, target_raw):
        n = table.n_rows
        mat = np.zeros((n, len(cols)))
        j = 0
        for f in schema.features:
            values = table.columns[f.name]
            if f.kind == "categorical":
                idx = {c: i for i, c in enumerate(f.categories)}
                for i, v in enumerate(values):
                    mat[i, j + idx[v]] = 1.0
                j += len(f.categories)
            else:
                mat[:, j] = np.asarray(values, dtype=np.float64)
                j += 1
        if not np.all(np.isfinite(mat)):
            raise SchemaError(f"non-finite values in {table.role} table")
        mats.append(mat)

    union = np.vstack(mats)
    lo = union.min(axis=0)
    hi = union.max(axis=0)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    scaling = np.stack([lo, hi], axis=1)
    names = tuple(name for name, _, _ in cols)
    out = []
    for table, mat in zip((source_raw, target_raw), mats):
        scaled = (mat - lo) / safe
        scaled[:, span == 0] = 0.0
        out.append(
            LabeledDataset(
                schema=schema,
                column_names=names,
                rows=scaled,
                scaling=scaling,
                role=table.role,
            )
        )
    return out[0], out[1]


@dataclass(frozen=True)
class GroupingRule:
    """How rows get their group labels.

    variant 'by-attribute' groups by the raw values of one feature,
    'by-metafeature-quartiles' thresholds numerator^2/denominator at the
    union Q1/Q3 (three groups), 'by-clustering' fits seeded k-means on
    the concatenated explanation-space rows.
    """

    variant: str
    feature: str | None = None
    numerator: str | None = None
    denominator: str | None = None
    k: int | None = None
    seed: int = 0

    @classmethod
    def by_attribute(cls, feature: str) -> "GroupingRule":
        return cls(variant="by-attribute", feature=feature)

    @classmethod
    def by_metafeature_quartiles(cls, numerator: str, denominator: str) -> "GroupingRule":
        return cls(
            variant="by-metafeature-quartiles",
            numerator=numerator,
            denominator=denominator,
        )

    @classmethod
    def by_clustering(cls, k: int, seed: int = 0) -> "GroupingRule":
        return cls(variant="by-clustering", k=k, seed=seed)

    def validate(self, schema: FeatureSchema) -> None:
        if self.variant == "by-attribute":
            if self.feature is None:
                raise GroupingError("by-attribute needs a feature name")
            schema.feature(self.feature)
        elif self.variant == "by-metafeature-quartiles":
            for name in (self.numerator, self.denominator):
                if name is None:
                    raise GroupingError("quartile rule needs numerator and denominator")
                if schema.feature(name).kind != "real":
                    raise GroupingError(f"meta-feature inputs must be real-kind ({name!r})")
        elif self.variant == "by-clustering":
            if self.k is None or self.k < 1:
                raise GroupingError("by-clustering needs k >= 1")
        else:
            raise GroupingError(f"unknown grouping variant {self.variant!r}")

    def to_dict(self) -> dict:
        d = {"variant": self.variant, "seed": self.seed}
        for key in ("feature", "numerator", "denominator", "k"):
            v = getattr(self, key)
            if v is not None:
                d[key] = v
        return d


def assign_groups(
    source: LabeledDataset, target: LabeledDataset, rule: GroupingRule
) -> tuple[LabeledDataset, LabeledDataset]:
    """Populate group_of on both datasets with contiguous ids {1..G}."""
    rule.validate(source.schema)
    n_src = source.n
    if rule.variant == "by-attribute":
        vals = np.concatenate(
            [source.raw_feature_values(rule.feature), target.raw_feature_values(rule.feature)]
        )
        keys = np.round(vals, 9)
        universe = np.unique(keys)
        labels = np.searchsorted(universe, keys) + 1
    elif rule.variant == "by-metafeature-quartiles":
        num = np.concatenate(
            [source.raw_feature_values(rule.numerator), target.raw_feature_values(rule.numerator)]
        )
        den = np.concatenate(
            [
                source.raw_feature_values(rule.denominator),
                target.raw_feature_values(rule.denominator),
            ]
        )
        zero = np.flatnonzero(den == 0)
        if zero.size:
            raise GroupingError(
                f"meta-feature undefined: denominator {rule.denominator!r} is zero "
                f"at row(s) {zero[:5].tolist()} of the concatenated data"
            )
        meta = num * num / den
        q1, q3 = np.quantile(meta, [0.25, 0.75])
        labels = np.where(meta <= q1, 1, np.where(meta <= q3, 2, 3))
    else:  # by-clustering
        stacked = np.vstack([source.rows, target.rows])
        _, cluster_labels = kmeans(stacked, rule.k, rule.seed)
        labels = cluster_labels + 1
    return (
        source.with_groups(labels[:n_src]),
        target.with_groups(labels[n_src:]),
    )


def group_slices(dataset: LabeledDataset) -> list[tuple[int, np.ndarray]]:
    """Row-index sets per group, ordered by group id; a partition."""
    if dataset.group_of is None:
        raise GroupingError("groups have not been assigned")
    out = []
    for gid in np.unique(dataset.group_of):
        out.append((int(gid), np.flatnonzero(dataset.group_of == gid)))
    return out


def paired_group_slices(
    source: LabeledDataset, target: LabeledDataset
) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """Matched (group id, source indices, target indices) triples.

    A group present on one side but empty on the other is an error: the
    group's PE is undefined without both slices.
    """
    src = dict((g, idx) for g, idx in group_slices(source))
    tgt = dict((g, idx) for g, idx in group_slices(target))
    missing_tgt = sorted(set(src) - set(tgt))
    missing_src = sorted(set(tgt) - set(src))
    if missing_tgt or missing_src:
        parts = []
        if missing_tgt:
            parts.append(f"group(s) {missing_tgt} empty in target")
        if missing_src:
            parts.append(f"group(s) {missing_src} empty in source")
        raise GroupingError("; ".join(parts))
    return [(g, src[g], tgt[g]) for g in sorted(src)]
