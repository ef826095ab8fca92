"""Tabular data loading, synthesis, imputation, and stratified splitting.

Features live in a dense float64 matrix.  Categorical cells are integer
codes assigned in order of first appearance; missing cells ("" or "NA" in
CSV) are NaN until imputed, and ``missing_mask`` remembers which they were.
Sensitive attributes are carried separately as integer group codes and are
never part of the feature matrix.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

MISSING_TOKENS = ("", "NA")
KINDS = ("numeric", "categorical")
ROLES = ("feature", "target", "sensitive", "ignore")


class DatasetError(ValueError):
    """Malformed schema, CSV cell, or an impossible split request."""


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    role: str


@dataclass(frozen=True)
class Schema:
    columns: tuple[ColumnSpec, ...]

    def validate(self) -> None:
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DatasetError("schema has duplicate column names")
        for c in self.columns:
            if c.kind not in KINDS:
                raise DatasetError(f"column {c.name!r}: unknown kind {c.kind!r}")
            if c.role not in ROLES:
                raise DatasetError(f"column {c.name!r}: unknown role {c.role!r}")
        targets = [c for c in self.columns if c.role == "target"]
        if len(targets) != 1:
            raise DatasetError(f"schema must declare exactly one target, found {len(targets)}")
        if not any(c.role == "feature" for c in self.columns):
            raise DatasetError("schema declares no feature columns")

    @property
    def target(self) -> ColumnSpec:
        return next(c for c in self.columns if c.role == "target")

    @property
    def features(self) -> tuple[ColumnSpec, ...]:
        return tuple(c for c in self.columns if c.role == "feature")

    @property
    def sensitives(self) -> tuple[ColumnSpec, ...]:
        return tuple(c for c in self.columns if c.role == "sensitive")

    @classmethod
    def from_dict(cls, obj: dict) -> "Schema":
        try:
            cols = tuple(ColumnSpec(c["name"], c["kind"], c["role"]) for c in obj["columns"])
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"bad schema structure: {exc}") from exc
        schema = cls(cols)
        schema.validate()
        return schema

    @classmethod
    def from_json_file(cls, path) -> "Schema":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class Dataset:
    features: np.ndarray          # (n, d) float64
    labels: np.ndarray            # (n,) int64 in [0, class_count)
    class_count: int
    feature_names: tuple[str, ...]
    feature_kinds: tuple[str, ...]
    sensitive: dict[str, np.ndarray] = field(default_factory=dict)
    missing_mask: np.ndarray | None = None
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.missing_mask is None:
            self.missing_mask = np.zeros(self.features.shape, dtype=bool)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def validate(self) -> None:
        n, d = self.features.shape
        if self.labels.shape != (n,):
            raise DatasetError("labels do not align with feature rows")
        if self.missing_mask.shape != (n, d):
            raise DatasetError("missing mask does not align with features")
        if len(self.feature_names) != d or len(self.feature_kinds) != d:
            raise DatasetError("feature metadata does not align with columns")
        if self.class_count < 2:
            raise DatasetError("need at least two classes")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DatasetError("label outside declared classes")
        present = np.unique(self.labels)
        if n and len(present) != self.class_count:
            missing = sorted(set(range(self.class_count)) - set(present.tolist()))
            raise DatasetError(f"classes absent from labels: {missing}")
        for name, codes in self.sensitive.items():
            if codes.shape != (n,):
                raise DatasetError(f"sensitive column {name!r} does not align with rows")

    def subset(self, rows, validate: bool = True) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        out = Dataset(
            features=self.features[rows],
            labels=self.labels[rows],
            class_count=self.class_count,
            feature_names=self.feature_names,
            feature_kinds=self.feature_kinds,
            sensitive={k: v[rows] for k, v in self.sensitive.items()},
            missing_mask=self.missing_mask[rows],
            class_names=self.class_names,
        )
        if validate:
            out.validate()
        return out


def _parse_label_column(cells: list[str], kind: str, col: str):
    """Labels become dense codes 0..C-1; numeric targets must already be so."""
    codes = np.empty(len(cells), dtype=np.int64)
    if kind == "categorical":
        mapping: dict[str, int] = {}
        for i, cell in enumerate(cells):
            if cell in MISSING_TOKENS:
                raise DatasetError(f"row {i}, column {col!r}: target value is missing")
            codes[i] = mapping.setdefault(cell, len(mapping))
        names = tuple(sorted(mapping, key=mapping.get))
        return codes, len(mapping), names
    for i, cell in enumerate(cells):
        if cell in MISSING_TOKENS:
            raise DatasetError(f"row {i}, column {col!r}: target value is missing")
        try:
            v = float(cell)
        except ValueError as exc:
            raise DatasetError(f"row {i}, column {col!r}: cannot parse target {cell!r}") from exc
        if not v.is_integer() or v < 0:
            raise DatasetError(f"row {i}, column {col!r}: label {cell!r} outside declared classes")
        codes[i] = int(v)
    class_count = int(codes.max()) + 1 if len(codes) else 0
    seen = set(codes.tolist())
    gaps = sorted(set(range(class_count)) - seen)
    if gaps:
        raise DatasetError(f"column {col!r}: classes absent from labels: {gaps}")
    return codes, class_count, None


def load_csv(csv_path, schema) -> Dataset:
    """Load a CSV against a schema (path or Schema object).

    Raises DatasetError naming the row and column for any unparseable cell.
    """
    if not isinstance(schema, Schema):
        schema = Schema.from_json_file(schema)
    schema.validate()

    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError("CSV file is empty") from None
        rows = [r for r in reader if r]

    declared = {c.name for c in schema.columns}
    extra = [h for h in header if h not in declared]
    if extra:
        raise DatasetError(f"CSV columns not in schema: {extra}")
    missing_cols = [c.name for c in schema.columns if c.name not in header]
    if missing_cols:
        raise DatasetError(f"schema columns not in CSV: {missing_cols}")
    pos = {h: i for i, h in enumerate(header)}

    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise DatasetError(f"row {i}: expected {len(header)} cells, found {len(r)}")

    n = len(rows)
    feats = schema.features
    d = len(feats)
    x = np.empty((n, d), dtype=np.float64)
    mask = np.zeros((n, d), dtype=bool)
    kinds = tuple(c.kind for c in feats)
    cat_maps: dict[str, dict[str, int]] = {c.name: {} for c in feats if c.kind == "categorical"}

    for j, colspec in enumerate(feats):
        p = pos[colspec.name]
        if colspec.kind == "numeric":
            for i, r in enumerate(rows):
                cell = r[p]
                if cell in MISSING_TOKENS:
                    x[i, j] = np.nan
                    mask[i, j] = True
                    continue
                try:
                    x[i, j] = float(cell)
                except ValueError as exc:
                    raise DatasetError(
                        f"row {i}, column {colspec.name!r}: cannot parse numeric value {cell!r}"
                    ) from exc
        else:
            mapping = cat_maps[colspec.name]
            for i, r in enumerate(rows):
                cell = r[p]
                if cell in MISSING_TOKENS:
                    x[i, j] = np.nan
                    mask[i, j] = True
                else:
                    x[i, j] = mapping.setdefault(cell, len(mapping))

    tgt = schema.target
    labels, class_count, class_names = _parse_label_column(
        [r[pos[tgt.name]] for r in rows], tgt.kind, tgt.name
    )

    sensitive: dict[str, np.ndarray] = {}
    for colspec in schema.sensitives:
        p = pos[colspec.name]
        mapping: dict[str, int] = {}
        codes = np.empty(n, dtype=np.int64)
        for i, r in enumerate(rows):
            # missing sensitive cells become their own group; cells are keyed
            # by raw text so numeric-looking groups stay categorical
            key = r[p] if r[p] not in MISSING_TOKENS else "<missing>"
            codes[i] = mapping.setdefault(key, len(mapping))
        sensitive[colspec.name] = codes

    ds = Dataset(x, labels, class_count, tuple(c.name for c in feats), kinds,
                 sensitive, mask, class_names)
    ds.validate()
    return ds


def impute(ds: Dataset, strategy: str = "zero") -> Dataset:
    """Fill NaN cells; idempotent since a filled dataset has none left."""
    if strategy not in ("zero", "median"):
        raise DatasetError(f"unknown imputation strategy {strategy!r}")
    nan = np.isnan(ds.features)
    if not nan.any():
        return ds
    x = ds.features.copy()
    if strategy == "zero":
        x[nan] = 0.0
    else:
        for j in range(x.shape[1]):
            col_nan = nan[:, j]
            if not col_nan.any():
                continue
            known = x[~col_nan, j]
            if known.size == 0:
                raise DatasetError(
                    f"column {ds.feature_names[j]!r} is entirely missing, median undefined"
                )
            x[col_nan, j] = float(np.median(known))
    return replace(ds, features=x)


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldAssignment:
    fold_of: np.ndarray   # (n,) int64 in [0, k)
    k: int
    seed: int

    def rows_in_fold(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def rows_outside_fold(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)


def stratified_kfold(ds: Dataset, k: int, seed: int) -> FoldAssignment:
    """Shuffle within each class and deal members round-robin to k folds.

    Fold sizes differ by at most one overall and per class.  Errors when any
    class has fewer than k members.
    """
    if k < 2:
        raise DatasetError(f"k must be >= 2, got {k}")
    rng = np.random.default_rng(seed)
    fold_of = np.full(ds.n_rows, -1, dtype=np.int64)
    for c in range(ds.class_count):
        members = np.flatnonzero(ds.labels == c)
        if members.size < k:
            raise DatasetError(f"class {c} has {members.size} rows, fewer than k={k}")
        order = rng.permutation(members)
        for slot, row in enumerate(order):
            fold_of[row] = slot % k
    return FoldAssignment(fold_of, k, seed)


def _stratified_holdout(labels: np.ndarray, fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Split row indices into (rest, held) with per-class held counts of
    round(fraction * class size).  Both sides keep every class or the caller
    sees a DatasetError."""
    rest_parts = []
    held_parts = []
    classes = np.unique(labels)
    for c in classes:
        members = np.flatnonzero(labels == c)
        n_c = members.size
        if n_c < 2:
            raise DatasetError(f"class {int(c)} has {n_c} rows, cannot split")
        take = int(math.floor(fraction * n_c + 0.5))
        if take == 0 or take == n_c:
            raise DatasetError(
                f"fraction {fraction} leaves class {int(c)} empty on one side"
            )
        order = rng.permutation(members)
        held_parts.append(order[:take])
        rest_parts.append(order[take:])
    rest = np.sort(np.concatenate(rest_parts))
    held = np.sort(np.concatenate(held_parts))
    return rest, held


def train_test_split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise DatasetError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = _stratified_holdout(ds.labels, test_fraction, rng)
    return ds.subset(train_idx), ds.subset(test_idx)


def split_indices(labels: np.ndarray, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Index-level variant of train_test_split for callers that must persist
    the row ids (returns (rest, held))."""
    rng = np.random.default_rng(seed)
    return _stratified_holdout(np.asarray(labels), fraction, rng)


def stratified_subsample(ds: Dataset, max_rows: int, seed: int) -> Dataset:
    """Cap the dataset at max_rows, keeping class proportions within one row."""
    if max_rows <= 0:
        raise DatasetError(f"max_rows must be positive, got {max_rows}")
    if ds.n_rows <= max_rows:
        return ds
    rng = np.random.default_rng(seed)
    fraction = max_rows / ds.n_rows
    keep_parts = []
    for c in range(ds.class_count):
        members = np.flatnonzero(ds.labels == c)
        take = max(1, int(math.floor(fraction * members.size + 0.5)))
        keep_parts.append(rng.permutation(members)[:take])
    keep = np.sort(np.concatenate(keep_parts))
    # rounding can overshoot by a row or two; trim at random but seeded
    if keep.size > max_rows:
        keep = np.sort(rng.permutation(keep)[:max_rows])
    out = ds.subset(keep, validate=False)
    out.validate()
    return out


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    n: int = 1000
    d: int = 20
    classes: int = 2
    cluster_sep: float = 2.0
    label_noise: float = 0.1
    group_bias: float = 0.0
    seed: int = 0

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthSpec":
        known = {f: obj[f] for f in cls.__dataclass_fields__ if f in obj}
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise DatasetError(f"unknown generator fields: {sorted(unknown)}")
        return cls(**known)


def synth_generate(spec: SynthSpec | dict) -> Dataset:
    """Gaussian blobs (two per class) labeled by a quadratic-margin rule.

    Each class owns two unit-variance clusters whose centers sit at
    cluster_sep times a random unit direction.  A row's label is the class
    of its nearest center under per-center scaled distances |x-mu|^2/s, so
    the decision boundaries are quadratic and separation directly controls
    difficulty: at large cluster_sep labels coincide with the generating
    cluster.  Labels then flip to a random other class with probability
    label_noise.  A binary group attribute correlates with the first
    feature at strength group_bias (0 means independent).  Draw order is
    fixed, so the same seed yields the same features and groups at any
    noise level.
    """
    if isinstance(spec, dict):
        spec = SynthSpec.from_dict(spec)
    if spec.classes < 2:
        raise DatasetError("generator needs at least two classes")
    if not 0.0 <= spec.label_noise < 1.0:
        raise DatasetError(f"label_noise must be in [0, 1), got {spec.label_noise}")
    if not -1.0 <= spec.group_bias <= 1.0:
        raise DatasetError(f"group_bias must be in [-1, 1], got {spec.group_bias}")
    if spec.n < 10 * spec.classes:
        raise DatasetError("generator needs at least 10 rows per class")

    rng = np.random.default_rng(spec.seed)
    blobs = 2 * spec.classes
    # centers live in a low-dim signal subspace; remaining features are noise
    m = min(6, spec.d)
    dirs = rng.normal(size=(blobs, m))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centers = np.zeros((blobs, spec.d))
    centers[:, :m] = spec.cluster_sep * dirs
    scales = rng.uniform(0.7, 1.3, size=blobs)

    blob_of = rng.permutation(np.arange(spec.n) % blobs)
    x = centers[blob_of] + rng.normal(size=(spec.n, spec.d))

    # distance outside the signal dims is center-independent, so it cancels
    d2 = ((x[:, None, :m] - centers[None, :, :m]) ** 2).sum(axis=2) / scales
    labels = (np.argmin(d2, axis=1) // 2).astype(np.int64)

    x0 = x[:, 0]
    x0 = (x0 - x0.mean()) / (x0.std() or 1.0)
    latent = spec.group_bias * x0 + math.sqrt(max(0.0, 1.0 - spec.group_bias ** 2)) * rng.standard_normal(spec.n)
    group = (latent > 0).astype(np.int64)

    u = rng.random(spec.n)
    offsets = rng.integers(1, spec.classes, size=spec.n)
    flip = u < spec.label_noise
    labels[flip] = (labels[flip] + offsets[flip]) % spec.classes

    ds = Dataset(
        features=x,
        labels=labels,
        class_count=spec.classes,
        feature_names=tuple(f"f{j}" for j in range(spec.d)),
        feature_kinds=tuple("numeric" for _ in range(spec.d)),
        sensitive={"group": group},
    )
    ds.validate()
    return ds


# ---------------------------------------------------------------------------
# feature encoding for linear / neural students
# ---------------------------------------------------------------------------

class FeatureEncoder:
    """One-hot categoricals and z-score numerics, fitted on training rows.

    Categorical codes unseen at fit time map to an all-zero block.  The
    fitted state round-trips through a plain dict so it can ride inside a
    model file.
    """

    def __init__(self):
        self.fitted = False

    def fit(self, ds: Dataset) -> "FeatureEncoder":
        self.kinds = tuple(ds.feature_kinds)
        self.names = tuple(ds.feature_names)
        self.mean = []
        self.std = []
        self.cardinality = []
        for j, kind in enumerate(self.kinds):
            col = ds.features[:, j]
            if kind == "numeric":
                m = float(col.mean())
                s = float(col.std())
                self.mean.append(m)
                self.std.append(s if s > 0 else 1.0)
                self.cardinality.append(0)
            else:
                self.mean.append(0.0)
                self.std.append(1.0)
                self.cardinality.append(int(col.max()) + 1 if col.size else 1)
        self.width = sum(c if c else 1 for c in self.cardinality)
        self.fitted = True
        return self

    def transform(self, features: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise RuntimeError("encoder is not fitted")
        features = np.asarray(features, dtype=np.float64)
        if features.shape[1] != len(self.kinds):
            raise DatasetError(
                f"expected {len(self.kinds)} feature columns, got {features.shape[1]}"
            )
        n = features.shape[0]
        out = np.zeros((n, self.width), dtype=np.float64)
        offset = 0
        for j, kind in enumerate(self.kinds):
            if kind == "numeric":
                out[:, offset] = (features[:, j] - self.mean[j]) / self.std[j]
                offset += 1
            else:
                card = self.cardinality[j]
                codes = np.rint(features[:, j]).astype(np.int64)
                ok = (codes >= 0) & (codes < card)
                out[np.flatnonzero(ok), offset + codes[ok]] = 1.0
                offset += card
        return out

    def to_dict(self) -> dict:
        return {
            "kinds": list(self.kinds),
            "names": list(self.names),
            "mean": list(self.mean),
            "std": list(self.std),
            "cardinality": list(self.cardinality),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "FeatureEncoder":
        enc = cls()
        enc.kinds = tuple(obj["kinds"])
        enc.names = tuple(obj["names"])
        enc.mean = [float(v) for v in obj["mean"]]
        enc.std = [float(v) for v in obj["std"]]
        enc.cardinality = [int(v) for v in obj["cardinality"]]
        enc.width = sum(c if c else 1 for c in enc.cardinality)
        enc.fitted = True
        return enc


def encode_dataset(encoder: FeatureEncoder, ds: Dataset) -> Dataset:
    """Dataset view with encoder output as its (all-numeric) feature matrix."""
    enc = encoder.transform(ds.features)
    return Dataset(
        features=enc,
        labels=ds.labels,
        class_count=ds.class_count,
        feature_names=tuple(f"e{j}" for j in range(enc.shape[1])),
        feature_kinds=tuple("numeric" for _ in range(enc.shape[1])),
        sensitive=ds.sensitive,
        class_names=ds.class_names,
    )
