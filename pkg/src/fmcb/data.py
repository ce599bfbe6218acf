"""Dataset ingestion (CSV / LIBSVM), Monte Carlo splitting, imbalance subsampling."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Dataset",
    "SplitSpec",
    "ParseReport",
    "DataFormatError",
    "parse_csv_dataset",
    "parse_libsvm_dataset",
    "read_csv_matrix",
    "read_libsvm_features",
    "write_csv_dataset",
    "monte_carlo_split",
    "imbalance_subsample",
]


class DataFormatError(ValueError):
    """Raised when an input file cannot be interpreted as a dataset."""


@dataclass(frozen=True)
class Dataset:
    """Dense feature matrix with integer class labels in [0, K).

    ``label_names`` maps a dense class index back to the original label
    string; it is persisted in model files so predictions emit original
    labels. Instances are immutable and safe to share across threads.
    """

    features: np.ndarray            # N x D float64
    labels: np.ndarray              # N int64, values in [0, K)
    num_classes: int
    label_names: tuple[str, ...]
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        labs = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise DataFormatError(f"features must be a non-empty 2-D matrix, got shape {feats.shape}")
        if labs.shape != (feats.shape[0],):
            raise DataFormatError(f"labels shape {labs.shape} does not match {feats.shape[0]} rows")
        if not np.isfinite(feats).all():
            raise DataFormatError("features contain NaN or infinity")
        if self.num_classes < 2:
            raise DataFormatError(f"K < 2 (got K={self.num_classes})")
        if labs.min() < 0 or labs.max() >= self.num_classes:
            raise DataFormatError("labels outside [0, K)")
        if len(self.label_names) != self.num_classes:
            raise DataFormatError("label_names length must equal num_classes")
        feats.setflags(write=False)
        labs.setflags(write=False)

    @property
    def num_rows(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, row_indices: np.ndarray) -> "Dataset":
        """New Dataset holding the given rows; K and label mapping are kept."""
        idx = np.asarray(row_indices, dtype=np.int64)
        return Dataset(
            features=self.features[idx],
            labels=self.labels[idx],
            num_classes=self.num_classes,
            label_names=self.label_names,
            feature_names=self.feature_names,
        )


@dataclass(frozen=True)
class SplitSpec:
    """Monte Carlo cross-validation protocol: repeated random partitions."""

    train_fraction: float = 0.6
    validation_fraction: float = 0.2
    test_fraction: float = 0.2
    num_repeats: int = 5
    seed: int = 0
    stratify: bool = False

    def __post_init__(self):
        fracs = (self.train_fraction, self.validation_fraction, self.test_fraction)
        if any(f <= 0 for f in fracs):
            raise ValueError("split fractions must be positive")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fracs)}")
        if self.num_repeats < 1:
            raise ValueError("num_repeats must be >= 1")


@dataclass(frozen=True)
class ParseReport:
    """What happened during ingestion, alongside the Dataset itself."""

    label_to_index: dict[str, int]
    rejected_rows: int = 0
    rejected_examples: tuple[str, ...] = field(default=())


def _build_label_mapping(raw_labels: list[str], num_classes: int | None) -> tuple[np.ndarray, tuple[str, ...], dict[str, int]]:
    # Lexicographic order over the original label strings keeps the dense
    # index assignment reproducible across files and runs.
    names = sorted(set(raw_labels))
    if num_classes is not None:
        if num_classes < len(names):
            raise DataFormatError(
                f"num_classes={num_classes} but {len(names)} distinct labels present"
            )
        names = names + [f"<unused-{i}>" for i in range(len(names), num_classes)]
    mapping = {name: i for i, name in enumerate(names)}
    labels = np.array([mapping[l] for l in raw_labels], dtype=np.int64)
    return labels, tuple(names), mapping


def parse_csv_dataset(
    path: str,
    label_column: int | str = 0,
    num_classes: int | None = None,
    has_header: bool = False,
    delimiter: str = ",",
) -> tuple[Dataset, ParseReport]:
    """Parse an RFC-4180-style CSV file into a Dataset.

    ``label_column`` is a 0-based column index, or a column name when the
    file has a header. Rows with non-numeric feature cells (or the wrong
    column count) are rejected and tallied in the returned ParseReport.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        rows = [r for r in reader if r]

    if not rows:
        raise DataFormatError(f"{path}: empty dataset")

    header: list[str] | None = None
    if has_header:
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
        if not rows:
            raise DataFormatError(f"{path}: empty dataset (header only)")

    width = len(rows[0])
    if isinstance(label_column, str):
        if header is None:
            raise DataFormatError("label column given by name but file has no header")
        try:
            label_idx = header.index(label_column)
        except ValueError:
            raise DataFormatError(f"label column {label_column!r} not found in header") from None
    else:
        label_idx = label_column if label_column >= 0 else width + label_column
    if not 0 <= label_idx < width:
        raise DataFormatError(f"label column index {label_column} out of range for {width} columns")

    feature_cols = [j for j in range(width) if j != label_idx]
    raw_labels: list[str] = []
    feature_rows: list[list[float]] = []
    rejected = 0
    rejected_examples: list[str] = []
    for lineno, row in enumerate(rows, start=2 if has_header else 1):
        if len(row) != width:
            rejected += 1
            if len(rejected_examples) < 5:
                rejected_examples.append(f"line {lineno}: expected {width} columns, got {len(row)}")
            continue
        try:
            vals = [float(row[j]) for j in feature_cols]
        except ValueError:
            rejected += 1
            if len(rejected_examples) < 5:
                rejected_examples.append(f"line {lineno}: non-numeric feature cell")
            continue
        if not all(math.isfinite(v) for v in vals):
            rejected += 1
            if len(rejected_examples) < 5:
                rejected_examples.append(f"line {lineno}: non-finite feature value")
            continue
        raw_labels.append(row[label_idx].strip())
        feature_rows.append(vals)

    if not feature_rows:
        raise DataFormatError(f"{path}: no parseable rows ({rejected} rejected)")

    labels, names, mapping = _build_label_mapping(raw_labels, num_classes)
    if len(names) < 2:
        raise DataFormatError(f"K < 2 (got K={len(names)})")
    feature_names = tuple(header[j] for j in feature_cols) if header else None
    ds = Dataset(
        features=np.array(feature_rows, dtype=np.float64),
        labels=labels,
        num_classes=len(names),
        label_names=names,
        feature_names=feature_names,
    )
    return ds, ParseReport(mapping, rejected, tuple(rejected_examples))


def parse_libsvm_dataset(
    path: str,
    num_features: int | None = None,
    num_classes: int | None = None,
) -> tuple[Dataset, ParseReport]:
    """Parse a LIBSVM sparse file ("label idx:val ...", 1-based indices).

    Indices must be strictly increasing within a line; absent indices are
    densified to 0.0. D is the maximum index seen unless ``num_features``
    is given.
    """
    raw_labels: list[str] = []
    entries: list[list[tuple[int, float]]] = []
    max_index = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = line.split()
            raw_labels.append(tokens[0])
            prev = 0
            pairs: list[tuple[int, float]] = []
            for tok in tokens[1:]:
                try:
                    idx_s, val_s = tok.split(":", 1)
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise DataFormatError(f"{path}:{lineno}: malformed entry {tok!r}") from None
                if idx <= prev:
                    raise DataFormatError(
                        f"{path}:{lineno}: feature indices must be strictly increasing (got {idx} after {prev})"
                    )
                if num_features is not None and idx > num_features:
                    raise DataFormatError(
                        f"{path}:{lineno}: feature index {idx} exceeds num_features={num_features}"
                    )
                prev = idx
                pairs.append((idx, val))
            max_index = max(max_index, prev)
            entries.append(pairs)

    if not entries:
        raise DataFormatError(f"{path}: empty dataset")

    d = num_features if num_features is not None else max_index
    if d < 1:
        raise DataFormatError(f"{path}: no feature indices found")
    feats = np.zeros((len(entries), d), dtype=np.float64)
    for i, pairs in enumerate(entries):
        for idx, val in pairs:
            feats[i, idx - 1] = val

    labels, names, mapping = _build_label_mapping(raw_labels, num_classes)
    if len(names) < 2:
        raise DataFormatError(f"K < 2 (got K={len(names)})")
    ds = Dataset(
        features=feats,
        labels=labels,
        num_classes=len(names),
        label_names=names,
    )
    return ds, ParseReport(mapping, 0)


def read_csv_matrix(
    path: str,
    has_header: bool = False,
    delimiter: str = ",",
    drop_column: int | None = None,
) -> np.ndarray:
    """Read a plain numeric CSV matrix (all rows must have equal width).

    ``drop_column`` removes one column before parsing, e.g. a label column
    in a file that is being scored.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        rows = [r for r in reader if r]
    if has_header:
        rows = rows[1:]
    if not rows:
        raise DataFormatError(f"{path}: empty matrix")
    width = len(rows[0])
    data = []
    for lineno, row in enumerate(rows, start=2 if has_header else 1):
        if len(row) != width:
            raise DataFormatError(
                f"{path}:{lineno}: ragged row (expected {width} columns, got {len(row)})"
            )
        if drop_column is not None:
            row = [c for j, c in enumerate(row) if j != drop_column % width]
        try:
            data.append([float(c) for c in row])
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    out = np.array(data, dtype=np.float64)
    if not np.isfinite(out).all():
        raise DataFormatError(f"{path}: matrix contains non-finite values")
    return out


def read_libsvm_features(path: str, num_features: int | None = None) -> np.ndarray:
    """Feature matrix of a LIBSVM file, ignoring the label tokens."""
    feats: list[list[tuple[int, float]]] = []
    max_index = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            pairs = []
            prev = 0
            for tok in line.split()[1:]:
                try:
                    idx_s, val_s = tok.split(":", 1)
                    idx, val = int(idx_s), float(val_s)
                except ValueError:
                    raise DataFormatError(f"{path}:{lineno}: malformed entry {tok!r}") from None
                if idx <= prev:
                    raise DataFormatError(f"{path}:{lineno}: indices must be strictly increasing")
                if num_features is not None and idx > num_features:
                    raise DataFormatError(
                        f"{path}:{lineno}: feature index {idx} exceeds num_features={num_features}"
                    )
                prev = idx
                pairs.append((idx, val))
            max_index = max(max_index, prev)
            feats.append(pairs)
    if not feats:
        raise DataFormatError(f"{path}: empty dataset")
    d = num_features if num_features is not None else max_index
    if d < 1:
        raise DataFormatError(f"{path}: no feature indices found")
    out = np.zeros((len(feats), d), dtype=np.float64)
    for i, pairs in enumerate(feats):
        for idx, val in pairs:
            out[i, idx - 1] = val
    return out


def write_csv_dataset(ds: Dataset, path: str, delimiter: str = ",", header: bool = True) -> None:
    """Write a Dataset as CSV with the label in the first column.

    Floats are written with 17 significant digits, so re-parsing recovers
    them bit-exactly.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        if header:
            fnames = ds.feature_names or tuple(f"f{j}" for j in range(ds.num_features))
            writer.writerow(("label",) + fnames)
        for i in range(ds.num_rows):
            row = [ds.label_names[ds.labels[i]]]
            row.extend(format(v, ".17g") for v in ds.features[i])
            writer.writerow(row)


def _part_sizes(n: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    """Largest-remainder rounding with priority train > validation > test.

    Every part gets at least one row; when a floor-zero part must be
    topped up, the row comes from the currently largest part.
    """
    if n < len(fractions):
        raise ValueError(f"cannot split {n} rows into {len(fractions)} non-empty parts")
    quotas = [f * n for f in fractions]
    sizes = [int(math.floor(q)) for q in quotas]
    remainders = [q - s for q, s in zip(quotas, sizes)]
    # Ties go to the earlier part (train before validation before test).
    order = sorted(range(len(sizes)), key=lambda i: (-remainders[i], i))
    for i in range(n - sum(sizes)):
        sizes[order[i % len(sizes)]] += 1
    while min(sizes) == 0:
        sizes[sizes.index(max(sizes))] -= 1
        sizes[sizes.index(0)] += 1
    return tuple(sizes)  # type: ignore[return-value]


def _split_indices(rng: np.random.Generator, indices: np.ndarray, fractions: tuple[float, float, float]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    sizes = _part_sizes(len(indices), fractions)
    perm = indices[rng.permutation(len(indices))]
    a, b = sizes[0], sizes[0] + sizes[1]
    return perm[:a], perm[a:b], perm[b:]


def monte_carlo_split(ds: Dataset, spec: SplitSpec) -> list[tuple[Dataset, Dataset, Dataset]]:
    """Repeated random (train, validation, test) partitions of a Dataset.

    Within one repeat the three parts are disjoint and cover every row.
    Identical spec (including seed) yields identical partitions.
    """
    fractions = (spec.train_fraction, spec.validation_fraction, spec.test_fraction)
    rng = np.random.default_rng(spec.seed)
    out = []
    for _ in range(spec.num_repeats):
        if spec.stratify:
            parts: list[list[np.ndarray]] = [[], [], []]
            for c in range(ds.num_classes):
                cls_idx = np.flatnonzero(ds.labels == c)
                if len(cls_idx) == 0:
                    continue
                if len(cls_idx) < 3:
                    raise ValueError(f"class {c} has {len(cls_idx)} rows; stratified split needs >= 3")
                tr, va, te = _split_indices(rng, cls_idx, fractions)
                parts[0].append(tr)
                parts[1].append(va)
                parts[2].append(te)
            tr, va, te = (np.sort(np.concatenate(p)) for p in parts)
        else:
            tr, va, te = _split_indices(rng, np.arange(ds.num_rows, dtype=np.int64), fractions)
        out.append((ds.subset(tr), ds.subset(va), ds.subset(te)))
    return out


def imbalance_subsample(ds: Dataset, min_keep_fraction: float, seed: int = 0) -> Dataset:
    """Keep a per-class fraction p_c ~ U[min_keep_fraction, 1] of the rows.

    ceil(p_c * n_c) rows of class c are retained, so every class keeps at
    least one row. The label mapping and K are preserved.
    """
    if not 0.0 < min_keep_fraction <= 1.0:
        raise ValueError("min_keep_fraction must be in (0, 1]")
    counts = ds.class_counts()
    if (counts == 0).any():
        empty = int(np.flatnonzero(counts == 0)[0])
        raise ValueError(f"class {empty} has zero rows in the input dataset")
    rng = np.random.default_rng(seed)
    keep: list[np.ndarray] = []
    for c in range(ds.num_classes):
        p = rng.uniform(min_keep_fraction, 1.0)
        cls_idx = np.flatnonzero(ds.labels == c)
        n_keep = min(len(cls_idx), math.ceil(p * len(cls_idx)))
        chosen = rng.choice(cls_idx, size=n_keep, replace=False)
        keep.append(np.sort(chosen))
    return ds.subset(np.sort(np.concatenate(keep)))
