import os
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, ShapeError


@dataclass
class TabularDataset:
    """Features, labels and (when known) which features are spurious.

    Attributes:
        features: (N, d)
        labels: (N, ) real values or class indices
        feature_names: d names
        spurious_flags: (d, ) True for features known to be non-significant
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: List[str] = field(default_factory=list)
    spurious_flags: Optional[np.ndarray] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.features.ndim != 2:
            raise ShapeError("Features must be a matrix; got shape {}.".format(self.features.shape))
        n, d = self.features.shape
        if self.labels.shape[0] != n:
            raise ShapeError("Got {} labels for {} rows.".format(self.labels.shape[0], n))
        if not self.feature_names:
            self.feature_names = ["x{}".format(j) for j in range(d)]
        if len(self.feature_names) != d:
            raise ShapeError("Got {} feature names for {} columns.".format(len(self.feature_names), d))
        if self.spurious_flags is None:
            self.spurious_flags = np.zeros(d, dtype=bool)
        self.spurious_flags = np.asarray(self.spurious_flags, dtype=bool)
        if self.spurious_flags.shape != (d,):
            raise ShapeError("Got {} spurious flags for {} columns.".format(self.spurious_flags.shape[0], d))
        if np.any(~np.isfinite(self.features)):
            raise DataError("Features contain missing or non-finite values.")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def take_rows(self, rows: np.ndarray) -> "TabularDataset":
        return replace(self, features=self.features[rows], labels=self.labels[rows])

    def take_columns(self, columns: Sequence[int]) -> "TabularDataset":
        columns = list(columns)
        return TabularDataset(
            features=self.features[:, columns],
            labels=self.labels,
            feature_names=[self.feature_names[j] for j in columns],
            spurious_flags=self.spurious_flags[columns],
        )


def load_csv(path: str, label_column: Union[str, int], has_header: bool = True) -> TabularDataset:
    """Read a numeric, rectangular CSV file; one column holds the labels.

    Args:
        label_column: header name, or 0-based column position (required when has_header is False)
    """
    if not os.path.isfile(path):
        raise DataError("CSV file not found: {}".format(path))
    try:
        raw = pd.read_csv(
            path,
            header=0 if has_header else None,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=True,
            encoding="utf-8",
        )
    except pd.errors.ParserError as e:
        # pandas reports "Expected k fields in line n, saw m" for rows that are too long
        raise DataError("Ragged CSV row in {}: {}".format(path, e))
    except pd.errors.EmptyDataError:
        raise DataError("CSV file is empty: {}".format(path))

    first_line = 2 if has_header else 1
    short_rows = np.flatnonzero(raw.isna().any(axis=1).values)
    if len(short_rows) > 0:
        raise DataError(
            "Ragged CSV row in {}: line {} has fewer than {} fields.".format(
                path, int(short_rows[0]) + first_line, raw.shape[1]
            )
        )
    if raw.shape[0] == 0:
        raise DataError("CSV file has no data rows: {}".format(path))

    columns = [str(c) for c in raw.columns]
    if has_header and isinstance(label_column, str) and label_column in columns:
        label_pos = columns.index(label_column)
    elif isinstance(label_column, (int, np.integer)) or (isinstance(label_column, str) and label_column.isdigit()):
        label_pos = int(label_column)
        if label_pos < 0 or label_pos >= len(columns):
            raise DataError("Label column {} is outside the {} columns of {}.".format(label_pos, len(columns), path))
    else:
        raise DataError("Unknown label column '{}' in {}; columns are {}.".format(label_column, path, columns))

    values = np.empty(raw.shape, dtype=np.float64)
    for j in range(raw.shape[1]):
        col = raw.iloc[:, j].str.strip()
        try:
            values[:, j] = col.values.astype(np.float64)
        except ValueError:
            for i, cell in enumerate(col.values):
                try:
                    float(cell)
                except ValueError:
                    raise DataError(
                        "Non-numeric cell '{}' in {} at line {}, column {}.".format(
                            cell, path, i + first_line, columns[j]
                        )
                    )
    if np.any(~np.isfinite(values)):
        raise DataError("CSV {} contains non-finite values.".format(path))

    feat_pos = [j for j in range(len(columns)) if j != label_pos]
    names = [columns[j] for j in feat_pos] if has_header else ["x{}".format(j) for j in range(len(feat_pos))]
    labels = values[:, label_pos]
    if np.all(np.equal(np.mod(labels, 1), 0)):
        labels = labels.astype(np.int64)
    return TabularDataset(features=values[:, feat_pos], labels=labels, feature_names=names)


def save_csv(ds: TabularDataset, path: str, label_column: str = "label") -> None:
    """Write features and labels with 17 significant digits so a reload is exact."""
    df = pd.DataFrame(ds.features, columns=ds.feature_names)
    df[label_column] = ds.labels
    df.to_csv(path, index=False, float_format="%.17g")


def inject_spurious(ds: TabularDataset, ratio: float, seed: int = 0) -> TabularDataset:
    """Append floor(ratio * d) standard-normal columns flagged as spurious; originals are untouched."""
    if ratio < 0:
        raise ConfigError("Spurious ratio must be >= 0; got {}.".format(ratio))
    n_new = int(np.floor(ratio * ds.n_features))
    if n_new == 0:
        return ds
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((ds.n_samples, n_new))
    start = ds.n_features
    return TabularDataset(
        features=np.concatenate([ds.features, noise], axis=1),
        labels=ds.labels,
        feature_names=ds.feature_names + ["noise{}".format(start + j) for j in range(n_new)],
        spurious_flags=np.concatenate([ds.spurious_flags, np.ones(n_new, dtype=bool)]),
    )


class PartitionScheme(str, Enum):
    EVEN_CONTIGUOUS = "even_contiguous"
    EXPLICIT_LISTS = "explicit_lists"


@dataclass
class PartitionSpec:
    """Disjoint, covering, non-empty column lists; one list per party."""

    columns: List[List[int]]
    scheme: PartitionScheme = PartitionScheme.EXPLICIT_LISTS

    @property
    def n_parties(self) -> int:
        return len(self.columns)

    def validate(self, n_features: int) -> None:
        if self.n_parties < 1:
            raise ConfigError("A partition needs at least one party.")
        seen = set()
        for m, cols in enumerate(self.columns):
            if len(cols) == 0:
                raise ConfigError("Party {} receives no columns.".format(m))
            for c in cols:
                if c < 0 or c >= n_features:
                    raise ConfigError("Party {} lists column {} outside [0, {}).".format(m, c, n_features))
                if c in seen:
                    raise ConfigError("Column {} is assigned to more than one party.".format(c))
                seen.add(c)
        if len(seen) != n_features:
            missing = sorted(set(range(n_features)) - seen)
            raise ConfigError("Columns {} are not assigned to any party.".format(missing))

    @classmethod
    def even_contiguous(cls, n_features: int, n_parties: int, flags: Optional[np.ndarray] = None) -> "PartitionSpec":
        """Split original and spurious columns evenly (and contiguously) among the parties."""
        if n_parties < 1:
            raise ConfigError("n_parties must be >= 1; got {}.".format(n_parties))
        flags = np.zeros(n_features, dtype=bool) if flags is None else np.asarray(flags, dtype=bool)
        lists = [list() for _ in range(n_parties)]
        for group in (np.flatnonzero(~flags), np.flatnonzero(flags)):
            for m, chunk in enumerate(np.array_split(group, n_parties)):
                lists[m] += [int(x) for x in chunk]
        spec = cls(columns=lists, scheme=PartitionScheme.EVEN_CONTIGUOUS)
        spec.validate(n_features)
        return spec

    @classmethod
    def explicit(cls, columns: Sequence[Sequence[int]], n_features: int) -> "PartitionSpec":
        spec = cls(columns=[[int(c) for c in cols] for cols in columns], scheme=PartitionScheme.EXPLICIT_LISTS)
        spec.validate(n_features)
        return spec


def partition(ds: TabularDataset, spec: PartitionSpec) -> Tuple[List[np.ndarray], List[List[int]]]:
    """Row-aligned per-party shards plus, for each party, the global index of each local column."""
    spec.validate(ds.n_features)
    shards = [ds.features[:, cols] for cols in spec.columns]
    return shards, [list(cols) for cols in spec.columns]


def reassemble(shards: Sequence[np.ndarray], columns: Sequence[Sequence[int]]) -> np.ndarray:
    n_features = sum(len(c) for c in columns)
    out = np.empty((shards[0].shape[0], n_features), dtype=np.float64)
    for shard, cols in zip(shards, columns):
        out[:, list(cols)] = shard
    return out


def inject_spurious_per_party(
    ds: TabularDataset, spec: PartitionSpec, ratios: Sequence[float], seed: int = 0
) -> Tuple[TabularDataset, PartitionSpec]:
    """Uneven noise: party m receives floor(ratios[m] * d_m) new spurious columns."""
    if len(ratios) != spec.n_parties:
        raise ConfigError("Got {} spurious ratios for {} parties.".format(len(ratios), spec.n_parties))
    counts = [int(np.floor(r * len(cols))) for r, cols in zip(ratios, spec.columns)]
    if any(r < 0 for r in ratios):
        raise ConfigError("Spurious ratios must be >= 0; got {}.".format(list(ratios)))
    total = sum(counts)
    if total == 0:
        return ds, spec
    # draw all noise in one call so the values depend only on (seed, N, total)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((ds.n_samples, total))
    start = ds.n_features
    columns = list()
    offset = 0
    for cols, k in zip(spec.columns, counts):
        columns.append(list(cols) + list(range(start + offset, start + offset + k)))
        offset += k
    out = TabularDataset(
        features=np.concatenate([ds.features, noise], axis=1),
        labels=ds.labels,
        feature_names=ds.feature_names + ["noise{}".format(start + j) for j in range(total)],
        spurious_flags=np.concatenate([ds.spurious_flags, np.ones(total, dtype=bool)]),
    )
    return out, PartitionSpec.explicit(columns, out.n_features)


def split(ds: TabularDataset, train_fraction: float, seed: int = 0) -> Tuple[TabularDataset, TabularDataset]:
    """Seeded shuffle split; row indices are drawn once so every party's shard stays aligned."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError("train_fraction must lie in (0, 1); got {}.".format(train_fraction))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(ds.n_samples)
    n_train = int(round(train_fraction * ds.n_samples))
    return ds.take_rows(np.sort(perm[:n_train])), ds.take_rows(np.sort(perm[n_train:]))


def standardize(
    train: TabularDataset, test: TabularDataset, columns: Optional[np.ndarray] = None
) -> Tuple[TabularDataset, TabularDataset]:
    """z-score the given columns (default: all non-spurious ones) with training-split statistics."""
    if columns is None:
        columns = np.flatnonzero(~train.spurious_flags)
    columns = np.asarray(columns, dtype=np.int64)
    mean = train.features[:, columns].mean(axis=0)
    std = train.features[:, columns].std(axis=0)
    std[std == 0.0] = 1.0
    out = list()
    for ds in (train, test):
        x = ds.features.copy()
        x[:, columns] = (x[:, columns] - mean) / std
        out.append(replace(ds, features=x))
    return out[0], out[1]
