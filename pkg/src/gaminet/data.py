"""CSV ingestion, feature encoding/scaling and train/validation/test splits."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

log = logging.getLogger(__name__)

ROLES = ("numerical", "categorical", "response", "ignore")
TASKS = ("regression", "binary_classification")


class IngestionError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass
class FeatureMeta:
    name: str
    kind: str  # "numerical" | "categorical"
    scale_min: float = 0.0
    scale_max: float = 1.0
    levels: List[str] = field(default_factory=list)
    constant: bool = False

    @property
    def width(self) -> int:
        """Input width of this feature inside an interaction subnetwork."""
        return len(self.levels) if self.kind == "categorical" else 1

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.kind == "numerical":
            d.update(scale_min=self.scale_min, scale_max=self.scale_max)
        else:
            d["levels"] = list(self.levels)
        if self.constant:
            d["constant"] = True
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureMeta":
        return cls(name=d["name"], kind=d["kind"], scale_min=float(d.get("scale_min", 0.0)),
                   scale_max=float(d.get("scale_max", 1.0)), levels=list(d.get("levels", [])),
                   constant=bool(d.get("constant", False)))


@dataclass
class Dataset:
    features: np.ndarray  # (n, p); scaled numericals, level indices for categoricals
    response: np.ndarray  # (n,)
    task: str
    meta: List[FeatureMeta]
    dropped: List[FeatureMeta] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return replace(self, features=self.features[idx], response=self.response[idx])

    def original_values(self, j: int) -> np.ndarray:
        return inverse_scale(self.meta[j], self.features[:, j])


@dataclass
class Schema:
    """Column roles keyed by column name."""

    roles: Dict[str, str]

    def __post_init__(self):
        bad = {k: v for k, v in self.roles.items() if v not in ROLES}
        if bad:
            raise ConfigurationError(f"unknown column roles {bad}; valid roles are {ROLES}")
        responses = [k for k, v in self.roles.items() if v == "response"]
        if len(responses) != 1:
            raise ConfigurationError(f"schema must declare exactly one response column, got {responses}")

    @property
    def response(self) -> str:
        return next(k for k, v in self.roles.items() if v == "response")

    @property
    def features(self) -> List[Tuple[str, str]]:
        return [(k, v) for k, v in self.roles.items() if v in ("numerical", "categorical")]


@dataclass
class RawTable:
    columns: Dict[str, list]
    n_rows: int
    response: Optional[str] = None


def load_csv(path, schema: Schema, require_response: bool = True) -> RawTable:
    roles = {c: r for c, r in schema.roles.items() if r != "ignore"}
    if not require_response:
        roles.pop(schema.response)
    cols, n = _read_columns(path, roles)
    return RawTable(cols, n, schema.response if schema.response in cols else None)


def load_for_meta(path, meta: Sequence[FeatureMeta]) -> RawTable:
    """Read only the feature columns a fitted model needs."""
    return RawTable(*_read_columns(path, {m.name: m.kind for m in meta}))


def _read_columns(path, roles: Mapping[str, str]):
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"data file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: missing header row") from None
        header = [h.strip() for h in header]
        wanted = list(roles)
        missing = [c for c in wanted if c not in header]
        if missing:
            raise IngestionError(f"{path}: column(s) not found in header: {', '.join(missing)}")
        pos = {c: header.index(c) for c in wanted}
        cols: Dict[str, list] = {c: [] for c in wanted}
        n = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise IngestionError(f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}")
            for c in wanted:
                cell = row[pos[c]].strip()
                if cell == "":
                    raise IngestionError(f"{path}: missing value in row {lineno}, column {c!r}")
                if roles[c] == "categorical":
                    cols[c].append(cell)
                    continue
                try:
                    value = float(cell)
                except ValueError:
                    raise IngestionError(
                        f"{path}: cannot parse {cell!r} as a number in row {lineno}, column {c!r}") from None
                if not math.isfinite(value):
                    raise IngestionError(f"{path}: non-finite value in row {lineno}, column {c!r}")
                cols[c].append(value)
            n += 1
    if n == 0:
        raise IngestionError(f"{path}: empty dataset")
    return cols, n


def _fit_meta(name: str, kind: str, values: list) -> FeatureMeta:
    if kind == "numerical":
        arr = np.asarray(values, dtype=np.float64)
        lo, hi = float(arr.min()), float(arr.max())
        return FeatureMeta(name, kind, lo, hi, constant=not hi > lo)
    levels = list(dict.fromkeys(values))
    return FeatureMeta(name, kind, levels=levels, constant=len(levels) < 2)


def scale(meta: FeatureMeta, values) -> np.ndarray:
    if meta.kind == "numerical":
        arr = np.asarray(values, dtype=np.float64)
        return (arr - meta.scale_min) / (meta.scale_max - meta.scale_min)
    index = {lvl: i for i, lvl in enumerate(meta.levels)}
    out = np.empty(len(values))
    for r, v in enumerate(values):
        try:
            out[r] = index[v]
        except KeyError:
            raise IngestionError(f"unseen level {v!r} for feature {meta.name!r} in row {r}") from None
    return out


def inverse_scale(meta: FeatureMeta, scaled) -> np.ndarray:
    arr = np.asarray(scaled, dtype=np.float64)
    if meta.kind == "numerical":
        return meta.scale_min + arr * (meta.scale_max - meta.scale_min)
    return arr


def _response(values: list, task: str) -> np.ndarray:
    y = np.asarray(values, dtype=np.float64)
    if task == "binary_classification" and not np.all((y == 0.0) | (y == 1.0)):
        bad = sorted(set(y[(y != 0.0) & (y != 1.0)].tolist()))[:5]
        raise IngestionError(f"binary classification response must be 0/1, found {bad}")
    return y


def fit_transform(table: RawTable, schema: Schema, task: str = "regression") -> Dataset:
    if task not in TASKS:
        raise ConfigurationError(f"unknown task {task!r}; valid tasks are {TASKS}")
    if table.n_rows < 2:
        raise IngestionError("need at least 2 rows to fit preprocessing")
    meta, dropped = [], []
    for name, kind in schema.features:
        m = _fit_meta(name, kind, table.columns[name])
        if m.constant:
            log.warning("feature %r is constant and is excluded from modeling", name)
            dropped.append(m)
        else:
            meta.append(m)
    return transform(table, meta, task, dropped=dropped)


def transform(table: RawTable, meta: Sequence[FeatureMeta], task: str = "regression",
              dropped: Optional[List[FeatureMeta]] = None, with_response: bool = True) -> Dataset:
    """Encode ``table`` with already-fitted metadata (no re-fitting)."""
    n = table.n_rows
    cols = []
    for m in meta:
        if m.name not in table.columns:
            raise IngestionError(f"column {m.name!r} required by the model is missing")
        cols.append(scale(m, table.columns[m.name]))
    x = np.column_stack(cols) if cols else np.zeros((n, 0))
    y = np.zeros(n)
    if with_response:
        if table.response is None:
            raise IngestionError("table has no response column")
        y = _response(table.columns[table.response], task)
    return Dataset(x, y, task, list(meta), list(dropped or []))


def split_indices(n: int, test_fraction: float = 0.2, val_fraction: float = 0.2,
                  rng: Optional[np.random.Generator] = None, seed: Optional[int] = None):
    """Sorted ``(train, val, test)`` index arrays; validation is carved from the training part.

    ``test_fraction=0`` gives an empty test part (used when the caller holds
    out test data elsewhere).
    """
    if not 0.0 <= test_fraction < 1.0:
        raise ConfigurationError(f"test_fraction must lie in [0, 1), got {test_fraction}")
    if not 0.0 < val_fraction < 1.0:
        raise ConfigurationError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    if rng is None:
        rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_test = int(round(n * test_fraction))
    n_val = int(round((n - n_test) * val_fraction))
    n_train = n - n_test - n_val
    if min(n_val, n_train) < 1 or (test_fraction > 0 and n_test < 1):
        raise ConfigurationError(
            f"split of n={n} gives train/val/test sizes {n_train}/{n_val}/{n_test}; all must be non-empty")
    test_idx = np.sort(perm[:n_test])
    val_idx = np.sort(perm[n_test:n_test + n_val])
    train_idx = np.sort(perm[n_test + n_val:])
    return train_idx, val_idx, test_idx


def split(dataset: Dataset, test_fraction: float = 0.2, val_fraction: float = 0.2,
          rng: Optional[np.random.Generator] = None, seed: Optional[int] = None):
    """Split ``dataset`` into ``(train, validation, test)``."""
    idx = split_indices(dataset.n, test_fraction, val_fraction, rng=rng, seed=seed)
    return tuple(dataset.subset(i) for i in idx)
