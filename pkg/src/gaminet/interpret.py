"""Importance ratios, shape-function grids and per-row additive explanations."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .data import Dataset, inverse_scale
from .model import CategoricalEffect, GamiNetModel, effect_variance, evaluate_effect, invert_link, predict

log = logging.getLogger(__name__)

GRID_1D = 101
GRID_2D = 51


@dataclass(frozen=True)
class ImportanceRow:
    effect_id: str
    kind: str  # "main" | "interaction"
    variance: float
    ratio: float


@dataclass
class ImportanceTable:
    rows: List[ImportanceRow]
    total: float

    @property
    def empty(self) -> bool:
        return not self.total > 0

    def ratio(self, effect_id: str) -> float:
        for r in self.rows:
            if r.effect_id == effect_id:
                return r.ratio
        raise KeyError(effect_id)

    def to_dict(self) -> dict:
        return {"total": self.total,
                "effects": [{"effect": r.effect_id, "kind": r.kind, "variance": r.variance, "ratio": r.ratio}
                            for r in self.rows]}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["effect", "kind", "variance", "ratio"])
            for r in self.rows:
                w.writerow([r.effect_id, r.kind, repr(r.variance), repr(r.ratio)])


def importance_ratios(model: GamiNetModel, train) -> ImportanceTable:
    """Share of total effect variance carried by each active effect.

    ``train`` is a :class:`Dataset` or an encoded feature matrix.
    """
    x = train.features if isinstance(train, Dataset) else train
    table = effect_variance(model, x)
    total = table.total
    if not total > 0:
        log.warning("total effect variance is zero; importance ratios are undefined")
    rows = []
    for key in model.effect_keys():
        eid = model.effect_id(key)
        d = table.values[eid]
        rows.append(ImportanceRow(eid, "interaction" if isinstance(key, tuple) else "main", d,
                                  d / total if total > 0 else 0.0))
    # stable sort keeps mains ahead of interactions on ties
    rows.sort(key=lambda r: -r.ratio)
    return ImportanceTable(rows, total)


@dataclass
class ShapeGrid:
    """An effect evaluated on a grid.

    ``axes`` holds one entry per input feature: grid points in original units
    for numerical features, level labels for categorical ones.  ``values`` has
    one dimension per axis.
    """

    effect_id: str
    kind: str  # "numerical" | "categorical" | "interaction"
    features: List[str]
    axes: List[list]
    values: np.ndarray
    importance: float = 0.0

    def to_dict(self) -> dict:
        return {"effect": self.effect_id, "kind": self.kind, "features": list(self.features),
                "axes": [list(a) for a in self.axes], "values": np.asarray(self.values).tolist(),
                "importance": self.importance}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            if self.kind == "interaction":
                w.writerow([*self.features, "value"])
                for a, row in zip(self.axes[0], self.values):
                    for b, v in zip(self.axes[1], row):
                        w.writerow([a, b, repr(float(v))])
            else:
                w.writerow([self.features[0], "value"])
                for a, v in zip(self.axes[0], self.values):
                    w.writerow([a, repr(float(v))])


def _axis(model: GamiNetModel, j: int, x: np.ndarray, size: int):
    """(scaled grid, labels) spanning the observed range of feature ``j``."""
    m = model.meta[j]
    if m.kind == "categorical":
        codes = np.arange(len(m.levels), dtype=np.float64)
        return codes, list(m.levels)
    lo, hi = float(x[:, j].min()), float(x[:, j].max())
    grid = np.linspace(lo, hi, size)
    return grid, inverse_scale(m, grid).tolist()


def shape_grid(model: GamiNetModel, key, x: np.ndarray, grid_size: int = GRID_1D,
               heatmap_size: int = GRID_2D, importance: float = 0.0) -> ShapeGrid:
    eid = model.effect_id(key)
    if isinstance(key, tuple):
        j, k = key
        gj, lj = _axis(model, j, x, heatmap_size)
        gk, lk = _axis(model, k, x, heatmap_size)
        pts = np.zeros((gj.size * gk.size, model.p))
        pts[:, j] = np.repeat(gj, gk.size)
        pts[:, k] = np.tile(gk, gj.size)
        values = evaluate_effect(model, key, pts).reshape(gj.size, gk.size)
        names = [model.meta[j].name, model.meta[k].name]
        return ShapeGrid(eid, "interaction", names, [lj, lk], values, importance)
    grid, labels = _axis(model, key, x, grid_size)
    pts = np.zeros((grid.size, model.p))
    pts[:, key] = grid
    kind = "categorical" if isinstance(model.effect(key), CategoricalEffect) else "numerical"
    return ShapeGrid(eid, kind, [model.meta[key].name], [labels], evaluate_effect(model, key, pts), importance)


def global_explain(model: GamiNetModel, train, grid_size: int = GRID_1D, heatmap_size: int = GRID_2D,
                   table: Optional[ImportanceTable] = None) -> List[ShapeGrid]:
    """Grids for every active effect, mains first, each group by importance."""
    if grid_size < 2 or heatmap_size < 2:
        raise ValueError("grid sizes must be >= 2")
    x = train.features if isinstance(train, Dataset) else np.asarray(train, dtype=np.float64)
    if table is None:
        table = importance_ratios(model, x)
    ir = {r.effect_id: r.ratio for r in table.rows}
    keys = sorted(model.effect_keys(), key=lambda k: (isinstance(k, tuple), -ir.get(model.effect_id(k), 0.0)))
    return [shape_grid(model, k, x, grid_size, heatmap_size, ir.get(model.effect_id(k), 0.0)) for k in keys]


@dataclass
class LocalExplanation:
    row: dict  # feature name -> original value
    intercept: float
    contributions: List[tuple] = field(default_factory=list)  # (effect id, value)
    eta: float = 0.0
    mean: float = 0.0

    def to_dict(self) -> dict:
        return {"row": dict(self.row), "intercept": self.intercept,
                "contributions": [{"effect": e, "value": v} for e, v in self.contributions],
                "eta": self.eta, "mean_response": self.mean}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["effect", "value"])
            w.writerow(["intercept", repr(self.intercept)])
            for e, v in self.contributions:
                w.writerow([e, repr(v)])


def _original_row(model: GamiNetModel, row: np.ndarray) -> dict:
    out = {}
    for j, m in enumerate(model.meta):
        if m.kind == "categorical":
            out[m.name] = m.levels[int(row[j])]
        else:
            out[m.name] = float(inverse_scale(m, row[j]))
    return out


def local_explain(model: GamiNetModel, row) -> LocalExplanation:
    """Additive breakdown of the linear predictor for one encoded row."""
    row = np.asarray(row, dtype=np.float64).reshape(-1)
    eta, contrib = predict(model, row[None, :])
    pairs = [(model.effect_id(k), float(c)) for k, c in zip(model.effect_keys(), contrib[0])]
    pairs.sort(key=lambda t: -abs(t[1]))
    e = float(eta[0])
    return LocalExplanation(_original_row(model, row), float(model.intercept), pairs, e,
                            float(invert_link(model.link, np.array([e]))[0]))


def write_json(obj, path) -> None:
    doc = [g.to_dict() for g in obj] if isinstance(obj, (list, tuple)) else obj.to_dict()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
