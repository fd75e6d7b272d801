"""Residual-based pairwise interaction screening with four-quadrant splits.

For a pair ``(j, k)`` both features are discretized (quantile bins for
numericals, levels for categoricals).  Every combination of one cut on the
``j`` axis and one cut on the ``k`` axis splits the sample into four
quadrants; each quadrant predicts its mean residual.  The pair score is the
smallest residual sum of squares over all cut combinations, divided by ``n``.

Quadrant statistics are accumulated exactly (residuals are dyadic rationals,
so scaling by a common power of two turns them into integers) and the final
score is the correctly rounded float of the exact rational result.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .data import Dataset
from .model import GamiNetModel, invert_link, predict

DEFAULT_BINS = 8


@dataclass(frozen=True)
class InteractionCandidate:
    pair: Tuple[int, int]
    score: float


def compute_residuals(model: GamiNetModel, data: Dataset) -> np.ndarray:
    eta, _ = predict(model, data.features)
    return data.response - invert_link(model.link, eta)


def bin_codes(column, kind: str = "numerical", bins: int = DEFAULT_BINS,
              edges: Optional[np.ndarray] = None) -> np.ndarray:
    """Compact bin index per row; empty bins are merged away."""
    column = np.asarray(column, dtype=np.float64)
    if kind == "categorical":
        raw = column.astype(int)
    else:
        if edges is None:
            edges = quantile_edges(column, bins)
        raw = np.searchsorted(edges, column, side="right")
    _, codes = np.unique(raw, return_inverse=True)
    return codes.reshape(-1)


def quantile_edges(column, bins: int) -> np.ndarray:
    if bins < 2:
        raise ValueError("need at least 2 bins")
    qs = np.quantile(np.asarray(column, dtype=np.float64), np.arange(1, bins) / bins)
    return np.unique(qs)


class _ExactResiduals:
    """Residuals as integers ``r_i * scale`` with ``scale`` a power of two."""

    def __init__(self, residuals):
        ratios = [float(v).as_integer_ratio() for v in np.asarray(residuals, dtype=np.float64).tolist()]
        self.scale = max((d for _, d in ratios), default=1)
        self.ints = np.empty(len(ratios), dtype=object)
        self.ints[:] = [a * (self.scale // d) for a, d in ratios]
        self.squares = self.ints * self.ints
        self.n = len(ratios)
        self.total = sum(self.ints.tolist())
        self.total_sq = sum(self.squares.tolist())


def _cell_tables(ex: _ExactResiduals, cj, ck, nj, nk):
    cell = cj * nk + ck
    order = np.argsort(cell, kind="stable")
    sorted_cells = cell[order]
    starts = np.flatnonzero(np.r_[True, sorted_cells[1:] != sorted_cells[:-1]])
    occupied = sorted_cells[starts]
    s = np.zeros(nj * nk, dtype=object)
    s[:] = 0
    cnt = np.zeros(nj * nk, dtype=np.int64)
    s[occupied] = np.add.reduceat(ex.ints[order], starts)
    cnt[occupied] = np.diff(np.r_[starts, len(cell)])
    return s.reshape(nj, nk), cnt.reshape(nj, nk)


def _prefix(table):
    out = np.zeros((table.shape[0] + 1, table.shape[1] + 1), dtype=table.dtype)
    if table.dtype == object:
        out[:] = 0
    out[1:, 1:] = np.cumsum(np.cumsum(table, axis=0), axis=1)
    return out


def _score_from_codes(ex: _ExactResiduals, cj, ck) -> float:
    n = ex.n
    nj = int(cj.max()) + 1
    nk = int(ck.max()) + 1
    total_sq = Fraction(ex.total_sq)
    best_fit = Fraction(ex.total * ex.total, n)  # single-cell fit
    if nj >= 2 and nk >= 2:
        s, cnt = _cell_tables(ex, cj, ck, nj, nk)
        ps, pc = _prefix(s), _prefix(cnt)
        best_fit = None
        for a in range(1, nj):
            for b in range(1, nk):
                fit = Fraction(0)
                # quadrants: [0,a)x[0,b), [0,a)x[b,nk), [a,nj)x[0,b), [a,nj)x[b,nk)
                for r0, r1, c0, c1 in ((0, a, 0, b), (0, a, b, nk), (a, nj, 0, b), (a, nj, b, nk)):
                    m = int(pc[r1, c1] - pc[r0, c1] - pc[r1, c0] + pc[r0, c0])
                    if m:
                        sq = ps[r1, c1] - ps[r0, c1] - ps[r1, c0] + ps[r0, c0]
                        fit += Fraction(sq * sq, m)
                if best_fit is None or fit > best_fit:
                    best_fit = fit
    rss = (total_sq - best_fit) / (ex.scale * ex.scale)
    return float(rss / n)


def score_pair(j: int, k: int, residuals, data: Dataset, bins: int = DEFAULT_BINS) -> float:
    if j == k:
        raise ValueError("score_pair needs two distinct features")
    if bins < 2:
        raise ValueError("need at least 2 bins")
    ex = _ExactResiduals(residuals)
    cj = bin_codes(data.features[:, j], data.meta[j].kind, bins)
    ck = bin_codes(data.features[:, k], data.meta[k].kind, bins)
    return _score_from_codes(ex, cj, ck)


def heredity_pairs(p: int, active_mains: Iterable[int], heredity: str = "weak") -> List[Tuple[int, int]]:
    mains = set(active_mains)
    pairs = itertools.combinations(range(p), 2)
    if heredity == "none":
        return list(pairs)
    if heredity != "weak":
        raise ValueError(f"unknown heredity mode {heredity!r}")
    return [(j, k) for j, k in pairs if j in mains or k in mains]


def screen_interactions(active_mains, residuals, data: Dataset, heredity: str = "weak",
                        bins: int = DEFAULT_BINS) -> List[InteractionCandidate]:
    """Score every admissible pair; sorted ascending by score, ties lexicographic."""
    pairs = heredity_pairs(data.p, active_mains, heredity)
    if not pairs:
        return []
    ex = _ExactResiduals(residuals)
    codes = {}
    for j in sorted({f for pair in pairs for f in pair}):
        codes[j] = bin_codes(data.features[:, j], data.meta[j].kind, bins)
    scored = [InteractionCandidate(pair, _score_from_codes(ex, codes[pair[0]], codes[pair[1]]))
              for pair in pairs]
    return sorted(scored, key=lambda c: (c.score, c.pair))


def rank_interactions(active_mains, residuals, data: Dataset, k: int, heredity: str = "weak",
                      bins: int = DEFAULT_BINS) -> List[InteractionCandidate]:
    if k < 0:
        raise ValueError("K must be non-negative")
    return screen_interactions(active_mains, residuals, data, heredity, bins)[:k]


def write_scores_csv(candidates: Sequence[InteractionCandidate], data: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "feature_j", "feature_k", "score"])
        for i, c in enumerate(candidates, start=1):
            w.writerow([i, data.meta[c.pair[0]].name, data.meta[c.pair[1]].name, repr(c.score)])
