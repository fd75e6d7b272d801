"""Plain SVG renderings of shape grids, importance tables and local explanations.

Every panel is drawn into a ``<g>`` of fixed size so panels can be written
alone or tiled into a combined figure.  Numbers are written with fixed
precision so output is deterministic.
"""
from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import List, Sequence

import numpy as np

from .interpret import ImportanceTable, LocalExplanation, ShapeGrid

SVG_NS = "http://www.w3.org/2000/svg"
PANEL_W, PANEL_H = 360, 270
MARGIN = dict(left=52, right=14, top=30, bottom=44)
LINE_COLOR = "#1f4e9c"
POS_COLOR, NEG_COLOR = "#c0392b", "#2166ac"


def _f(v: float) -> str:
    return f"{v:.2f}"


def _el(parent, tag, text=None, **attrs):
    e = ET.SubElement(parent, tag, {k.rstrip("_").replace("_", "-"): str(v) for k, v in attrs.items()})
    if text is not None:
        e.text = text
    return e


def _tick_label(v) -> str:
    if isinstance(v, str):
        return v if len(v) <= 10 else v[:9] + "."
    return f"{v:.3g}"


def _title(grid_or_name, ir=None) -> str:
    if isinstance(grid_or_name, ShapeGrid):
        return f"{grid_or_name.effect_id} (IR {100 * grid_or_name.importance:.1f}%)"
    return grid_or_name if ir is None else f"{grid_or_name} (IR {100 * ir:.1f}%)"


class _Frame:
    """Plot area inside a panel with linear data-to-pixel maps."""

    def __init__(self, g, title, xlim, ylim):
        self.g = g
        self.x0, self.x1 = MARGIN["left"], PANEL_W - MARGIN["right"]
        self.y0, self.y1 = PANEL_H - MARGIN["bottom"], MARGIN["top"]
        self.xlim = xlim if xlim[1] > xlim[0] else (xlim[0] - 0.5, xlim[0] + 0.5)
        self.ylim = ylim if ylim[1] > ylim[0] else (ylim[0] - 0.5, ylim[0] + 0.5)
        _el(g, "rect", x=0, y=0, width=PANEL_W, height=PANEL_H, fill="white")
        _el(g, "text", title, x=_f(PANEL_W / 2), y=18, text_anchor="middle", font_size=13,
            font_family="sans-serif")
        _el(g, "rect", x=_f(self.x0), y=_f(self.y1), width=_f(self.x1 - self.x0), height=_f(self.y0 - self.y1),
            fill="none", stroke="#444", stroke_width="0.8")

    def px(self, v):
        a, b = self.xlim
        return self.x0 + (v - a) / (b - a) * (self.x1 - self.x0)

    def py(self, v):
        a, b = self.ylim
        return self.y0 - (v - a) / (b - a) * (self.y0 - self.y1)

    def yticks(self, n=5):
        for v in np.linspace(*self.ylim, n):
            y = self.py(v)
            _el(self.g, "line", x1=_f(self.x0 - 4), y1=_f(y), x2=_f(self.x0), y2=_f(y), stroke="#444")
            _el(self.g, "text", _tick_label(float(v)), x=_f(self.x0 - 6), y=_f(y + 4), text_anchor="end",
                font_size=10, font_family="sans-serif")

    def xtick(self, x, label):
        _el(self.g, "line", x1=_f(x), y1=_f(self.y0), x2=_f(x), y2=_f(self.y0 + 4), stroke="#444")
        _el(self.g, "text", label, x=_f(x), y=_f(self.y0 + 16), text_anchor="middle", font_size=10,
            font_family="sans-serif")

    def xlabel(self, text):
        _el(self.g, "text", text, x=_f((self.x0 + self.x1) / 2), y=_f(PANEL_H - 8), text_anchor="middle",
            font_size=11, font_family="sans-serif")


def _padded(lo, hi):
    pad = 0.05 * (hi - lo) if hi > lo else 0.5
    return lo - pad, hi + pad


def line_panel(g, xs: Sequence[float], ys: Sequence[float], title: str, xlabel: str = ""):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    fr = _Frame(g, title, (float(xs.min()), float(xs.max())), _padded(float(ys.min()), float(ys.max())))
    fr.yticks()
    for v in np.linspace(*fr.xlim, 5):
        fr.xtick(fr.px(v), _tick_label(float(v)))
    fr.xlabel(xlabel)
    pts = " ".join(f"{_f(fr.px(x))},{_f(fr.py(y))}" for x, y in zip(xs, ys))
    _el(g, "polyline", points=pts, fill="none", stroke=LINE_COLOR, stroke_width="1.6")
    return g


def bar_panel(g, labels: Sequence[str], values: Sequence[float], title: str, xlabel: str = ""):
    values = np.asarray(values, dtype=np.float64)
    lo, hi = min(0.0, float(values.min())), max(0.0, float(values.max()))
    fr = _Frame(g, title, (0.0, float(len(values))), _padded(lo, hi))
    fr.yticks()
    fr.xlabel(xlabel)
    zero = fr.py(0.0)
    _el(g, "line", x1=_f(fr.x0), y1=_f(zero), x2=_f(fr.x1), y2=_f(zero), stroke="#888", stroke_width="0.6")
    step = fr.px(1.0) - fr.px(0.0)
    show_every = max(1, math.ceil(len(values) / 12))
    for i, (lab, v) in enumerate(zip(labels, values)):
        top = fr.py(max(v, 0.0))
        h = abs(fr.py(v) - zero)
        _el(g, "rect", x=_f(fr.px(i) + 0.15 * step), y=_f(top), width=_f(0.7 * step), height=_f(h),
            fill=POS_COLOR if v >= 0 else NEG_COLOR)
        if i % show_every == 0:
            fr.xtick(fr.px(i + 0.5), _tick_label(lab))
    return g


def diverging_color(v: float, vmax: float) -> str:
    """White at zero, red for positive, blue for negative; symmetric in ``vmax``."""
    t = max(-1.0, min(1.0, v / vmax)) if vmax > 0 else 0.0
    end = (192, 57, 43) if t >= 0 else (33, 102, 172)
    a = abs(t)
    r, gg, b = (round(255 + (c - 255) * a) for c in end)
    return f"#{r:02x}{gg:02x}{b:02x}"


def heatmap_panel(g, grid: ShapeGrid, title: str):
    values = np.asarray(grid.values, dtype=np.float64)
    nx, ny = values.shape
    fr = _Frame(g, title, (0.0, float(nx)), (0.0, float(ny)))
    vmax = float(np.abs(values).max())
    cw = fr.px(1.0) - fr.px(0.0)
    ch = fr.py(0.0) - fr.py(1.0)
    cells = _el(g, "g", shape_rendering="crispEdges")
    for i in range(nx):
        for j in range(ny):
            _el(cells, "rect", x=_f(fr.px(i)), y=_f(fr.py(j + 1)), width=_f(cw + 0.01), height=_f(ch + 0.01),
                fill=diverging_color(values[i, j], vmax))
    for i in (0, nx // 2, nx - 1):
        fr.xtick(fr.px(i + 0.5), _tick_label(grid.axes[0][i]))
    for j in (0, ny // 2, ny - 1):
        y = fr.py(j + 0.5)
        _el(g, "text", _tick_label(grid.axes[1][j]), x=_f(fr.x0 - 6), y=_f(y + 4), text_anchor="end",
            font_size=10, font_family="sans-serif")
    fr.xlabel(f"{grid.features[0]} (rows) vs {grid.features[1]} (columns), |max| {vmax:.3g}")
    return g


def grid_panel(g, grid: ShapeGrid):
    title = _title(grid)
    if grid.kind == "interaction":
        return heatmap_panel(g, grid, title)
    if grid.kind == "categorical":
        return bar_panel(g, grid.axes[0], grid.values, title, grid.features[0])
    return line_panel(g, grid.axes[0], grid.values, title, grid.features[0])


def importance_panel(g, table: ImportanceTable):
    return bar_panel(g, [r.effect_id for r in table.rows], [r.ratio for r in table.rows],
                     "Importance ratio", "effect")


def local_panel(g, expl: LocalExplanation):
    labels = ["intercept"] + [e for e, _ in expl.contributions]
    values = [expl.intercept] + [v for _, v in expl.contributions]
    return bar_panel(g, labels, values, f"Prediction {expl.eta:.4g} = intercept + effects", "effect")


def _document(panels, columns: int = 1) -> ET.Element:
    rows = math.ceil(len(panels) / columns)
    width, height = PANEL_W * min(columns, len(panels)), PANEL_H * rows
    root = ET.Element("svg", {"xmlns": SVG_NS, "version": "1.1", "width": str(width), "height": str(height),
                              "viewBox": f"0 0 {width} {height}"})
    for i, draw in enumerate(panels):
        r, c = divmod(i, columns)
        g = _el(root, "g", transform=f"translate({c * PANEL_W},{r * PANEL_H})")
        draw(g)
    return root


def to_string(root: ET.Element) -> str:
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(root, encoding="unicode") + "\n"


def _panel_for(obj):
    if isinstance(obj, ShapeGrid):
        return lambda g: grid_panel(g, obj)
    if isinstance(obj, ImportanceTable):
        if not obj.rows:
            raise ValueError("importance table is empty")
        return lambda g: importance_panel(g, obj)
    if isinstance(obj, LocalExplanation):
        return lambda g: local_panel(g, obj)
    raise TypeError(f"cannot render {type(obj).__name__}")


def render(obj, columns: int = 3) -> str:
    """SVG text for a grid, table, explanation, or a list of grids (tiled)."""
    if isinstance(obj, (list, tuple)):
        if not obj:
            raise ValueError("nothing to render")
        return to_string(_document([_panel_for(o) for o in obj], columns))
    return to_string(_document([_panel_for(obj)]))


def render_svg(obj, path) -> Path:
    path = Path(path)
    text = render(obj)
    path.write_text(text, encoding="utf-8")
    return path


def _safe_name(effect_id: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in effect_id)


def write_panels(grids: List[ShapeGrid], out_dir, columns: int = 3) -> List[Path]:
    """One SVG per effect plus ``panel.svg`` with all of them tiled."""
    if not grids:
        raise ValueError("nothing to render")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [render_svg(g, out / f"effect_{i:02d}_{_safe_name(g.effect_id)}.svg") for i, g in enumerate(grids)]
    combined = out / "panel.svg"
    combined.write_text(render(grids, columns), encoding="utf-8")
    return paths + [combined]
