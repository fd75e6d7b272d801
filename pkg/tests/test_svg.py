import xml.etree.ElementTree as ET

import numpy as np
import pytest

from gaminet.interpret import ImportanceRow, ImportanceTable, LocalExplanation, ShapeGrid
from gaminet.svg import SVG_NS, diverging_color, render, render_svg, write_panels

NS = {"s": SVG_NS}


def line_grid(importance=0.25):
    xs = np.linspace(0, 1, 11)
    return ShapeGrid("x1", "numerical", ["x1"], [xs.tolist()], np.sin(3 * xs), importance)


def heat_grid(size=5):
    a = np.linspace(0, 1, size)
    return ShapeGrid("x1:x2", "interaction", ["x1", "x2"], [a.tolist(), a.tolist()],
                     np.outer(a - 0.5, a - 0.5), 0.1)


def parse(text):
    return ET.fromstring(text.encode("utf-8"))


def test_line_panel_has_one_polyline():
    root = parse(render(line_grid()))
    lines = root.findall(".//s:polyline", NS)
    assert len(lines) == 1
    assert len(lines[0].get("points").split()) == 11


def test_heatmap_has_one_rect_per_cell():
    root = parse(render(heat_grid(6)))
    cells = [g for g in root.iter(f"{{{SVG_NS}}}g") if g.get("shape-rendering") == "crispEdges"]
    assert len(cells) == 1 and len(cells[0].findall("s:rect", NS)) == 36


def test_title_carries_importance():
    texts = [t.text for t in parse(render(line_grid(0.25))).iter(f"{{{SVG_NS}}}text")]
    assert "x1 (IR 25.0%)" in texts


def test_categorical_bars():
    g = ShapeGrid("c", "categorical", ["c"], [["lo", "mid", "hi"]], np.array([0.2, -0.1, 0.0]))
    root = parse(render(g))
    fills = [r.get("fill") for r in root.iter(f"{{{SVG_NS}}}rect")]
    assert fills.count("#c0392b") == 2 and fills.count("#2166ac") == 1


def test_output_is_deterministic(tmp_path):
    a = render_svg([line_grid(), heat_grid()], tmp_path / "a.svg").read_bytes()
    b = render_svg([line_grid(), heat_grid()], tmp_path / "b.svg").read_bytes()
    assert a == b


def test_tiling_size():
    root = parse(render([line_grid()] * 4, columns=3))
    assert (root.get("width"), root.get("height")) == ("1080", "540")
    assert len(root.findall("s:g", NS)) == 4


def test_table_and_local_panels_parse():
    table = ImportanceTable([ImportanceRow("x1", "main", 3.0, 0.75), ImportanceRow("x2", "main", 1.0, 0.25)], 4.0)
    parse(render(table))
    expl = LocalExplanation({"x1": 0.1}, 0.5, [("x1", -0.2)], 0.3, 0.3)
    root = parse(render(expl))
    assert len(root.findall(".//s:rect", NS)) >= 2


def test_empty_inputs_raise(tmp_path):
    with pytest.raises(ValueError):
        render([])
    with pytest.raises(ValueError):
        render(ImportanceTable([], 0.0))
    with pytest.raises(ValueError):
        write_panels([], tmp_path)


def test_write_panels(tmp_path):
    paths = write_panels([line_grid(), heat_grid()], tmp_path / "out")
    assert [p.name for p in paths] == ["effect_00_x1.svg", "effect_01_x1_x2.svg", "panel.svg"]
    for p in paths:
        parse(p.read_text())


def test_diverging_color():
    assert diverging_color(0.0, 1.0) == "#ffffff"
    assert diverging_color(1.0, 1.0) == "#c0392b"
    assert diverging_color(-5.0, 1.0) == "#2166ac"
    assert diverging_color(0.3, 0.0) == "#ffffff"


def test_constant_values_render():
    g = ShapeGrid("x1", "numerical", ["x1"], [[0.0, 1.0]], np.zeros(2))
    parse(render(g))
    parse(render(ShapeGrid("a:b", "interaction", ["a", "b"], [[0, 1], [0, 1]], np.zeros((2, 2)))))
