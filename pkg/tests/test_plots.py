import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from landsharp import plots
from landsharp.landscape import SurfaceGrid, axis

NS = {"svg": "http://www.w3.org/2000/svg"}


def _parse(path):
    root = ET.parse(path).getroot()
    meta = root.find("svg:metadata", NS)
    return root, json.loads(meta.text)


def _elements(root, tag, cls):
    return [e for e in root.iter(f"{{{NS['svg']}}}{tag}") if e.get("class") == cls]


def _grid(n=11):
    a = axis(-0.25, 0.25, n)
    aa, bb = np.meshgrid(a, a, indexing="ij")
    return SurfaceGrid(a, a, 1 + aa**2 + 2 * bb**2, 1.0)


def test_heatmap_has_one_cell_per_grid_point(tmp_path):
    root, meta = _parse(plots.emit_plot("surface-heatmap", _grid(), tmp_path / "h.svg"))
    assert len(_elements(root, "rect", "cell")) == 121 == meta["cells"]


def test_heatmap_handles_infinite_values(tmp_path):
    g = _grid(5)
    g.losses[0, 0] = np.inf
    root, _ = _parse(plots.emit_plot("surface-heatmap", g, tmp_path / "h.svg"))
    assert len(_elements(root, "rect", "cell")) == 25


def test_contour_is_wellformed(tmp_path):
    root, meta = _parse(plots.emit_plot("surface-contour", _grid(21), tmp_path / "c.svg"))
    assert meta["kind"] == "surface-contour"
    assert root.tag.endswith("svg")


def test_contour_segments_of_a_cone_lie_on_the_level():
    xs = np.linspace(-1, 1, 31)
    z = np.hypot(*np.meshgrid(xs, xs, indexing="ij"))
    segs = plots.contour_segments(z, xs, xs, 0.5)
    assert segs
    for (x0, y0), (x1, y1) in segs:
        assert abs(np.hypot(x0, y0) - 0.5) < 0.01 and abs(np.hypot(x1, y1) - 0.5) < 0.01


def test_scatter_fit_of_identity(tmp_path):
    xs = [0.0, 1.0, 2.5, 4.0]
    root, meta = _parse(plots.emit_plot("scatter", {"y=x": (xs, xs)}, tmp_path / "s.svg"))
    fit = meta["fits"]["y=x"]
    assert abs(fit["slope"] - 1.0) < 1e-9 and abs(fit["intercept"]) < 1e-9
    assert len(_elements(root, "circle", "point")) == 4
    assert len(_elements(root, "line", "fit")) == 1


def test_grouped_bars_single_group(tmp_path):
    data = {"groups": ["Adam"], "metrics": {"sharpness": [3.0], "accuracy": [0.8]},
            "errors": {"sharpness": [0.5]}}
    root, meta = _parse(plots.emit_plot("grouped-bars", data, tmp_path / "b.svg"))
    assert len(_elements(root, "rect", "bar")) == 2
    assert len(_elements(root, "line", "errorbar")) == 1
    assert meta["groups"] == ["Adam"]


def test_plots_have_axes_and_labels(tmp_path):
    root, _ = _parse(plots.emit_plot("scatter", {"a": ([1, 2], [3, 4])}, tmp_path / "s.svg"))
    texts = [t.text for t in root.iter(f"{{{NS['svg']}}}text")]
    assert "mean sharpness" in texts and "accuracy" in texts
    assert len(_elements(root, "rect", "frame")) == 1
    assert len(_elements(root, "text", "tick")) == 10


def test_output_is_deterministic(tmp_path):
    a = plots.emit_plot("surface-contour", _grid(), tmp_path / "a.svg").read_bytes()
    b = plots.emit_plot("surface-contour", _grid(), tmp_path / "b.svg").read_bytes()
    assert a == b


@pytest.mark.parametrize("kind,data", [
    ("scatter", {}), ("scatter", {"s": ([], [])}), ("grouped-bars", {"groups": [], "metrics": {}}),
    ("surface-heatmap", None), ("surface-heatmap", SurfaceGrid(np.array([]), np.array([]), np.zeros((0, 0)), 0.0)),
])
def test_empty_data_rejected(kind, data, tmp_path):
    with pytest.raises(ValueError):
        plots.emit_plot(kind, data, tmp_path / "x.svg")


def test_unknown_kind(tmp_path):
    with pytest.raises(ValueError, match="kind"):
        plots.emit_plot("pie", {"a": 1}, tmp_path / "x.svg")
