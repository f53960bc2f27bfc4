import xml.etree.ElementTree as ET

import numpy as np

from spinesim.plots import Plot, Series, render


def test_render_is_valid_svg_with_every_series():
    plot = Plot("survival & scaling", "t", "t P(survive)",
                (Series("simulated", np.arange(5.0), np.array([1, 2, np.nan, 4, 5.0]), markers=True),
                 Series("oracle", np.arange(5.0), np.full(5, 2.0))))
    svg = render(plot)
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")
    assert "survival &amp; scaling" in svg
    assert svg.count("<circle") == 4
    assert svg.count("<polyline") == 1


def test_render_constant_series():
    svg = render(Plot("flat", "x", "y", (Series("c", np.zeros(3), np.zeros(3)),)))
    ET.fromstring(svg)
