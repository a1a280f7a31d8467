import numpy as np
import pytest

from ssaqn.report import curves_by_game, plot_learning_curves
from ssaqn.trainer import MetricsRow


def rows():
    return [MetricsRow(ep, g, float(ep) if g == "a" else -ep, 0.5, 0.9, 3.0, 0.1)
            for ep in (2, 1, 3) for g in ("a", "b")]


def test_curves_grouped_and_sorted():
    curves = curves_by_game(rows())
    assert list(curves) == ["a", "b"]
    ep, mean, std = curves["b"]
    assert ep.tolist() == [1, 2, 3] and mean.tolist() == [-1, -2, -3]
    assert np.all(std == 0.5)


@pytest.mark.parametrize("suffix, magic", [("png", b"\x89PNG"), ("svg", b"<?xml"), ("pdf", b"%PDF")])
def test_plot_writes_file(tmp_path, suffix, magic):
    path = tmp_path / f"curve.{suffix}"
    fig = plot_learning_curves(rows(), path, optima={"a": 3.0}, title="demo")
    assert path.read_bytes().startswith(magic)
    ax = fig.axes[0]
    assert [t.get_text() for t in ax.get_legend().get_texts()] == ["a", "b"]


def test_plot_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        plot_learning_curves([], tmp_path / "x.png")
