import numpy as np
from PIL import Image

from gsc.coarsening import build_plan
from gsc.driver import parse_levels, run_gsc
from gsc.generate import GenConfig, generate
from gsc.plotting import plot_plan, plot_sample, report_figures
from gsc.sampling import sample_edges

INST = generate(GenConfig(nodes=8, products=1, seed=1))


def _nonblank(path):
    img = np.asarray(Image.open(path).convert("L"))
    return img.shape[0] > 50 and img.shape[1] > 50 and img.min() < 128


def test_report_figures(tmp_path):
    rep = run_gsc(INST, parse_levels("4:2:3,max:max:2"), seed=2)
    paths = report_figures(rep, tmp_path)
    assert sorted(paths) == ["bounds", "draws", "gap"]
    assert all(_nonblank(p) for p in paths.values())


def test_single_draw_levels_plot(tmp_path):
    rep = run_gsc(INST, parse_levels("4:2:1"), seed=2)
    assert all(_nonblank(p) for p in report_figures(rep, tmp_path).values())


def test_graph_figures(tmp_path):
    assert _nonblank(plot_sample(INST, sample_edges(INST, 10, 0), tmp_path / "s.png"))
    assert _nonblank(plot_plan(INST, build_plan(INST, 3, 0), tmp_path / "sub" / "p.png"))
