import numpy as np
import pytest

from pupilnet import evaluation, nn
from pupilnet.imaging import load_pgm
from pupilnet.presets import PRESETS


def test_curve_on_known_distances():
    preds = [(3.0, 0.0), (0.0, 7.0)]
    curve = evaluation.detection_rate_curve(preds, [(0, 0), (0, 0)], t_max=10)
    assert curve.rates[:3] == (0.0, 0.0, 0.0)
    assert curve.rate(3) == 0.5 and curve.rate(6) == 0.5
    assert curve.rate(7) == 1.0 and curve.rate(10) == 1.0
    assert curve.to_csv().splitlines()[:2] == ["threshold,rate", "0,0.000000"]


def test_curve_boundary_counts_as_hit():
    curve = evaluation.detection_rate_curve([(3, 4)], [(0, 0)], t_max=5)
    assert curve.rate(4) == 0.0 and curve.rate(5) == 1.0


def test_curve_errors():
    with pytest.raises(ValueError):
        evaluation.detection_rate_curve([], [])
    with pytest.raises(ValueError):
        evaluation.detection_rate_curve([(0, 0)], [(0, 0), (1, 1)])


def test_compare_runs(tmp_path):
    a = evaluation.detection_rate_curve([(1, 0)], [(0, 0)], 2)
    b = evaluation.detection_rate_curve([(0, 2)], [(0, 0)], 2)
    text = evaluation.compare_runs({"cnn": a, "ray": b}, tmp_path / "cmp.csv")
    assert text.splitlines() == ["threshold,cnn,ray", "0,0.000000,0.000000",
                                 "1,1.000000,0.000000", "2,1.000000,1.000000"]
    assert (tmp_path / "cmp.csv").read_text() == text
    with pytest.raises(ValueError):
        evaluation.compare_runs({"a": a, "c": evaluation.EvalCurve((1.0,))})


def test_single_stage_flops():
    f = evaluation.flop_accounting(PRESETS["S_K8P8"], (96, 72))
    assert (f.conv_flops, f.pool_flops, f.fc_flops, f.out_flops) == (115200, 3200, 1600, 8)
    assert f.total == 120008
    assert f.runs_per_image == 3456
    assert f.image_total == 414_747_648


def test_coarse_flops():
    f = evaluation.flop_accounting(PRESETS["C_K8P8"], (96, 72))
    assert f.conv_flops == 20 * 20 * 25 * 8
    assert f.runs_per_image == 3577


def test_mac_count_differs_only_where_convention_does():
    cfg = PRESETS["S_K8P8"]
    m = evaluation.mac_count(cfg)
    assert m.conv_flops == 115200
    assert m.pool_flops == 25 * 4 * 8
    assert m.out_flops == cfg.num_perceptrons
    rows = evaluation.flops_csv(cfg).splitlines()
    assert rows[0] == "term,flops,macs"
    assert "total,120008," in "\n".join(rows)


def test_flops_reject_small_image():
    with pytest.raises(ValueError):
        evaluation.flop_accounting(PRESETS["F_K8P8"], (96, 72))


def test_normalization():
    assert np.all(evaluation.normalize01(np.full((3, 3), -2.0)) == 0.5)
    w = np.zeros((5, 5))
    w[2, 2] = -1.0
    img = evaluation.weight_image(w, 4)
    assert img.pixels.min() == 0.0 and img.pixels.max() == 1.0
    assert img.size == (20, 20)
    assert np.array_equal(evaluation.sign_map(np.array([[-1, 0], [2, 3]])), [[0, 0], [1, 1]])


def test_dump_filters(tmp_path):
    model = nn.init_model(PRESETS["C_K8P8"], 0)
    names = evaluation.dump_filters(model, tmp_path, scale=20)
    assert len(names) == 8 + 8 + 8 * 8
    assert sum(n.startswith("filter_") for n in names) == 8
    assert sum(n.startswith("fc_") for n in names) == 64
    assert load_pgm(tmp_path / "filter_0.pgm").size == (100, 100)
    assert load_pgm(tmp_path / "fc_p0_f0.pgm").size == (100, 100)
    sign = load_pgm(tmp_path / "sign_3.pgm").pixels
    assert set(np.unique(sign)) <= {0.0, 1.0}
    assert np.array_equal(sign[::20, ::20], (model.conv_kernels[3] > 0).astype(float))
