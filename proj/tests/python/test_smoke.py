import json
import os
import pathlib

import numpy as np
import pytest

import mobs

SOURCE_DIR = pathlib.Path(os.environ.get("MOBS_SOURCE_DIR", pathlib.Path(__file__).resolve().parents[2]))


def test_auc_hand_values():
    assert mobs.auc_empirical([1, 3], [0, 2]) == 0.75
    assert mobs.auc_empirical([5, 6], [1, 2]) == 1.0
    assert mobs.auc_empirical([1, 3], [1, 3]) == 0.5
    assert mobs.auc_parametric([0, 1, 2], [-1, 0, 1]) == pytest.approx(0.7602499389)


def test_response_map_matches_direct_correlation():
    rng = np.random.default_rng(1)
    p = rng.standard_normal((20, 24))
    k = rng.standard_normal((5, 5))
    got = mobs.response_map(p, k)
    want = np.zeros_like(p)
    for dy in range(5):
        for dx in range(5):
            want += k[dy, dx] * np.roll(p, (-(dy - 2), -(dx - 2)), axis=(0, 1))
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_search_score_and_components():
    m = np.zeros((8, 8))
    m[2, 5] = 3.0
    score, loc = mobs.search_score(m, np.ones((8, 8), dtype=bool))
    assert score == 3.0
    assert loc[:2] == [5, 2]

    mask = np.zeros((4, 4), dtype=bool)
    mask[0, 0] = mask[1, 1] = mask[3, 3] = True
    labels, sizes = mobs.connected_components(mask, 8)
    assert sizes == [2, 1]
    assert labels[1, 1] == 1 and labels[3, 3] == 2


def test_cho_on_white_noise():
    rng = np.random.default_rng(2)
    yy, xx = np.mgrid[-7:8, -7:8]
    sig = 0.8 * np.exp(-(xx**2 + yy**2) / 8.0)
    sp = [rng.standard_normal((15, 15)) + sig for _ in range(300)]
    sa = [rng.standard_normal((15, 15)) for _ in range(300)]
    t = mobs.train_cho(sp, sa, n_orientations=4, pixels_per_cycle=[4, 8])
    assert t.kernel.shape == (15, 15)
    assert len(t.weights) == 16
    assert t.dprime > 1.0
    assert t.score(sig) > 0


def test_threshold_calibration():
    maps, labels = [], []
    rng = np.random.default_rng(3)
    for i in range(8):
        m = rng.uniform(0.0, 0.3, (20, 20))
        if i < 4:
            m[8:12, 8:12] = 0.9
        maps.append(m)
        labels.append(1 if i < 4 else 0)
    threshold, thresholds, aucs = mobs.calibrate_threshold(maps, labels)
    assert threshold == 0.85
    assert len(thresholds) == 21 and len(aucs) == 21


def test_gaze_helpers():
    v = np.zeros((1, 31, 31))
    v[0, 15, 15] = 1.0
    s = mobs.gaussian_smooth(v, [15, 15, 1])
    assert s.sum() == pytest.approx(1.0)
    interior = np.ones_like(s, dtype=bool)
    top = mobs.top_fraction_mask(s, 0.01, interior)
    assert top.sum() == 10
    assert mobs.overlap_percentage(s, interior, interior) == pytest.approx(100.0)


def test_errors_map_to_python_exceptions():
    with pytest.raises(mobs.InputError):
        mobs.auc_empirical([], [1.0])
    with pytest.raises(ValueError):
        mobs.response_map(np.zeros((4, 4)), np.zeros((4, 4)))


def test_run_small_config(tmp_path):
    cfg = json.loads((SOURCE_DIR / "configs" / "demo.json").read_text())
    cfg["dataset"]["dims"] = [40, 40, 24]
    cfg["dataset"]["erosion_voxels"] = 8
    for o in cfg["observers"]:
        if "channels" in o:
            o["channels"]["kernel_extent"] = 15
            o["channels"]["pixels_per_cycle"] = [4, 8]
        if o["name"] == "cho3d":
            o["n_slices"] = 3
    cfg["task"]["lke"]["n"] = [1, 16]
    cfg["task"]["lke"]["iterations"] = 20
    cfg["stats"]["iterations"] = 200
    cfg["gaze"]["kernel"] = [9, 9, 3]
    cfg["gaze"]["iterations"] = 100
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    summary = json.loads(mobs.run(str(path), out=str(tmp_path / "out"), seed=3))
    assert set(summary["observers"]) >= {"cho", "fco"}
    assert (tmp_path / "out" / "summary.json").exists()
    again = json.loads(mobs.run(str(path), out=str(tmp_path / "again"), seed=3))
    assert again == summary


def test_run_reports_errors(tmp_path):
    with pytest.raises(mobs.InputError):
        mobs.run(str(tmp_path / "missing.json"))
    cfg = json.loads((SOURCE_DIR / "configs" / "demo.json").read_text())
    (tmp_path / "empty").mkdir()
    cfg["dataset"]["path"] = str(tmp_path / "empty")
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    with pytest.raises(mobs.StageError, match="dataset"):
        mobs.run(str(path), out=str(tmp_path / "out"))
