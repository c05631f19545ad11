import json
import pathlib

import numpy as np
import pytest

import volseg

ROOT = pathlib.Path(__file__).resolve().parents[2]


def naive_conv(x, w, b, pad):
    n, ci, d, h, wd = x.shape
    co, _, k, _, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad)))
    od, oh, ow = d + 2 * pad - k + 1, h + 2 * pad - k + 1, wd + 2 * pad - k + 1
    out = np.zeros((n, co, od, oh, ow))
    for i in range(od):
        for j in range(oh):
            for l in range(ow):
                patch = xp[:, :, i : i + k, j : j + k, l : l + k]
                out[:, :, i, j, l] = np.einsum("ncdhw,ocdhw->no", patch, w) + b
    return out


def test_conv3d_matches_loops():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 4, 5, 3)).astype(np.float32)
    w = rng.standard_normal((2, 3, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(2).astype(np.float32)
    got = volseg.conv3d(x, w, b)
    assert got.shape == (2, 2, 4, 5, 3)
    np.testing.assert_allclose(got, naive_conv(x, w, b, 1), rtol=1e-5, atol=1e-5)
    valid = volseg.conv3d(x, w, b, padding=0)
    assert valid.shape == (2, 2, 2, 3, 1)


def test_pool_gap_dense():
    x = np.arange(2 * 1 * 4 * 4 * 4, dtype=np.float32).reshape(2, 1, 4, 4, 4)
    out, idx = volseg.maxpool3d(x)
    assert out.shape == (2, 1, 2, 2, 2)
    np.testing.assert_array_equal(out.ravel(), x.ravel()[idx.ravel()])
    np.testing.assert_allclose(volseg.global_avg_pool(x), x.reshape(2, 1, -1).mean(axis=2))
    a = np.ones((1, 3), np.float32)
    w = np.arange(6, dtype=np.float32).reshape(3, 2)
    np.testing.assert_allclose(volseg.dense(a, w, np.zeros(2, np.float32)), [[6.0, 9.0]])
    up = volseg.transposed_conv3d(np.ones((1, 2, 2, 2, 2), np.float32), np.ones((2, 1, 2, 2, 2), np.float32))
    assert up.shape == (1, 1, 4, 4, 4)
    np.testing.assert_allclose(up, 2.0)


def test_metrics():
    p = np.array([1, 1, 0, 0], np.uint8)
    t = np.array([1, 0, 1, 0], np.uint8)
    assert volseg.dice_score(p, t) == pytest.approx(0.5)
    assert volseg.dice_score(np.zeros(5, np.uint8), np.zeros(5, np.uint8)) == 1.0
    assert volseg.pixel_accuracy(p, t) == 0.5


@pytest.mark.parametrize("arch", volseg.ARCHS)
def test_models_map_shapes(arch):
    m = volseg.Model(arch, num_classes=3)
    x = np.random.default_rng(1).standard_normal((1, 4, 16, 16, 16)).astype(np.float32)
    assert m.forward(x).shape == (1, 3, 16, 16, 16)
    labels = m.predict(x)
    assert labels.shape == (1, 16, 16, 16) and labels.max() < 3
    assert m.param_count == sum(p.size for p in m.parameters().values())
    assert m.summary()["total_params"] == m.param_count


def test_model_errors():
    with pytest.raises(volseg.ConfigError):
        volseg.Model("unet2d")
    with pytest.raises(volseg.ShapeError):
        volseg.Model("unet3d").forward(np.zeros((1, 3, 16, 16, 16), np.float32))
    assert issubclass(volseg.ShapeError, volseg.VolsegError)


def test_phantom_and_nifti(tmp_path):
    image, label = volseg.generate_phantom(extents=(16, 16, 16), seed=3)
    assert image.shape == (4, 16, 16, 16) and label.shape == (16, 16, 16)
    again, _ = volseg.generate_phantom(extents=(16, 16, 16), seed=3)
    np.testing.assert_array_equal(image, again)
    z = volseg.normalize(image)
    assert abs(z[0][image[0] != 0].mean()) < 1e-4
    path = tmp_path / "img.nii"
    volseg.write_nifti(path, image[0], spacing=(1.0, 2.0, 3.0))
    back, info = volseg.read_nifti(path)
    np.testing.assert_array_equal(back, image[0])
    assert info["spacing"] == [1.0, 2.0, 3.0]
    with pytest.raises(volseg.IoError):
        volseg.read_nifti(tmp_path / "missing.nii")
    (tmp_path / "bad.nii").write_bytes(b"\0" * 400)
    with pytest.raises(volseg.FormatError):
        volseg.read_nifti(tmp_path / "bad.nii")


def test_experiment_round_trip(tmp_path):
    cfg = json.loads((ROOT / "tests" / "data" / "tiny.json").read_text())
    cfg["epochs"] = 2
    cfg["seeds"] = [0]
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(cfg))
    assert volseg.load_config(path)["arch_id"] == "se_unet3d"
    assert len(volseg.fingerprint(cfg)) == 16
    run = volseg.run_experiment(path, output=tmp_path / "run")
    summary = json.loads((run / "summary.json").read_text())
    assert summary["epochs"] == 2
    rows, incomplete = volseg.compare_runs([run, tmp_path / "nothing"], tmp_path / "cmp.csv")
    assert len(rows) == 1 and len(incomplete) == 1
    assert rows[0]["params"] == summary["params"]
    assert volseg.emit_plot_data(run)[0].name == "f1_series.csv"
    assert volseg.summarize_config(path)["total_params"] == summary["params"]
    cfg["epochs"] = -1
    path.write_text(json.dumps(cfg))
    with pytest.raises(volseg.ConfigError, match="epochs"):
        volseg.load_config(path)
