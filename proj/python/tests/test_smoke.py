import json

import numpy as np
import pytest

import trafficdtl as td


def test_parameter_counts():
    assert td.build_model("rnn", 10).param_count() == 100981
    assert td.build_model("cnn", 10).param_count() == 33285
    assert td.build_model("cnn", 20).param_count() == 37285


def test_generate_and_prepare_shapes():
    site = td.generate_site("EB", seed=3)
    assert site["inputs"].shape[1] == 5
    assert site["targets"].shape == site["inputs"].shape
    assert np.all(np.diff(site["timestamps"]) > 0)
    xt, yt, xv, yv = td.prepare("EB", 3, p=10, dn=4)
    assert xt.shape[1:] == (10, 5) and yt.shape[1] == 5
    assert xv.shape[0] == yv.shape[0] > 0
    assert xt.min() >= -1 and xt.max() <= 1


def test_train_transfer_and_freeze():
    xt, yt, xv, yv = td.prepare("EB", 3, p=10, dn=0)
    xt, yt, xv, yv = xt[::40], yt[::40], xv[::20], yv[::20]
    teacher = td.build_model("cnn", 10, seed=1)
    res = td.train(teacher, xt, yt, xv, yv, epochs=2, patience=0)
    assert res["history"][0][0] == 0 and np.isfinite(res["mse"])
    assert td.masks(teacher)[0] == "FFF" and len(td.masks(teacher)) == 8
    student, info = td.transfer(teacher, xt, yt, xv, yv, mask="FFT", epochs=1)
    assert student.trainable_param_count() == 4005
    frozen, _ = td.transfer(teacher, xt, yt, xv, yv, mask="FFF")
    np.testing.assert_array_equal(frozen.predict(xv), teacher.predict(xv))


def test_attribution():
    model = td.build_model("cnn", 10, seed=2)
    x = np.random.default_rng(0).uniform(-1, 1, (10, 5))
    a = td.smoothgrad(model, x, 0, samples=3, sigma=0.0)
    b = td.smoothgrad(model, x, 0, samples=1, sigma=0.0)
    np.testing.assert_array_equal(a, b)
    heat, out, layers = td.lrp(model, x, 1)
    assert heat.shape == (10, 5)
    assert out == pytest.approx(model.predict(x[None])[0, 1], abs=1e-12)
    first = layers[-1]
    assert heat.sum() == pytest.approx(first["relevance_in"], abs=1e-12)


def test_svr_and_energy():
    rng = np.random.default_rng(1)
    X = rng.uniform(-1, 1, (40, 2))
    y = np.sin(2 * X[:, 0])
    pred, n_sv, _ = td.svr_fit_predict(X, y, X, C=10, epsilon=0.01, gamma=1.0)
    assert np.max(np.abs(pred - y)) < 0.1 and n_sv > 0
    assert td.format_percent(td.savings_percent(19.8, 1.0)) == "94.95"
    assert td.energy_wh(3600, json.dumps({"core_power_w": 1, "memory_power_w": 0, "usage": 1, "pue": 1})) == 1.0


def test_errors_map_to_python():
    with pytest.raises(ValueError):
        td.build_model("transformer", 10)
    with pytest.raises(ValueError):
        td.build_model("cnn", 10).predict(np.zeros((2, 9, 5)))
    with pytest.raises(td.ConfigError):
        td.run("train", json.dumps({"no_such_field": 1}))


def test_pipeline_stage(tmp_path):
    cfg = {"sites": ["EB"], "p_grid": [10], "dn_grid": [0], "archs": ["cnn"], "runs": 1,
           "out_dir": str(tmp_path), "train_stride": 60, "train": {"epochs": 1}}
    assert td.run("train", json.dumps(cfg)) >= 1
    assert (tmp_path / "runs.jsonl").exists()
    assert td.run("report", json.dumps(cfg)) >= 1
