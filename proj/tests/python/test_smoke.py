"""Smoke tests for the python bindings: the compiled core is importable and
the main operations behave on small inputs."""

import numpy as np
import pytest

import ftnn


def test_matmul_matches_numpy():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(7, 5))
    b = rng.normal(size=(5, 3))
    np.testing.assert_allclose(ftnn.matmul(a, b), a @ b, atol=1e-12)


def test_matmul_shape_error():
    with pytest.raises(ValueError):
        ftnn.matmul(np.zeros((2, 3)), np.zeros((4, 2)))


def test_synth_xor_balance_and_determinism():
    x, y = ftnn.synth_xor(400, 0.2, seed=7)
    x2, y2 = ftnn.synth_xor(400, 0.2, seed=7)
    assert x.shape == (400, 2)
    assert (y == y2).all()
    np.testing.assert_array_equal(x, x2)
    assert int((y == 0).sum()) == 200


def test_train_forward_thinking_on_xor(tmp_path):
    x, y = ftnn.synth_xor(1200, 0.2, seed=3)
    order = np.random.default_rng(0).permutation(len(y))  # clusters are generated in blocks
    x, y = x[order], y[order]
    xt, yt = x[:1000], y[:1000]
    xv, yv = x[1000:], y[1000:]
    schedule = [ftnn.dense_stage(8, train=ftnn.TrainConfig(epochs=60, batch_size=32, seed=11))]
    head = ftnn.TrainConfig(epochs=20, batch_size=32, seed=13)
    model, metrics = ftnn.train_forward_thinking(xt, yt, xv, yv, 2, schedule, head_train=head)
    acc = model.evaluate(xv, yv, 2)
    assert acc >= 0.93
    assert metrics[0]["phase"] == "stage"
    assert metrics[-1]["phase"] == "head"

    # save / load round trip preserves predictions exactly
    path = str(tmp_path / "model.ftm")
    model.save(path)
    loaded = ftnn.Model.load(path)
    np.testing.assert_array_equal(model.predict(xv), loaded.predict(xv))
    np.testing.assert_array_equal(model.predict_proba(xv), loaded.predict_proba(xv))


def test_backprop_and_gradcheck():
    x, y = ftnn.synth_xor(800, 0.2, seed=5)
    order = np.random.default_rng(1).permutation(len(y))
    x, y = x[order], y[order]
    xt, yt = x[:600], y[:600]
    xv, yv = x[600:], y[600:]
    schedule = [ftnn.dense_stage(8)]
    model, metrics = ftnn.train_backprop(
        xt, yt, xv, yv, 2, schedule,
        train=ftnn.TrainConfig(epochs=60, batch_size=32, seed=3), init_seed=9,
    )
    assert model.kind == "deep"
    assert model.evaluate(xv, yv, 2) >= 0.9
    assert len(metrics) == 60

    assert ftnn.grad_check_dense(seed=1) <= 1e-5
    assert ftnn.grad_check_conv(seed=1) <= 1e-5
    assert ftnn.grad_check_dense(seed=1, corrupt_delta=1e-3) > 1e-5


def test_augment_appends_copies():
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 1, size=(10, 1, 6, 6))
    y = np.arange(10) % 2
    xa, ya = ftnn.augment(x, y, 2, copies=2, seed=4)
    assert xa.shape == (30, 1, 6, 6)
    assert (ya[:10] == y).all()


def test_run_experiment_dict(tmp_path):
    out = str(tmp_path / "run")
    summary = ftnn.run_experiment_dict({
        "mode": "ft_dense",
        "seed": 5,
        "output_dir": out,
        "data": {"source": "xor", "val_fraction": 0.2, "xor": {"n": 400, "noise": 0.2}},
        "stages": [{"kind": "dense", "width": 8, "train": {"epochs": 10, "batch_size": 32}}],
        "head": {"train": {"epochs": 5, "batch_size": 32}},
    })
    assert summary["final_val_accuracy"] > 0.5
    assert (tmp_path / "run" / "metrics.csv").exists()
    assert (tmp_path / "run" / "model.ftm").exists()
    assert (tmp_path / "run" / "config_resolved.json").exists()


def test_config_error_is_python_value_error():
    with pytest.raises(ValueError):
        ftnn.run_experiment('{"mode": "nope"}')
