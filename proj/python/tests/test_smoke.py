import json

import numpy as np
import pytest

import tscuap


def test_tile_matches_numpy_tile():
    rng = np.random.default_rng(0)
    v = rng.uniform(-0.1, 0.1, size=(8, 4, 3)).astype(np.float32)
    d = tscuap.tile(v, 4, 32, 16)
    assert d.shape == (32, 16, 3)
    np.testing.assert_array_equal(d, np.tile(v, (4, 4, 1)))


def test_adjoint_is_block_sum():
    rng = np.random.default_rng(1)
    g = rng.normal(size=(16, 16, 1)).astype(np.float32)
    got = tscuap.tile_adjoint(g, 4)
    want = g.reshape(4, 4, 4, 4, 1).sum(axis=(0, 2))
    np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-5)


def test_projection_budgets():
    rng = np.random.default_rng(2)
    v = rng.normal(scale=0.5, size=(8, 8, 3)).astype(np.float32)
    p = tscuap.project(v, 4, 32, 32, "inf", "10/255")
    assert np.abs(p).max() <= 10 / 255
    q = tscuap.project(v, 4, 32, 32, "2", 1.0)
    assert tscuap.norm(tscuap.tile(q, 4, 32, 32), "2") == pytest.approx(1.0, rel=1e-5)


def test_bad_alpha_raises_validation_error():
    with pytest.raises(tscuap.ValidationError):
        tscuap.project(np.zeros((8, 8, 3), np.float32), 3, 32, 32)
    with pytest.raises(tscuap.ShapeError):
        tscuap.tile(np.zeros((8, 4, 3), np.float32), 4, 32, 32)


def test_sample_and_predict():
    d = tscuap.sample_dataset("desk10", 10, 3, "validation", 0)
    assert d["images"].shape == (30, 32, 32, 3)
    assert sorted(set(d["labels"])) == list(range(10))
    model = tscuap.load_model("desk_cnn_cifar10")
    logits = model.logits(d["images"])
    assert model.predict(d["images"]) == list(np.argmax(logits, axis=1))
    assert model.info["classes"] == 10
    ids = [m["model_id"] for m in tscuap.list_models()]
    assert "desk_cnn_cifar10" in ids


def test_unknown_model_is_registry_error():
    with pytest.raises(tscuap.RegistryError):
        tscuap.load_model("nope")


def test_craft_evaluate_and_artifact_round_trip(tmp_path):
    model = tscuap.load_model("desk_cnn_cifar10")
    train = tscuap.sample_dataset("desk10", 10, 2, "train", 0)
    r = tscuap.craft(model, train["images"], train["labels"], alpha=4, epochs=2, batch_size=10)
    assert r["patch"].shape == (8, 8, 3)
    assert len(r["log"]) == 4
    assert np.abs(r["perturbation"]).max() <= 10 / 255

    test = tscuap.sample_dataset("desk10", 10, 3, "validation", 1)
    zero = tscuap.evaluate(np.zeros((32, 32, 3), np.float32), model, test["images"])
    assert zero["fooling_ratio"] == 0
    rep = tscuap.evaluate(r["perturbation"], model, test["images"])
    assert rep["n_evaluated"] == 30

    path = str(tmp_path / "a.uap")
    tscuap.save_artifact(path, r["patch"], 4, 32, 32, metadata={"note": "smoke"})
    a = tscuap.load_artifact(path)
    np.testing.assert_array_equal(a["patch"], r["patch"])
    np.testing.assert_array_equal(a["perturbation"], r["perturbation"])
    assert a["metadata"]["note"] == "smoke"


def test_corrupt_artifact_is_format_error(tmp_path):
    path = tmp_path / "bad.uap"
    path.write_bytes(b"XXXX")
    with pytest.raises(tscuap.FormatError):
        tscuap.load_artifact(str(path))


def test_cli_version_and_usage():
    code, out, _ = tscuap.run_cli(["--version"])
    assert code == 0 and tscuap.__version__ in out
    code, _, err = tscuap.run_cli(["craft", "--alpha", "3", "--runs-dir", "/nonexistent-runs"])
    assert code == 2
    assert json.loads(err)["error"]["kind"] == "config"
