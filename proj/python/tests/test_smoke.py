import json
import math

import pytest

import hipss


def small_config(tmp_path):
    cfg = hipss.default_config()
    cfg["generator"].update(dim=16, slides_per_class=30, regions_max=5, instances_max=10)
    cfg["model"].update(dim=16, hidden=8, blocks=4)
    cfg["train"].update(max_epochs=10, patience=5)
    cfg["sweep"]["folds"] = 2
    cfg["data_dir"] = str(tmp_path / "data")
    cfg["out_dir"] = str(tmp_path / "out")
    return cfg


def test_kernels():
    assert hipss.ssf_forward([1.0, 1.0], [2.0, 3.0], [1.0, -1.0]) == [3.0, 2.0]
    assert hipss.attach_depth(12, 2) == [11, 12]
    assert hipss.count_trainable() == 8768
    assert hipss.count_trainable(attention=False) == 512
    p = hipss.softmax([0.0, 0.0, 0.0, 0.0])
    assert all(abs(v - 0.25) < 1e-15 for v in p)
    assert hipss.auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert hipss.dice([1, 1, 0, 0], [1, 0, 1, 0]) == 0.5


def test_refinement_branches():
    text = [1.0, 0.0, 0.0, 0.0]
    assert hipss.refinement_score([1, 1, 1, 1], text) == 5.0
    assert hipss.refinement_score([1, 2, 4, 2], text) == 0.2
    assert hipss.refinement_score([-1, 2, 4, 2], text) == 0.0
    assert hipss.refinement_score([1, 1, 1, 1], None) == 0.0


def test_errors_map_to_python_exceptions(tmp_path):
    with pytest.raises(hipss.ConfigError):
        hipss.params({"trian": {}})
    with pytest.raises(ValueError):
        hipss.attach_depth(12, 0)
    cfg = small_config(tmp_path)
    with pytest.raises(hipss.DataError):
        hipss.train(cfg)


def test_pipeline(tmp_path):
    cfg = small_config(tmp_path)
    manifest, summary, path = hipss.generate(cfg)
    assert summary
    assert (tmp_path / "data" / "manifest.json").exists()

    cfg["split"]["k"] = 4
    out, _, _ = hipss.train(cfg)
    ckpt = tmp_path / "out" / "checkpoint.json"
    assert ckpt.exists()
    assert out["epochs_run"] >= 1

    plain, _, _ = hipss.evaluate(cfg, ckpt)
    merged_out, _, merged_path = hipss.merge(cfg, ckpt)
    folded, _, _ = hipss.evaluate(cfg, merged_path)
    assert folded["merged"] is True
    for a, b in zip(plain["metrics"]["slides"], folded["metrics"]["slides"]):
        assert max(abs(x - y) for x, y in zip(a["probabilities"], b["probabilities"])) <= 1e-10

    loc, _, _ = hipss.localize(cfg, ckpt)
    assert (tmp_path / "out" / "attention").is_dir()

    sweep, _, _ = hipss.evaluate(cfg)
    assert len(sweep["runs"]) == 2
    assert 0.0 <= sweep["summary"]["auc"]["mean"] <= 1.0


def test_gradcheck_and_params(tmp_path):
    cfg = small_config(tmp_path)
    g, _, _ = hipss.gradcheck(cfg)
    assert g["modes"]["through_score"]["max_rel_error"] <= 1e-4
    assert g["modes"]["detached"]["max_rel_error"] <= 1e-4
    p, _, path = hipss.params(cfg)
    assert p["trainable"] == p["closed_form"]
    assert json.loads(open(path).read())["trainable"] == p["trainable"]
