import json

import numpy as np
import pytest
from conftest import small_config

from mvfuse import container
from mvfuse.bodymodel import load_model, save_model
from mvfuse.optimizer import TTAConfig, run_tta
from mvfuse.prior import load_head, save_head
from mvfuse.sceneio import (
    SCENE_MAGIC,
    ConfigError,
    config_from_dict,
    config_to_dict,
    evaluate_result,
    export_result,
    load_config,
    load_result,
    load_scene,
    save_config,
    save_result,
    save_scene,
    scene_fields,
)


def _same_scene(a, b):
    fa, fb = scene_fields(a), scene_fields(b)
    assert fa.keys() == fb.keys()
    for k in fa:
        if isinstance(fa[k], np.ndarray):
            assert fa[k].dtype == fb[k].dtype and np.array_equal(fa[k], fb[k]), k
        else:
            assert fa[k] == fb[k], k


def test_scene_round_trip(scene, free_scene, tmp_path):
    for sc in (scene, free_scene):
        path = tmp_path / "s.bin"
        save_scene(sc, path)
        back = load_scene(path)
        _same_scene(sc, back)
        assert back.meta["spec"] == sc.meta["spec"]
        save_scene(back, tmp_path / "again.bin")
        assert path.read_bytes() == (tmp_path / "again.bin").read_bytes()


def test_scene_without_ground_truth(scene, tmp_path):
    import dataclasses

    sc = dataclasses.replace(scene, gt=None, meta={})
    save_scene(sc, tmp_path / "s.bin")
    back = load_scene(tmp_path / "s.bin")
    assert back.gt is None
    with pytest.raises(ValueError):
        evaluate_result({}, back)


def test_single_bit_flips_detected(model, head, scene, tmp_path):
    rng = np.random.default_rng(0)
    files = []
    save_model(model, tmp_path / "m.bin")
    save_head(head, tmp_path / "h.bin")
    save_scene(scene, tmp_path / "s.bin")
    files = [(tmp_path / "m.bin", load_model), (tmp_path / "h.bin", load_head),
             (tmp_path / "s.bin", load_scene)]
    for trial in range(100):
        path, loader = files[trial % 3]
        blob = bytearray(path.read_bytes())
        bit = int(rng.integers(len(blob) * 8))
        blob[bit // 8] ^= 1 << (bit % 8)
        bad = tmp_path / "flipped.bin"
        bad.write_bytes(bytes(blob))
        with pytest.raises(container.FormatError):
            loader(bad)


def test_truncation_and_version(scene, tmp_path):
    path = tmp_path / "s.bin"
    save_scene(scene, path)
    blob = path.read_bytes()
    (tmp_path / "t.bin").write_bytes(blob[:-100])
    with pytest.raises(container.TruncatedFileError):
        load_scene(tmp_path / "t.bin")
    (tmp_path / "h.bin").write_bytes(blob[:10])
    with pytest.raises(container.TruncatedFileError):
        load_scene(tmp_path / "h.bin")
    container.write(tmp_path / "v0.bin", "MVFUSE-SCENE-v0", {"n_views": np.int64(1)})
    with pytest.raises(container.VersionError):
        load_scene(tmp_path / "v0.bin")
    container.write(tmp_path / "partial.bin", SCENE_MAGIC, {"n_views": np.int64(1)})
    with pytest.raises(container.MalformedHeaderError):
        load_scene(tmp_path / "partial.bin")


def test_container_value_kinds(tmp_path):
    fields = {"a": np.arange(6, dtype=float).reshape(2, 3), "b": np.array([1, -2], dtype=np.int64),
              "c": "text é", "d": np.float64(2.5), "e": np.zeros((0, 3))}
    container.write(tmp_path / "x.bin", "MVFUSE-TEST-v1", fields)
    back = container.read(tmp_path / "x.bin", "MVFUSE-TEST-v1")
    assert back["c"] == fields["c"] and back["d"] == 2.5
    for k in ("a", "b", "e"):
        assert back[k].dtype == fields[k].dtype and np.array_equal(back[k], fields[k])


def test_result_round_trip_and_eval(scene, tmp_path):
    res = run_tta(scene, config=small_config())
    save_result(res, tmp_path / "r.bin", True)
    back = load_result(tmp_path / "r.bin")
    assert back["loss_trace"] == res.loss_trace
    assert np.array_equal(back["final_joints"], res.final_joints)
    report = evaluate_result(back, scene)
    assert report == res.final_report


def test_exports(scene, tmp_path):
    res = run_tta(scene, config=small_config())
    export_result(res, tmp_path / "trace.jsonl")
    lines = (tmp_path / "trace.jsonl").read_text().splitlines()
    assert len(lines) == 11
    first = json.loads(lines[0])
    assert first["step"] == 0 and "loss_total" in first and "mpjpe" in first
    export_result(res, tmp_path / "summary.json", "summary")
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert set(summary) == {"mpjpe", "pa_mpjpe", "mpvpe", "pck", "auc", "epe"}
    res0 = run_tta(scene, config=TTAConfig(steps=0, warmup_steps=0))
    export_result(res0, tmp_path / "zero.jsonl")
    assert len((tmp_path / "zero.jsonl").read_text().splitlines()) == 1
    with pytest.raises(ValueError):
        export_result(res, tmp_path / "x", "csv")


def test_config_round_trip(tmp_path):
    cfg = TTAConfig(steps=50, warmup_steps=5, consistency_mode="star")
    save_config(cfg, tmp_path / "c.json", {"scene": "s.bin"})
    back, paths = config_from_dict(load_config(tmp_path / "c.json"))
    assert back == cfg and paths == {"scene": "s.bin"}
    assert config_to_dict(cfg)["lambda_kp"] == 0.3


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        config_from_dict({"stepz": 3})
    with pytest.raises(ConfigError):
        config_from_dict({"lambda_kp": -1})
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
    (tmp_path / "list.json").write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "list.json")
