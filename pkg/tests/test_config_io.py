import json

import numpy as np
import pytest

from voxpillar.backbone import default_backbone_config, required_weights
from voxpillar.config import RunConfig, config_from_json, load_config
from voxpillar.errors import FormatError, ShapeMismatch
from voxpillar.formats import (load_boxes, read_cloud, read_dump, write_cloud, write_csv,
                               write_dump)
from voxpillar.grid import GridSpec
from voxpillar.manifest import (load_manifest, resolve_weights, save_manifest,
                                seeded_tensor)


def test_config_round_trip(tmp_path):
    cfg = RunConfig(seed=42, iou_thresholds={"Vehicle": 0.8, "Pedestrian": 0.55})
    path = tmp_path / "config.json"
    cfg.save(path)
    loaded = load_config(path)
    assert loaded == cfg
    # serialize -> load again is a fixed point
    path2 = tmp_path / "config2.json"
    loaded.save(path2)
    assert load_config(path2) == loaded


def test_config_rejects_unknown_keys(tmp_path):
    doc = RunConfig().to_json()
    doc["typo"] = 1
    with pytest.raises(FormatError):
        config_from_json(doc)
    doc = RunConfig().to_json()
    doc["backbone"]["extra"] = True
    with pytest.raises(FormatError):
        config_from_json(doc)
    doc = RunConfig().to_json()
    doc["grid"]["size"] = [1, 1, 1]
    with pytest.raises(FormatError):
        config_from_json(doc)


def test_config_defaults_follow_variant():
    cfg = config_from_json({"backbone": {"variant": "sparse"}})
    assert cfg.backbone.voxel_channels == (16, 32, 64, 128)
    cfg = config_from_json({})
    assert cfg.backbone.voxel_channels == (16, 32, 64, 64)


def test_config_validates_thresholds():
    with pytest.raises(FormatError):
        config_from_json({"iou_thresholds": {"Vehicle": 1.5}})


def test_cloud_round_trip(tmp_path):
    rng = np.random.default_rng(110)
    pts = rng.normal(size=(37, 4))
    path = tmp_path / "cloud.vpc"
    write_cloud(path, pts)
    back = read_cloud(path)
    np.testing.assert_allclose(back, pts.astype(np.float32), rtol=0, atol=0)


def test_cloud_bad_magic(tmp_path):
    path = tmp_path / "bad.vpc"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError):
        read_cloud(path)


def test_cloud_truncated(tmp_path):
    rng = np.random.default_rng(111)
    path = tmp_path / "trunc.vpc"
    write_cloud(path, rng.normal(size=(10, 4)))
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(FormatError):
        read_cloud(path)
    path.write_bytes(data + b"\x00" * 4)  # trailing garbage is also rejected
    with pytest.raises(FormatError):
        read_cloud(path)


def test_dump_round_trip(tmp_path):
    rng = np.random.default_rng(112)
    coords = np.array([[0, 1, 2], [3, 4, 5]])
    feats = rng.normal(size=(2, 6)).astype(np.float32).astype(np.float64)
    path = tmp_path / "t.vpt"
    write_dump(path, [("a", coords, feats, 2, (8, 8, 8)),
                      ("b", coords[:, :2], feats, 4, (4, 4))])
    records = read_dump(path)
    assert [r["header"]["name"] for r in records] == ["a", "b"]
    assert records[0]["header"] == {"name": "a", "stride": 2, "extents": [8, 8, 8],
                                    "channels": 6, "count": 2}
    np.testing.assert_array_equal(records[0]["coords"], coords)
    np.testing.assert_allclose(records[0]["features"], feats, rtol=0, atol=0)


def test_dump_truncation_detected(tmp_path):
    path = tmp_path / "t.vpt"
    write_dump(path, [("a", np.array([[1, 2]]), np.ones((1, 3)), 1, (4, 4))])
    data = path.read_bytes()
    path.write_bytes(data[:-4])
    with pytest.raises(FormatError):
        read_dump(path)


def test_boxes_json(tmp_path):
    path = tmp_path / "boxes.json"
    path.write_text(json.dumps([
        {"center": [0, 0, 0], "dims": [1, 1, 1], "heading": 0.1},
        {"box": {"center": [1, 1, 1], "dims": [2, 2, 2], "heading": 0.0},
         "class": "Pedestrian", "id": 7, "points": [[1, 1, 1, 0.5]]},
    ]))
    entries = load_boxes(path)
    assert entries[0]["class"] == "Vehicle" and entries[0]["id"] == 0
    assert entries[1]["class"] == "Pedestrian" and entries[1]["id"] == 7
    assert entries[1]["points"].shape == (1, 4)
    path.write_text(json.dumps([{"center": [0, 0, 0]}]))
    with pytest.raises(FormatError):
        load_boxes(path)


def test_csv_stable(tmp_path):
    path1 = tmp_path / "a.csv"
    path2 = tmp_path / "b.csv"
    rows = [(1, 0.5, "x"), (2, 0.25, "y")]
    write_csv(path1, ["i", "v", "s"], rows)
    write_csv(path2, ["i", "v", "s"], rows)
    assert path1.read_bytes() == path2.read_bytes()
    assert path1.read_text().splitlines()[0] == "i,v,s"


def test_manifest_round_trip(tmp_path):
    rng = np.random.default_rng(113)
    tensors = {"small.weight": rng.normal(size=(2, 3)).astype(np.float32).astype(np.float64),
               "big.kernel": rng.normal(size=(27, 4, 4)).astype(np.float32).astype(np.float64)}
    path = tmp_path / "weights.json"
    save_manifest(path, tensors)
    doc = json.loads(path.read_text())
    assert isinstance(doc["tensors"]["small.weight"]["values"], list)  # inline
    assert isinstance(doc["tensors"]["big.kernel"]["values"], str)  # base64
    back = load_manifest(path)
    for name in tensors:
        np.testing.assert_allclose(back[name], tensors[name], rtol=0, atol=1e-7)


def test_manifest_validation(tmp_path):
    path = tmp_path / "weights.json"
    path.write_text(json.dumps({"tensors": {"a": {"shape": [2, 2], "values": [1, 2, 3]}}}))
    with pytest.raises(FormatError):
        load_manifest(path)
    path.write_text("{}")
    with pytest.raises(FormatError):
        load_manifest(path)


def test_resolve_weights_seeded_and_manifest():
    grid = GridSpec((0, 0, 0), (1.6, 1.6, 1.2), (0.1, 0.1, 0.15))
    cfg = default_backbone_config("dense")
    required = required_weights(grid, cfg)
    t1 = resolve_weights(required, None, seed=9)
    t2 = resolve_weights(required, None, seed=9)
    for name in required:
        assert t1[name].tobytes() == t2[name].tobytes()
    t3 = resolve_weights(required, None, seed=10)
    assert any(t1[n].tobytes() != t3[n].tobytes() for n in required)
    # manifests must be complete and well shaped
    partial = {name: t1[name] for name in list(required)[:-1]}
    with pytest.raises(ShapeMismatch):
        resolve_weights(required, partial, seed=0)
    bad = dict(t1)
    first = next(iter(required))
    bad[first] = np.zeros((1,))
    with pytest.raises(ShapeMismatch):
        resolve_weights(required, bad, seed=0)


def test_seeded_tensor_name_keyed():
    a = seeded_tensor("layer.a", (4, 4), seed=1)
    b = seeded_tensor("layer.b", (4, 4), seed=1)
    assert a.tobytes() != b.tobytes()
    again = seeded_tensor("layer.a", (4, 4), seed=1)
    assert a.tobytes() == again.tobytes()
