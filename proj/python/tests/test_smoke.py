# Copyright Contributors to the occfield project
# SPDX-License-Identifier: Apache-2.0

import json
import math
from pathlib import Path

import numpy as np
import pytest

import occfield

ROOT = Path(__file__).resolve().parents[2]

TINY_RUN = {
    "model": {"preset": "tiny"},
    "train": {"iterations": 4, "warmup": 1, "queries_per_scene": 64, "batch_size": 1, "checkpoint_every": 0},
    "scenes": {
        "seeds": [1],
        "generator": {"camera_count": 2, "image_size": 16, "lidar_azimuths": 90, "lidar_elevations": 8},
    },
}


def test_scene_generation_is_deterministic():
    a = occfield.Scene.generate(5)
    b = occfield.Scene.generate(5)
    assert a.to_json() == b.to_json()
    assert a.camera_count == 4


def test_scene_json_round_trip(tmp_path):
    scene = occfield.Scene.generate(3)
    scene.save(tmp_path / "scene.json")
    assert occfield.Scene.load(tmp_path / "scene.json").to_json() == scene.to_json()


def test_lidar_returns_lie_on_surfaces():
    scene = occfield.Scene.generate(2)
    pts = scene.lidar()
    assert pts.ndim == 2 and pts.shape[1] == 3 and len(pts) > 0
    # Stepping 1 cm further along each beam lands inside a solid.
    origin = np.array([0.0, 0.0, 1.8])
    dirs = pts - origin
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    assert scene.occupied(pts + 0.01 * dirs).mean() > 0.95


def test_cast_hits_ground():
    scene = occfield.Scene.generate(0)
    d = scene.cast([0.0, 0.0, 1.0], [0.0, 0.0, -1.0])
    assert d is not None and d <= 1.0 + 1e-9


def test_chamfer_identical_clouds_is_zero():
    pts = np.random.default_rng(0).uniform(-5, 5, size=(50, 3))
    assert occfield.chamfer(pts, pts) == 0.0
    assert occfield.chamfer(pts, pts + [0.1, 0.0, 0.0]) == pytest.approx(0.1)


def test_bad_point_array_raises():
    with pytest.raises(occfield.ValidationError):
        occfield.chamfer(np.zeros((4, 2)), np.zeros((4, 3)))


def test_average_rank_on_fixture():
    ranks = occfield.average_rank(ROOT / "fixtures" / "table2.csv")
    assert ranks["Ours"] == 1.8


def test_cli_train_and_query(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps(TINY_RUN))
    code, _, err = occfield.run(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "run")])
    assert code == 0, err

    gen = tmp_path / "gen.json"
    gen.write_text(json.dumps(TINY_RUN["scenes"]["generator"]))
    code, _, err = occfield.run(["scene", "gen", "--seed", "1", "--config", str(gen), "--out", str(tmp_path / "s.json")])
    assert code == 0, err

    model = occfield.Model.load(tmp_path / "run" / "final.vgtc")
    field = model.field(occfield.Scene.load(tmp_path / "s.json"))
    p = field.query(np.array([[1.0, 2.0, 0.5], [-3.0, 4.0, 1.0]]))
    assert p.shape == (2,)
    assert all(0.0 < v < 1.0 and math.isfinite(v) for v in p)


def test_cli_reports_usage_errors():
    code, _, err = occfield.run(["no-such-command"])
    assert code == 1 and err
