import json
import math

import numpy as np
import pytest

import rfrp


def test_bins_and_centers():
    assert rfrp.bin_of(0.0, 0.0) == (0, 0)
    assert rfrp.bin_of(359.9, 89.9) == (35, 8)
    assert rfrp.bin_center(3, 2) == (35.0, 25.0)
    with pytest.raises(ValueError):
        rfrp.bin_of(0.0, 95.0)


def test_steering_unit_modulus():
    w = rfrp.steering_weights(40.0, 20.0)
    assert w.shape == (16,)
    np.testing.assert_allclose(np.abs(w), 1.0, atol=1e-12)
    assert abs(w[0] - 1.0) < 1e-12


def test_line_of_sight_peak():
    az, el = math.radians(125.0), math.radians(35.0)
    tx = 1e5 * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
    spec = rfrp.spatial_spectrum(tx)
    assert spec.shape == (rfrp.AZIMUTH_BINS, rfrp.ELEVATION_BINS)
    assert np.unravel_index(np.argmax(spec), spec.shape) == (12, 3)
    assert spec.max() <= 1.0 + 1e-5  # per-element 1/d amplitude ratios


def test_triangulate_and_degenerate():
    target = np.array([1.0, 2.0, 0.5])
    origins = [np.zeros(3), np.array([4.0, 0.0, 0.0]), np.array([0.0, 5.0, 2.0])]
    dirs = [target - o for o in origins]
    np.testing.assert_allclose(rfrp.triangulate(origins, dirs), target, atol=1e-9)
    with pytest.raises(rfrp.DegenerateInput):
        rfrp.triangulate(origins[:2], [np.array([1.0, 0, 0]), np.array([1.0, 0, 0])])


def test_schedule_and_mask():
    assert abs(rfrp.lr_at(0, 1000, 50) - 3e-5) < 1e-12
    assert abs(rfrp.lr_at(50, 1000, 50) - 3e-4) < 1e-12
    assert rfrp.masked_count(0.75) == 27


def test_encodings_and_ssim():
    assert rfrp.fourier_encode(0.3, 32).shape == (32,)
    assert rfrp.positional_encoding(5.0, 16).shape == (16,)
    a = np.random.default_rng(0).random((36, 9))
    assert abs(rfrp.ssim(a, a) - 1.0) < 1e-12


def test_gate_top_k():
    rng = np.random.default_rng(1)
    scores, gates, selected = rfrp.gate(rng.normal(size=(5, 8)), rng.normal(size=(3, 8)), 2)
    np.testing.assert_allclose(scores.sum(axis=1), 1.0, atol=1e-12)
    assert all(len(s) == 2 for s in selected)
    assert ((gates > 0).sum(axis=1) == 2).all()
    assert rfrp.top_k_indices(np.array([1.0, 3.0, 3.0]), 1) == [1]


def test_config_round_trip():
    desk = json.loads(rfrp.desk_config_json())
    again = json.loads(rfrp.config_to_json(json.dumps(desk)))
    assert again == desk
    with pytest.raises(ValueError):
        rfrp.config_to_json('{"no_such_key": 1}')


def test_dataset_round_trip(tmp_path):
    cfg = json.dumps({"dataset": {"pretrain_scenes": 1, "test_scenes": 1,
                                  "samples_per_scene": 12, "test_samples_per_scene": 10}})
    scenes = rfrp.generate_dataset(cfg, 3, str(tmp_path))
    assert [s["split"] for s in scenes] == ["pretrain", "test"]
    back = rfrp.read_dataset(str(tmp_path))
    for a, b in zip(scenes, back):
        assert a["scene_id"] == b["scene_id"]
        np.testing.assert_array_equal(a["spectra"], b["spectra"])
        np.testing.assert_array_equal(np.isnan(a["tx"]), np.isnan(b["tx"]))
    assert not np.isnan(scenes[1]["tx"]).any()


def test_missing_checkpoint(tmp_path):
    with pytest.raises(rfrp.CheckpointError):
        rfrp.checkpoint_summary(str(tmp_path / "nope.ckpt"))
