"""Smoke tests for the Python bindings."""

import math

import pytest

import usat


def test_sincos_matches_reference():
    v = usat.sincos_1d(1.0, 4, 10000.0)
    assert v[0] == pytest.approx(math.sin(1.0), abs=1e-12)
    assert v[1] == pytest.approx(math.cos(1.0), abs=1e-12)
    assert v[2] == pytest.approx(math.sin(0.01), abs=1e-12)
    assert v[3] == pytest.approx(math.cos(0.01), abs=1e-12)


def test_geometry_and_sequence_length():
    geom = usat.usatlas_geometry()
    assert geom.image_footprint_m == 320.0
    assert geom.fine_patch_extent_m == 16.0
    assert usat.sequence_length(geom) == 420
    assert usat.sequence_length(geom, [(1, "Red")]) == 16
    assert usat.fine_grid_offset(320.0, 1280.0, 16.0) == 30.0


def test_validation_errors_surface_as_python_exceptions():
    with pytest.raises(ValueError):
        usat.sincos_1d(1.0, 3, 10000.0)
    with pytest.raises(ValueError):
        usat.mask_count(4, 1.5)


def test_masking_counts():
    assert usat.mask_count(20, 0.75) == 300
    geom = usat.usatlas_geometry()
    masks = usat.sample_masks(geom, 0.75, seed=11)
    assert sum(masks[0]) == 300
    assert sum(masks[1]) == 12
    assert sum(masks[2]) == 3
    assert usat.sample_masks(geom, 0.75, seed=11) == masks


def test_superpositional_shapes_and_bounds():
    geom = usat.usatlas_geometry()
    enc = usat.superpositional(geom, group_id=2, pos_dim=16)
    assert len(enc) == 4  # 2x2 coarse grid
    assert all(-1.0 - 1e-12 <= x <= 1.0 + 1e-12 for row in enc for x in row)
    table = usat.compose_encodings(geom, d_model=64)
    assert len(table) == 420
    assert len(table[0]) == 64


def test_average_precision_hand_case():
    assert usat.average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(5.0 / 6.0)
    scores = [[0.9, 0.1], [0.2, 0.8]]
    labels = [[1, 0], [0, 1]]
    assert usat.micro_ap(scores, labels) == pytest.approx(1.0)
    assert usat.macro_ap(scores, labels) == pytest.approx(1.0)
    assert usat.accuracy(scores, labels) == pytest.approx(1.0)


def test_bilinear_resample():
    out = usat.bilinear_resample([[0.0, 1.0], [2.0, 3.0]], 1.0, 2.0)
    assert out == [[1.5]]


def test_synth_and_pretrain_round_trip(tmp_path):
    ds = tmp_path / "ds"
    n = usat.synth_generate(str(ds), seed=3, n=6, classes=3, val_fraction=0.34)
    assert n == 6
    assert (ds / "manifest.json").exists()

    ckpt = tmp_path / "ckpt"
    losses = usat.pretrain(str(ds), str(ckpt), preset="tiny", epochs=1, batch=4, seed=1)
    assert losses, "expected at least one training step"
    assert all(math.isfinite(l) for l in losses)
    assert (ckpt / "params.bin").exists()
