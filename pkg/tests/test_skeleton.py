import json

import numpy as np
import pytest

import skelterp as sk
from skelterp.skeleton import (
    BUNDLED_SPECS,
    SkeletonSpec,
    SpecFormatError,
    shape_basis_jacobian,
)


def test_bundled_specs_load():
    for name in BUNDLED_SPECS:
        spec = sk.bundled_spec(name)
        assert spec.n_keypoints >= 4
        assert spec.n_basis >= 1
        assert len(spec.keypoint_names) == spec.n_keypoints


def test_bundled_spec_unknown_name():
    with pytest.raises(ValueError, match="unknown bundled spec"):
        sk.bundled_spec("sofa")


def test_mean_shape_is_canonical(chair):
    # first base shape sits in the canonical frame
    mean = chair.mean_shape
    assert np.allclose(mean.mean(axis=1), 0.0, atol=1e-9)
    assert sk.diagonal_length(mean) == pytest.approx(1.0, abs=1e-9)


def test_deformation_bases_are_mean_free(chair, tetrapod):
    for spec in (chair, tetrapod):
        if spec.n_basis > 1:
            centroids = spec.base_shapes[1:].mean(axis=2)
            assert np.allclose(centroids, 0.0, atol=1e-9)


def test_alpha_range_contains_one(chair):
    lo, hi = chair.alpha_ranges[0]
    assert lo <= 1.0 <= hi


def test_compose_is_linear_combination(chair, rng):
    alpha = rng.uniform(-1.0, 1.0, chair.n_basis)
    shape = sk.compose_shape(chair, alpha)
    # brute-force sum over base shapes
    expected = np.zeros((3, chair.n_keypoints))
    for k in range(chair.n_basis):
        expected += alpha[k] * chair.base_shapes[k]
    assert np.allclose(shape, expected, atol=1e-12)


def test_compose_unit_alpha_is_mean(chair):
    alpha = np.zeros(chair.n_basis)
    alpha[0] = 1.0
    assert np.allclose(sk.compose_shape(chair, alpha), chair.mean_shape)


def test_compose_rejects_wrong_length(chair):
    with pytest.raises(ValueError):
        sk.compose_shape(chair, np.ones(chair.n_basis + 1))


def test_shape_basis_jacobian_matches_compose(chair, rng):
    jac = shape_basis_jacobian(chair)  # (3N, K)
    alpha = rng.uniform(-1.0, 1.0, chair.n_basis)
    assert np.allclose(
        jac @ alpha, sk.compose_shape(chair, alpha).ravel(), atol=1e-12
    )


def test_canonicalize_centroid_and_diagonal(chair, rng):
    alpha = np.zeros(chair.n_basis)
    alpha[0] = 1.0
    alpha[1:] = rng.uniform(-0.3, 0.3, chair.n_basis - 1)
    canon = sk.canonicalize_shape(sk.compose_shape(chair, alpha))
    assert np.allclose(canon.mean(axis=1), 0.0, atol=1e-12)
    assert sk.diagonal_length(canon) == pytest.approx(1.0, abs=1e-12)


def test_canonicalize_removes_similarity(chair, rng):
    shape = chair.mean_shape
    moved = 3.7 * shape + rng.normal(size=(3, 1))
    assert np.allclose(
        sk.canonicalize_shape(shape), sk.canonicalize_shape(moved), atol=1e-9
    )


def test_canonicalize_degenerate_raises():
    flat = np.zeros((3, 5))
    with pytest.raises(ValueError):
        sk.canonicalize_shape(flat)


def test_diagonal_length_oracle(rng):
    shape = rng.normal(size=(3, 8))
    lo = shape.min(axis=1)
    hi = shape.max(axis=1)
    assert sk.diagonal_length(shape) == pytest.approx(
        float(np.linalg.norm(hi - lo)), abs=1e-12
    )


def test_save_load_round_trip(tmp_path, chair):
    path = tmp_path / "chair.json"
    sk.save_spec(chair, path)
    again = sk.load_spec(path)
    assert again.name == chair.name
    assert again.keypoint_names == chair.keypoint_names
    assert again.connections == chair.connections
    assert np.array_equal(again.base_shapes, chair.base_shapes)
    assert np.array_equal(again.alpha_ranges, chair.alpha_ranges)


def test_load_rejects_bad_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(SpecFormatError):
        sk.load_spec(path)


def test_load_rejects_missing_field(tmp_path, chair):
    path = tmp_path / "chair.json"
    sk.save_spec(chair, path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    del doc["base_shapes"]
    path.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(SpecFormatError):
        sk.load_spec(path)


def test_spec_first_alpha_interval_must_contain_one(chair):
    ranges = chair.alpha_ranges.copy()
    ranges[0] = [2.0, 3.0]
    with pytest.raises(SpecFormatError, match="contain 1.0"):
        SkeletonSpec(
            chair.name,
            chair.keypoint_names,
            chair.connections,
            chair.base_shapes,
            ranges,
        )


def test_spec_rejects_bad_connection_index(chair):
    with pytest.raises(SpecFormatError, match="out of range"):
        SkeletonSpec(
            chair.name,
            chair.keypoint_names,
            ((0, chair.n_keypoints),),
            chair.base_shapes,
            chair.alpha_ranges,
        )
