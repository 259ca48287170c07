import numpy as np
import pytest

import skelterp as sk
from skelterp.camera import (
    DEPTH_EPSILON,
    CameraPose,
    DepthDomainError,
    canonical_omega,
    numeric_jacobian,
    projection_system,
    projection_system_raw,
    rodrigues,
    rotation_log,
    skew,
    transform_to_camera,
)


def test_rodrigues_identity():
    assert np.allclose(rodrigues(np.zeros(3)), np.eye(3), atol=1e-15)


def test_rodrigues_quarter_turn_z():
    r = rodrigues(np.array([0.0, 0.0, np.pi / 2]))
    assert np.allclose(r @ [1, 0, 0], [0, 1, 0], atol=1e-12)


def test_rodrigues_orthonormal_sweep(rng):
    for _ in range(200):
        omega = rng.uniform(-np.pi, np.pi, 3)
        r = rodrigues(omega)
        assert np.allclose(r.T @ r, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)


def test_rodrigues_small_angle_branch(rng):
    # Taylor branch must agree with the generic formula just above the cut
    for scale in (1e-9, 5e-9, 2e-8, 1e-7):
        omega = scale * np.array([0.3, -0.7, 0.64])
        r = rodrigues(omega)
        assert np.allclose(r, np.eye(3) + skew(omega), atol=1e-15)


def test_rodrigues_derivative_vs_fd(rng):
    step = 1e-6
    for _ in range(30):
        omega = rng.uniform(-2.0, 2.0, 3)
        _, dr = rodrigues(omega, with_derivative=True)
        for a in range(3):
            e = np.zeros(3)
            e[a] = step
            fd = (rodrigues(omega + e) - rodrigues(omega - e)) / (2 * step)
            assert np.max(np.abs(dr[a] - fd)) < 1e-8


def test_rotation_log_round_trip(rng):
    for _ in range(200):
        omega = rng.uniform(-np.pi, np.pi, 3)
        omega = omega / max(np.linalg.norm(omega) / (np.pi - 1e-6), 1.0)
        back = rotation_log(rodrigues(omega))
        assert np.allclose(back, omega, atol=1e-8)


def test_rotation_log_near_pi():
    for axis in (np.array([1.0, 0, 0]), np.array([0.6, -0.64, 0.48])):
        axis = axis / np.linalg.norm(axis)
        omega = (np.pi - 1e-9) * axis
        back = rotation_log(rodrigues(omega))
        assert np.allclose(rodrigues(back), rodrigues(omega), atol=1e-7)


def test_canonical_omega_wraps_into_open_ball(rng):
    for _ in range(100):
        omega = rng.uniform(-3.0, 3.0, 3) * rng.uniform(0.5, 3.0)
        wrapped = canonical_omega(omega)
        assert np.linalg.norm(wrapped) < np.pi
        assert np.allclose(rodrigues(wrapped), rodrigues(omega), atol=1e-9)


def test_pose_validation():
    with pytest.raises(ValueError):
        CameraPose(np.array([4.0, 0.0, 0.0]), np.array([0.0, 0.0, 3.0]), 2.0)
    with pytest.raises(ValueError):
        CameraPose(np.zeros(3), np.array([0.0, 0.0, 3.0]), -1.0)


def test_project_matches_formula(chair, rng, make_pose, make_alpha):
    pose = make_pose(rng)
    shape = sk.compose_shape(chair, make_alpha(rng, chair))
    x = sk.project(shape, pose)
    cam = rodrigues(pose.omega) @ shape + pose.t[:, None]
    assert np.allclose(x, pose.f * cam[:2] / cam[2], atol=1e-12)


def test_project_depth_error():
    shape = np.zeros((3, 4))
    pose = CameraPose(np.zeros(3), np.array([0.0, 0.0, DEPTH_EPSILON / 2]), 1.0)
    with pytest.raises(DepthDomainError):
        sk.project(shape, pose)


def test_similarity_gauge_invariance(chair, rng, make_pose, make_alpha):
    # project(sY, R, sT, f) == project(Y, R, T, f)
    for _ in range(100):
        pose = make_pose(rng)
        shape = sk.compose_shape(chair, make_alpha(rng, chair))
        s = rng.uniform(0.2, 5.0)
        scaled = CameraPose(pose.omega, s * pose.t, pose.f)
        assert np.allclose(
            sk.project(s * shape, scaled), sk.project(shape, pose), atol=1e-9
        )


def test_reproject_equals_project_of_composed(chair, rng, make_pose, make_alpha):
    alpha = make_alpha(rng, chair)
    pose = make_pose(rng)
    assert np.allclose(
        sk.reproject(chair, alpha, pose),
        sk.project(sk.compose_shape(chair, alpha), pose),
        atol=1e-12,
    )


def test_jacobian_matches_numeric(chair, rng, make_pose, make_alpha):
    for _ in range(20):
        alpha = make_alpha(rng, chair)
        pose = make_pose(rng)
        jac = sk.projection_jacobian(chair, alpha, pose)
        num = numeric_jacobian(chair, alpha, pose, step=1e-5)
        scale = max(np.abs(num).max(), 1.0)
        assert np.max(np.abs(jac - num)) / scale < 1e-6


def test_jacobian_shape_and_layout(chair, make_pose, rng, make_alpha):
    alpha = make_alpha(rng, chair)
    pose = make_pose(rng)
    jac = sk.projection_jacobian(chair, alpha, pose)
    n, k = chair.n_keypoints, chair.n_basis
    assert jac.shape == (2 * n, k + 7)
    # translation columns: du/dtx = f/Z, du/dtz = -f X / Z^2
    cam = transform_to_camera(sk.compose_shape(chair, alpha), pose)
    assert np.allclose(jac[:n, k + 3], pose.f / cam[2], atol=1e-12)
    assert np.allclose(jac[:n, k + 4], 0.0, atol=1e-12)
    # focal column: du/df = X/Z
    assert np.allclose(jac[:n, k + 6], cam[0] / cam[2], atol=1e-12)


def test_jacobian_raises_on_unsafe_depth(chair):
    alpha = np.zeros(chair.n_basis)
    alpha[0] = 1.0
    pose = CameraPose(np.zeros(3), np.array([0.0, 0.0, 0.3]), 1.0)
    # keypoints straddle the z=0.3 plane at this depth
    with pytest.raises(DepthDomainError):
        sk.projection_jacobian(chair, alpha, pose)


def test_projection_system_masks_unsafe_rows(chair):
    alpha = np.zeros(chair.n_basis)
    alpha[0] = 1.0
    sysm = projection_system_raw(chair, alpha, np.zeros(3), np.array([0.0, 0.0, 0.0]), 1.5)
    n = chair.n_keypoints
    assert sysm["safe"].any() and not sysm["safe"].all()
    bad = ~sysm["safe"]
    rows = np.concatenate([bad, bad])
    assert np.all(sysm["jac"][rows] == 0.0)
    assert np.all(sysm["uv"][:, bad] == 0.0)


def test_projection_system_depth_jacobian(chair, rng, make_pose, make_alpha):
    alpha = make_alpha(rng, chair)
    pose = make_pose(rng)
    sysm = projection_system(chair, alpha, pose)
    k, n = chair.n_basis, chair.n_keypoints
    step = 1e-6
    # finite-difference depth derivative along t_z
    p_hi = CameraPose(pose.omega, pose.t + [0, 0, step], pose.f)
    p_lo = CameraPose(pose.omega, pose.t - [0, 0, step], pose.f)
    d_hi = transform_to_camera(sk.compose_shape(chair, alpha), p_hi)[2]
    d_lo = transform_to_camera(sk.compose_shape(chair, alpha), p_lo)[2]
    fd = (d_hi - d_lo) / (2 * step)
    assert np.allclose(sysm["depth_jac"][:, k + 5], fd, atol=1e-8)
    # depth does not depend on f
    assert np.all(sysm["depth_jac"][:, k + 6] == 0.0)


def test_projection_system_agrees_with_jacobian(chair, rng, make_pose, make_alpha):
    alpha = make_alpha(rng, chair)
    pose = make_pose(rng)
    sysm = projection_system(chair, alpha, pose)
    assert np.allclose(sysm["jac"], sk.projection_jacobian(chair, alpha, pose))
    assert np.allclose(sysm["uv"], sk.reproject(chair, alpha, pose))
