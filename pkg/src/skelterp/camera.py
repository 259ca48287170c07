"""Central-projection camera with analytic derivatives.

Maps the recoverable state (alpha, omega, t, f) to 2D keypoints:

    x = f * X_c / Z_c,  y = f * Y_c / Z_c,  (X_c, Y_c, Z_c) = R(omega) y_i + t

with R the Rodrigues exponential map of the axis-angle vector omega.
The principal point sits at the image-plane origin; no skew, square
pixels. Every operation here has a closed-form Jacobian so the whole
chain can be driven by gradient-based training and fitting.

Jacobian column layout is fixed package-wide as (alpha_1..alpha_K,
omega_1..3, t_1..3, f); projected coordinates flatten row-major from the
(2, N) array, i.e. all x coordinates first, then all y.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .skeleton import SkeletonSpec, compose_shape
from .validation import as_float_array, check_alpha, check_finite, check_shape3d

DEPTH_EPSILON = 1e-4

# angle below which the Rodrigues coefficients switch to their Taylor series
_SMALL_ANGLE = 1e-8

# skew generators: d[w]_x / d w_k
_SKEW_GENERATORS = np.array(
    [
        [[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]],
        [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
        [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
    ]
)


class DepthDomainError(ValueError):
    """A keypoint's camera-frame depth fell below the safe threshold."""

    def __init__(self, index: int, depth: float):
        self.index = int(index)
        self.depth = float(depth)
        super().__init__(
            f"keypoint {index} has depth {depth:.6g} <= {DEPTH_EPSILON:g}; "
            "object must stay in front of the camera"
        )


@dataclass(frozen=True)
class CameraPose:
    """Axis-angle rotation, translation and focal length of one view."""

    omega: np.ndarray
    t: np.ndarray
    f: float

    def __post_init__(self):
        omega = as_float_array(self.omega, (3,), "omega")
        t = as_float_array(self.t, (3,), "t")
        check_finite(omega, "omega")
        check_finite(t, "t")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "f", float(self.f))
        if not np.isfinite(self.f) or self.f <= 0.0:
            raise ValueError(f"focal length must be positive and finite, got {self.f}")
        if np.linalg.norm(omega) >= np.pi:
            raise ValueError(
                f"|omega| = {np.linalg.norm(omega):.6g} outside the canonical "
                "axis-angle chart (< pi)"
            )

    def as_vector(self) -> np.ndarray:
        """(omega, t, f) packed as a length-7 vector."""
        return np.concatenate([self.omega, self.t, [self.f]])


def skew(v) -> np.ndarray:
    v = as_float_array(v, (3,), "v")
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
    )


def _rodrigues_coefficients(theta: float):
    """Coefficients a = sin(t)/t and b = (1-cos(t))/t^2 of the exponential map.

    Returns (a, b, da, db) where da = (da/dtheta)/theta and
    db = (db/dtheta)/theta, both finite at theta = 0.
    """
    if theta < _SMALL_ANGLE:
        # Taylor: a = 1 - t^2/6, b = 1/2 - t^2/24
        return 1.0, 0.5, -1.0 / 3.0, -1.0 / 12.0
    s, c = np.sin(theta), np.cos(theta)
    a = s / theta
    b = (1.0 - c) / (theta * theta)
    da = (theta * c - s) / theta**3
    db = (theta * s - 2.0 * (1.0 - c)) / theta**4
    return a, b, da, db


def rodrigues(omega, with_derivative: bool = False):
    """Exponential map from axis-angle to a rotation matrix.

    With with_derivative=True also returns the (3, 3, 3) tensor
    dR/d(omega_k) indexed [k, i, j].
    """
    omega = as_float_array(omega, (3,), "omega")
    check_finite(omega, "omega")
    theta = float(np.linalg.norm(omega))
    w = skew(omega)
    w2 = w @ w
    a, b, da_t, db_t = _rodrigues_coefficients(theta)
    r = np.eye(3) + a * w + b * w2
    if not with_derivative:
        return r
    drs = np.empty((3, 3, 3))
    for k in range(3):
        gen = _SKEW_GENERATORS[k]
        # d(theta)/d(omega_k) = omega_k / theta folded into the *_t factors
        da_k = da_t * omega[k]
        db_k = db_t * omega[k]
        drs[k] = da_k * w + a * gen + db_k * w2 + b * (gen @ w + w @ gen)
    return r, drs


def rotation_log(r) -> np.ndarray:
    """Inverse of rodrigues: axis-angle vector with |omega| <= pi."""
    r = as_float_array(r, (3, 3), "rotation")
    trace = float(np.clip(np.trace(r), -1.0, 3.0))
    theta = float(np.arccos(np.clip((trace - 1.0) / 2.0, -1.0, 1.0)))
    if theta < _SMALL_ANGLE:
        return 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if np.pi - theta < 1e-6:
        # near pi the skew part vanishes; recover the axis from R + I
        m = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(m), 0.0, None))
        k = int(np.argmax(axis))
        if axis[k] > 0.0:
            axis = m[:, k] / axis[k]
            axis /= np.linalg.norm(axis)
        else:
            axis = np.array([1.0, 0.0, 0.0])
        # fix the sign using the (tiny) skew part
        skew_part = np.array(
            [r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]
        )
        if skew_part @ axis < 0.0:
            axis = -axis
        return theta * axis
    axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return theta / (2.0 * np.sin(theta)) * axis


def canonical_omega(omega) -> np.ndarray:
    """Wrap a rotation vector into the open ball of radius pi.

    The represented rotation is unchanged; magnitudes at exactly pi are
    nudged inside the open ball so CameraPose accepts the result.
    """
    omega = np.asarray(omega, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(omega))
    if theta < np.pi:
        return omega
    axis = omega / theta
    wrapped = np.remainder(theta + np.pi, 2.0 * np.pi) - np.pi
    wrapped = np.clip(wrapped, -np.pi * (1.0 - 1e-12), np.pi * (1.0 - 1e-12))
    return axis * wrapped


def transform_to_camera(shape, pose: CameraPose) -> np.ndarray:
    """Apply the rigid camera transform R y + t; no depth check."""
    y = check_shape3d(shape)
    r = rodrigues(pose.omega)
    return r @ y + pose.t[:, None]


def project(shape, pose: CameraPose) -> np.ndarray:
    """Central projection of a 3 x N shape to 2 x N image coordinates.

    Raises DepthDomainError naming the first keypoint whose camera-frame
    depth is at or below DEPTH_EPSILON.
    """
    p = transform_to_camera(shape, pose)
    z = p[2]
    bad = np.flatnonzero(z <= DEPTH_EPSILON)
    if bad.size:
        raise DepthDomainError(bad[0], z[bad[0]])
    return pose.f * p[:2] / z


def reproject(spec: SkeletonSpec, alpha, pose: CameraPose) -> np.ndarray:
    """Compose the shape from weights, then project it."""
    return project(compose_shape(spec, alpha), pose)


def projection_system(
    spec: SkeletonSpec, alpha, pose: CameraPose, z_safe: float = DEPTH_EPSILON
) -> dict:
    """Projection values and derivatives, tolerant of unsafe depths.

    Unlike project/projection_jacobian this never raises on shallow
    depths; projection entries and Jacobian rows of keypoints with depth
    <= z_safe are zeroed and flagged so callers can substitute a depth
    penalty. Returns a dict with:

    - depths: (N,) camera-frame depths
    - safe: (N,) bool, depth > z_safe
    - uv: (2, N) projections, zeroed where unsafe
    - jac: (2N, K+7) projection Jacobian, unsafe rows zeroed; rows follow
      the row-major flattening of (2, N) (all u, then all v), columns are
      (alpha, omega, t, f)
    - depth_jac: (N, K+7) depth derivatives (the f column is zero)
    """
    return projection_system_raw(spec, alpha, pose.omega, pose.t, pose.f, z_safe)


def projection_system_raw(
    spec: SkeletonSpec, alpha, omega, t, f, z_safe: float = DEPTH_EPSILON
) -> dict:
    """projection_system on raw (omega, t, f) without CameraPose checks.

    Training loops may evaluate transient parameter iterates outside the
    canonical pose domain (e.g. rotation vectors past pi); the formulas
    remain valid for any finite inputs.
    """
    alpha = check_alpha(spec, alpha)
    omega = np.asarray(omega, dtype=np.float64).reshape(3)
    t = np.asarray(t, dtype=np.float64).reshape(3)
    f = float(f)
    y = compose_shape(spec, alpha)
    r, drs = rodrigues(omega, with_derivative=True)
    p = r @ y + t[:, None]
    k, n = spec.n_basis, spec.n_keypoints
    z = p[2]
    safe = z > z_safe
    inv_z = np.where(safe, 1.0, 0.0) / np.where(safe, z, 1.0)
    x_over_z = p[0] * inv_z
    y_over_z = p[1] * inv_z

    # camera-point derivatives per parameter, (K+6, 3, N); f moves no point
    dps = np.empty((k + 6, 3, n))
    for j in range(k):
        dps[j] = r @ spec.base_shapes[j]
    for j in range(3):
        dps[k + j] = drs[j] @ y
    dps[k + 3 :] = 0.0
    for j in range(3):
        dps[k + 3 + j, j] = 1.0

    # u = f X/Z -> du/dp = f/Z (dp_x - X/Z dp_z); v likewise
    du = f * inv_z * (dps[:, 0] - x_over_z * dps[:, 2])
    dv = f * inv_z * (dps[:, 1] - y_over_z * dps[:, 2])
    jac = np.empty((2 * n, k + 7))
    jac[:n, : k + 6] = du.T
    jac[n:, : k + 6] = dv.T
    jac[:n, k + 6] = x_over_z
    jac[n:, k + 6] = y_over_z
    jac[:n][~safe] = 0.0
    jac[n:][~safe] = 0.0
    depth_jac = np.zeros((n, k + 7))
    depth_jac[:, : k + 6] = dps[:, 2].T
    uv = np.vstack([f * x_over_z, f * y_over_z])
    return {"depths": z, "safe": safe, "uv": uv, "jac": jac, "depth_jac": depth_jac}


def projection_jacobian(spec: SkeletonSpec, alpha, pose: CameraPose) -> np.ndarray:
    """Analytic Jacobian of reproject, shape (2N, K + 7).

    Rows follow the row-major flattening of the (2, N) coordinate array;
    columns are (alpha, omega, t, f). Raises DepthDomainError when any
    keypoint sits at or below the safe depth.
    """
    sys = projection_system(spec, alpha, pose)
    bad = np.flatnonzero(~sys["safe"])
    if bad.size:
        raise DepthDomainError(bad[0], sys["depths"][bad[0]])
    return sys["jac"]


def _perturbed_pose(pose: CameraPose, d_omega, d_t, d_f) -> CameraPose:
    return CameraPose(pose.omega + d_omega, pose.t + d_t, pose.f + d_f)


def numeric_jacobian(
    spec: SkeletonSpec, alpha, pose: CameraPose, step: float = 1e-6
) -> np.ndarray:
    """Central-difference Jacobian of reproject; same layout as the analytic one."""
    if step <= 0.0:
        raise ValueError(f"step must be positive, got {step}")
    alpha = check_alpha(spec, alpha)
    k, n = spec.n_basis, spec.n_keypoints
    jac = np.empty((2 * n, k + 7))

    def flat(a, p):
        return reproject(spec, a, p).ravel()

    for j in range(k):
        e = np.zeros(k)
        e[j] = step
        jac[:, j] = (flat(alpha + e, pose) - flat(alpha - e, pose)) / (2.0 * step)
    zero3 = np.zeros(3)
    for j in range(3):
        e = np.zeros(3)
        e[j] = step
        hi = flat(alpha, _perturbed_pose(pose, e, zero3, 0.0))
        lo = flat(alpha, _perturbed_pose(pose, -e, zero3, 0.0))
        jac[:, k + j] = (hi - lo) / (2.0 * step)
    for j in range(3):
        e = np.zeros(3)
        e[j] = step
        hi = flat(alpha, _perturbed_pose(pose, zero3, e, 0.0))
        lo = flat(alpha, _perturbed_pose(pose, zero3, -e, 0.0))
        jac[:, k + 3 + j] = (hi - lo) / (2.0 * step)
    hi = flat(alpha, _perturbed_pose(pose, zero3, zero3, step))
    lo = flat(alpha, _perturbed_pose(pose, zero3, zero3, -step))
    jac[:, k + 6] = (hi - lo) / (2.0 * step)
    return jac
