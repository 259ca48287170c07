"""Optimization-based comparator: fit (alpha, R, T, f) to 2D keypoints.

A parallel-projection (weak-perspective) initializer alternates between
solving the basis weights and the scaled-orthographic pose, then a
perspective refinement polishes all parameters against the full central
projection. The shape-scale gauge is fixed by freezing alpha_1 at 1;
translation and focal length absorb the rest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import (
    CameraPose,
    canonical_omega,
    projection_system_raw,
    rodrigues,
    rotation_log,
)
from .heatmaps import HeatmapStack, decode_argmax
from .skeleton import SkeletonSpec, compose_shape
from .validation import check_keypoints2d

ALPHA_RIDGE = 1e-6
INIT_ITERATIONS = 60  # alternating rounds before the joint polish takes over
INIT_POLISH_ITERATIONS = 40
INIT_TOL = 1e-11
DEFAULT_F_RANGE = (1.0, 3.0)
MIN_VISIBLE_FIT = 4


class UnderdeterminedFitError(ValueError):
    """Fewer visible keypoints than the fit needs."""


@dataclass(frozen=True)
class ParallelInit:
    """Weak-perspective initial guess from alternating least squares."""

    alpha: np.ndarray
    rotation: np.ndarray  # (3, 3)
    t2: np.ndarray  # (2,) image-plane translation
    scale: float
    degenerate: bool  # basis system was rank-deficient (ridge carried it)
    iterations: int


@dataclass(frozen=True)
class FitResult:
    """Outcome of a perspective fit."""

    alpha: np.ndarray
    pose: CameraPose
    residual: float  # mean squared reprojection error over visible keypoints
    iterations: int
    converged: bool
    degenerate_init: bool = False
    residual_trace: tuple = field(default=(), repr=False)


def _check_visibility(x, visibility, n: int):
    if visibility is None:
        vis = np.ones(n, dtype=bool)
    else:
        vis = np.asarray(visibility, dtype=bool).reshape(n)
    if int(vis.sum()) < MIN_VISIBLE_FIT:
        raise UnderdeterminedFitError(
            f"need at least {MIN_VISIBLE_FIT} visible keypoints, got {int(vis.sum())}"
        )
    return vis


def _polar_pose(shape_vis, x_vis):
    """Least-squares scaled-orthographic pose for centered data.

    Returns (rotation (3,3), t2 (2,), scale). The 2x3 linear map is
    projected to scale times orthonormal rows by dropping the singular
    value stretch; the third row completes a right-handed frame.
    """
    y_mean = shape_vis.mean(axis=1, keepdims=True)
    x_mean = x_vis.mean(axis=1, keepdims=True)
    yc = shape_vis - y_mean
    xc = x_vis - x_mean
    # M minimizes ||xc - M yc||: M = xc yc^T (yc yc^T)^+
    gram = yc @ yc.T
    m = xc @ yc.T @ np.linalg.pinv(gram)
    u, sing, vt = np.linalg.svd(m, full_matrices=False)
    r2 = u @ vt  # orthonormal rows
    scale = float(sing.mean())
    r3 = np.cross(r2[0], r2[1])
    rotation = np.vstack([r2, r3])
    t2 = (x_mean - scale * r2 @ y_mean).ravel()
    return rotation, t2, scale


def _alpha_step(spec, rotation, t2, scale, x_vis, vis):
    """Ridge least squares for alpha with alpha_1 frozen at 1."""
    k = spec.n_basis
    proj_bases = np.stack(
        [scale * (rotation[:2] @ b[:, vis]) for b in spec.base_shapes]
    )  # (K, 2, n_vis)
    b_vec = (x_vis - t2[:, None] - proj_bases[0]).ravel()
    if k == 1:
        return np.array([1.0]), False
    a_mat = proj_bases[1:].reshape(k - 1, -1).T  # (2 n_vis, K-1)
    gram = a_mat.T @ a_mat
    eigs = np.linalg.eigvalsh(gram)
    degenerate = bool(eigs[0] < 1e-10 * max(eigs[-1], 1.0))
    rhs = a_mat.T @ b_vec
    free = np.linalg.solve(gram + ALPHA_RIDGE * np.eye(k - 1), rhs)
    return np.concatenate([[1.0], free]), degenerate


def _ortho_polish(spec, x_vis, vis, alpha, rotation, t2, scale, rounds):
    """Damped joint Gauss-Newton on the parallel-projection objective.

    The alternation above converges only linearly along the coupled
    rotation-deformation valley; a few joint linearized steps on the same
    objective r(q) = x - s Pi(R(w) Y(alpha)) - t2 finish the job. Steps
    are accepted only when the residual does not increase.
    """
    k = spec.n_basis
    n_vis = int(vis.sum())
    q = np.concatenate([alpha[1:], rotation_log(rotation), [scale], t2])

    def evaluate(qv):
        a = np.concatenate([[1.0], qv[: k - 1]])
        r_mat, drs = rodrigues(qv[k - 1 : k + 2], with_derivative=True)
        sc, tt = qv[k + 2], qv[k + 3 : k + 5]
        y = compose_shape(spec, a)
        resid = x_vis - sc * (r_mat[:2] @ y[:, vis]) - tt[:, None]
        return resid, a, r_mat, drs, sc, tt, y

    resid, a, r_mat, drs, sc, tt, y = evaluate(q)
    value = float(np.sum(resid**2))
    lam = ALPHA_RIDGE
    used = 0
    for used in range(1, rounds + 1):
        jac = np.zeros((2 * n_vis, k + 5))
        for j in range(1, k):
            jac[:, j - 1] = (-sc * (r_mat[:2] @ spec.base_shapes[j][:, vis])).ravel()
        for j in range(3):
            jac[:, k - 1 + j] = (-sc * (drs[j][:2] @ y[:, vis])).ravel()
        jac[:, k + 2] = (-(r_mat[:2] @ y[:, vis])).ravel()
        jac[:n_vis, k + 3] = -1.0
        jac[n_vis:, k + 4] = -1.0
        grad = jac.T @ resid.ravel()
        if float(np.linalg.norm(grad)) < 1e-14:
            break
        gram = jac.T @ jac
        eye = np.eye(k + 5)
        moved = False
        for _ in range(30):
            try:
                delta = np.linalg.solve(gram + lam * eye, -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand = q + delta
            out = evaluate(cand)
            v_new = float(np.sum(out[0] ** 2))
            if v_new <= value:
                q = cand
                resid, a, r_mat, drs, sc, tt, y = out
                value = v_new
                lam = max(lam / 3.0, 1e-12)
                moved = True
                break
            lam *= 10.0
        if not moved:
            break
    return a, r_mat, tt.copy(), float(sc), used


def init_parallel(
    x, spec: SkeletonSpec, visibility=None, iterations: int = INIT_ITERATIONS
) -> ParallelInit:
    """Alternating least squares under a parallel projection model.

    Minimizes ||x - s Pi(R sum_k alpha_k B_k) - t2||^2 over alpha and
    (s, R, t2), with the rotation re-projected onto the manifold via the
    orthogonal polar factor each round, then polishes with joint damped
    Gauss-Newton steps on the same objective. Deterministic given inputs.
    """
    x = check_keypoints2d(x, spec.n_keypoints)
    vis = _check_visibility(x, visibility, spec.n_keypoints)
    x_vis = x[:, vis]
    alpha = np.zeros(spec.n_basis)
    alpha[0] = 1.0
    degenerate = False
    rotation, t2, scale = _polar_pose(compose_shape(spec, alpha)[:, vis], x_vis)
    it = 0
    for it in range(1, iterations + 1):
        alpha_new, degenerate = _alpha_step(spec, rotation, t2, scale, x_vis, vis)
        shape_vis = compose_shape(spec, alpha_new)[:, vis]
        rotation, t2, scale = _polar_pose(shape_vis, x_vis)
        if np.max(np.abs(alpha_new - alpha)) < INIT_TOL:
            alpha = alpha_new
            break
        alpha = alpha_new
    if scale <= 0.0 or not np.all(np.isfinite(alpha)):
        return ParallelInit(alpha, rotation, t2, scale, True, it)
    alpha, rotation, t2, scale, polish_rounds = _ortho_polish(
        spec, x_vis, vis, alpha, rotation, t2, scale, INIT_POLISH_ITERATIONS
    )
    return ParallelInit(alpha, rotation, t2, scale, degenerate, it + polish_rounds)


def lift_to_perspective(init: ParallelInit, f_range=DEFAULT_F_RANGE) -> tuple:
    """Lift a weak-perspective guess to full central-projection parameters.

    The focal length starts at the midpoint of its sampling range; depth
    follows from the orthographic scale (s ~ f/t_z) and the image-plane
    translation is back-projected to that depth.
    """
    f0 = 0.5 * (float(f_range[0]) + float(f_range[1]))
    if init.scale <= 0:
        raise ValueError(f"non-positive orthographic scale {init.scale}")
    t_z = f0 / init.scale
    t_xy = init.t2 * t_z / f0
    omega = canonical_omega(rotation_log(init.rotation))
    t = np.array([t_xy[0], t_xy[1], t_z])
    return init.alpha.copy(), omega, t, f0


def _pack(alpha, omega, t, f):
    # free parameters: alpha without the frozen first weight, then pose
    return np.concatenate([alpha[1:], omega, t, [f]])


def _unpack(p, k):
    alpha = np.concatenate([[1.0], p[: k - 1]])
    return alpha, p[k - 1 : k + 2], p[k + 2 : k + 5], float(p[k + 5])


def _objective(spec, p, x, vis):
    """Mean squared reprojection error and gradient over free parameters.

    Returns (value, gradient, feasible); infeasible means some visible
    keypoint sits at unsafe depth, in which case value is +inf.
    """
    k = spec.n_basis
    alpha, omega, t, f = _unpack(p, k)
    sysm = projection_system_raw(spec, alpha, omega, t, f)
    if not np.all(sysm["safe"][vis]):
        return np.inf, None, False
    n_vis = int(vis.sum())
    resid = sysm["uv"] - x
    resid[:, ~vis] = 0.0
    value = float(np.sum(resid**2)) / n_vis
    g_full = 2.0 * (sysm["jac"].T @ resid.ravel()) / n_vis  # (K+7,) in (alpha, omega, t, f)
    grad = np.concatenate([g_full[1:k], g_full[k:]])
    return value, grad, True


def refine_perspective(
    x,
    spec: SkeletonSpec,
    init: ParallelInit,
    visibility=None,
    f_range=DEFAULT_F_RANGE,
    method: str = "gd",
    max_iterations: int = 2000,
    grad_tol: float = 1e-8,
    rel_tol: float = 1e-10,
) -> FitResult:
    """Refine a lifted initial guess under the full perspective model.

    method "gd" is gradient descent with backtracking line search;
    method "lm" takes damped Gauss-Newton steps (Levenberg style) on the
    same objective and stopping rules. Both stop on gradient norm <
    grad_tol, relative error decrease < rel_tol, or the iteration cap,
    and never raise on line-search failure (converged=False instead).
    """
    x = check_keypoints2d(x, spec.n_keypoints)
    vis = _check_visibility(x, visibility, spec.n_keypoints)
    if method not in ("gd", "lm"):
        raise ValueError(f"unknown method {method!r}")
    k = spec.n_basis
    alpha0, omega0, t0, f0 = lift_to_perspective(init, f_range)
    p = _pack(alpha0, omega0, t0, f0)
    value, grad, feasible = _objective(spec, p, x, vis)
    if not feasible:
        # fall back to a deeper, safer start along the optical axis
        t0 = np.array([0.0, 0.0, max(2.0 * t0[2], 1.0)])
        p = _pack(alpha0, omega0, t0, f0)
        value, grad, feasible = _objective(spec, p, x, vis)
    trace = [value]
    if not feasible:
        pose = CameraPose(canonical_omega(omega0), t0, max(f0, 1e-6))
        return FitResult(alpha0, pose, np.inf, 0, False, init.degenerate, tuple(trace))

    converged = False
    iterations = 0
    lm_lambda = ALPHA_RIDGE
    step_size = 1.0
    for iterations in range(1, max_iterations + 1):
        gnorm = float(np.linalg.norm(grad))
        if gnorm < grad_tol:
            converged = True
            iterations -= 1
            break
        moved = False
        if method == "lm":
            alpha, omega, t, f = _unpack(p, k)
            sysm = projection_system_raw(spec, alpha, omega, t, f)
            n_vis = int(vis.sum())
            resid = sysm["uv"] - x
            resid[:, ~vis] = 0.0
            jac_full = sysm["jac"]  # (2N, K+7)
            keep = np.concatenate([vis, vis])
            cols = np.concatenate([np.arange(1, k), np.arange(k, k + 7)])
            jac = jac_full[keep][:, cols]
            r_vec = resid.ravel()[keep]
            jtj = jac.T @ jac / n_vis
            jtr = jac.T @ r_vec / n_vis
            eye = np.eye(jtj.shape[0])
            for _ in range(40):
                try:
                    # adaptive damping alone guards the solve; a fixed floor
                    # would cap the convergence rate on weakly separated
                    # focal-length/depth directions
                    delta = np.linalg.solve(jtj + lm_lambda * eye, -jtr)
                except np.linalg.LinAlgError:
                    lm_lambda *= 10.0
                    continue
                cand = p + delta
                v_new, g_new, ok = _objective(spec, cand, x, vis)
                if ok and v_new <= value:
                    p, grad = cand, g_new
                    new_value = v_new
                    lm_lambda = max(lm_lambda / 3.0, 1e-12)
                    moved = True
                    break
                lm_lambda *= 10.0
        else:
            # backtracking line search along the negative gradient
            step = step_size
            for _ in range(60):
                cand = p - step * grad
                v_new, g_new, ok = _objective(spec, cand, x, vis)
                if ok and v_new <= value - 1e-4 * step * gnorm**2:
                    p, grad = cand, g_new
                    new_value = v_new
                    step_size = min(step * 2.0, 1e6)
                    moved = True
                    break
                step *= 0.5
        if not moved:
            break
        trace.append(new_value)
        if value - new_value < rel_tol * max(value, 1e-300):
            value = new_value
            converged = True
            break
        value = new_value

    alpha, omega, t, f = _unpack(p, k)
    pose = CameraPose(canonical_omega(omega), t, max(f, 1e-9))
    return FitResult(
        alpha, pose, value, iterations, converged, init.degenerate, tuple(trace)
    )


def fit_baseline(
    observation,
    spec: SkeletonSpec,
    visibility=None,
    f_range=DEFAULT_F_RANGE,
    method: str = "lm",
    **options,
) -> FitResult:
    """Full comparator pipeline: decode (if needed), initialize, refine.

    Heatmap stacks are converted to coordinates with decode_argmax; its
    dead-channel flags combine with any caller-supplied visibility.
    """
    if isinstance(observation, HeatmapStack):
        x, decoded_vis = decode_argmax(observation)
        if visibility is None:
            visibility = decoded_vis
        else:
            visibility = np.asarray(visibility, dtype=bool) & decoded_vis
    else:
        x = observation
    x = check_keypoints2d(x, spec.n_keypoints)
    vis = _check_visibility(x, visibility, spec.n_keypoints)
    init = init_parallel(x, spec, vis)
    return refine_perspective(
        x, spec, init, visibility=vis, f_range=f_range, method=method, **options
    )
