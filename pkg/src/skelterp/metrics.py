"""Evaluation measures: PCK, PCP, average error, 3D structure RMSE with
recall curves, azimuth error/recall, and parameter-space retrieval."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraPose, rodrigues
from .skeleton import SkeletonSpec, canonicalize_shape, compose_shape
from .validation import check_keypoints2d

AE_DEFAULT_BOUND = 5.0
PCP_FACTOR = 1.5
DEFAULT_AZIMUTH_DELTAS = (5.0, 10.0, 15.0, 22.5, 30.0)
# structure thresholds span strict to lenient in canonical (diagonal = 1) units
DEFAULT_RMSE_THRESHOLDS = tuple(np.round(np.linspace(0.01, 0.5, 50), 4))

_GIMBAL_EPS = 1e-6


class MetricError(ValueError):
    """Raised when a metric is undefined for the given inputs."""


@dataclass(frozen=True)
class CurveSeries:
    """A recall/accuracy curve sampled on an ascending threshold grid."""

    thresholds: np.ndarray
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        thr = np.asarray(self.thresholds, dtype=np.float64)
        val = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "thresholds", thr)
        object.__setattr__(self, "values", val)
        if thr.ndim != 1 or thr.shape != val.shape:
            raise ValueError("thresholds and values must be 1-D and equal length")
        if thr.size and np.any(np.diff(thr) <= 0):
            raise ValueError("thresholds must be strictly ascending")
        if np.any(val < 0.0) or np.any(val > 1.0):
            raise ValueError("curve values must lie in [0, 1]")


def _pair_distances(pred, gt):
    pred = check_keypoints2d(pred, name="pred")
    gt = check_keypoints2d(gt, name="gt")
    if pred.shape != gt.shape:
        raise MetricError(f"pred {pred.shape} and gt {gt.shape} differ in shape")
    return np.linalg.norm(pred - gt, axis=0)


def _as_instance_list(seq):
    if isinstance(seq, np.ndarray) and seq.ndim == 2:
        return [seq]
    return list(seq)


def pck_curve(preds, gts, normalizers, thresholds, mask=None) -> CurveSeries:
    """Percentage of correct keypoints vs normalized radius.

    preds/gts are sequences of (2, N) arrays; normalizers is one positive
    scale per instance (e.g. the ground-truth bounding-box diagonal). The
    value at radius r is the fraction of counted keypoints within
    r * normalizer of ground truth. mask optionally selects keypoints per
    instance.
    """
    preds, gts = _as_instance_list(preds), _as_instance_list(gts)
    normalizers = np.atleast_1d(np.asarray(normalizers, dtype=np.float64))
    if len(preds) != len(gts) or len(preds) != normalizers.size:
        raise MetricError("preds, gts and normalizers must have equal length")
    if np.any(normalizers <= 0):
        raise MetricError("normalizers must be positive")
    thresholds = np.asarray(thresholds, dtype=np.float64)
    ratios = []
    for i, (p, g) in enumerate(zip(preds, gts)):
        d = _pair_distances(p, g) / normalizers[i]
        if mask is not None:
            d = d[np.asarray(mask[i], dtype=bool)]
        ratios.append(d)
    ratios = np.concatenate(ratios) if ratios else np.empty(0)
    if ratios.size == 0:
        raise MetricError("no keypoints to score")
    values = np.array([(ratios <= r).mean() for r in thresholds])
    return CurveSeries(thresholds, values, label="pck")


def pcp(pred, gt, tolerances, mask=None) -> float:
    """Fraction of keypoints within 1.5x a per-keypoint tolerance."""
    d = _pair_distances(pred, gt)
    tol = np.asarray(tolerances, dtype=np.float64)
    if tol.ndim == 0:
        tol = np.full(d.shape, float(tol))
    if tol.shape != d.shape:
        raise MetricError(f"tolerances: expected {d.shape}, got {tol.shape}")
    if np.any(tol <= 0):
        raise MetricError("tolerances must be positive")
    ok = d <= PCP_FACTOR * tol
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if not m.any():
            raise MetricError("no keypoints to score")
        ok = ok[m]
    return float(ok.mean())


def average_error(pred, gt, bound: float = AE_DEFAULT_BOUND, cell_size: float = 1.0,
                  mask=None) -> float:
    """Mean keypoint distance in grid cells, each clipped at the bound."""
    if bound <= 0:
        raise MetricError(f"bound must be positive, got {bound}")
    d = _pair_distances(pred, gt) / cell_size
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if not m.any():
            raise MetricError("no keypoints to score")
        d = d[m]
    return float(np.minimum(d, bound).mean())


def rmse_structure(spec: SkeletonSpec, alpha_pred, alpha_gt) -> float:
    """RMSE between two composed shapes after similarity canonicalization.

    Each shape is independently centered and scaled to bounding-box
    diagonal 1 before comparing, so only intrinsic structure counts.
    """
    try:
        a = canonicalize_shape(compose_shape(spec, alpha_pred))
        b = canonicalize_shape(compose_shape(spec, alpha_gt))
    except ValueError as exc:
        raise MetricError(str(exc)) from exc
    return float(np.sqrt(np.mean((a - b) ** 2)))


def rmse_recall_curve(rmse_values, thresholds=DEFAULT_RMSE_THRESHOLDS) -> CurveSeries:
    """Fraction of instances whose RMSE falls at or below each threshold."""
    values = np.asarray(rmse_values, dtype=np.float64)
    if values.size == 0:
        raise MetricError("need at least one RMSE value")
    thresholds = np.asarray(thresholds, dtype=np.float64)
    recall = np.array([(values <= t).mean() for t in thresholds])
    return CurveSeries(thresholds, recall, label="rmse_recall")


def average_recall(curve: CurveSeries) -> float:
    """Mean recall over the curve's threshold grid."""
    return float(curve.values.mean())


def yaw_pitch_roll(rotation) -> tuple:
    """Decompose R = Ry(yaw) Rx(pitch) Rz(roll); angles in radians.

    Returns (yaw, pitch, roll, gimbal) where gimbal flags |pitch| within
    numerical reach of 90 degrees; in that case yaw carries the combined
    yaw/roll angle and roll is zero.
    """
    r = np.asarray(rotation, dtype=np.float64)
    sp = float(np.clip(-r[1, 2], -1.0, 1.0))
    pitch = float(np.arcsin(sp))
    cos_pitch = float(np.sqrt(max(0.0, 1.0 - sp * sp)))
    if cos_pitch < _GIMBAL_EPS:
        # R[0,0] = cos(yaw -/+ roll), R[0,1] = sin(yaw -/+ roll) up to sign
        combined = float(np.arctan2(r[0, 1] * np.sign(sp), r[0, 0]))
        return combined, pitch, 0.0, True
    yaw = float(np.arctan2(r[0, 2], r[2, 2]))
    roll = float(np.arctan2(r[1, 0], r[1, 1]))
    return yaw, pitch, roll, False


def azimuth_deg(pose: CameraPose) -> float:
    """Rotation angle about the canonical up axis, in degrees."""
    yaw, _, _, _ = yaw_pitch_roll(rodrigues(pose.omega))
    return float(np.degrees(yaw))


def azimuth_error(pose_a: CameraPose, pose_b: CameraPose) -> float:
    """Circular azimuth difference mapped to [0, 180] degrees."""
    diff = azimuth_deg(pose_a) - azimuth_deg(pose_b)
    wrapped = (diff + 180.0) % 360.0 - 180.0
    return float(abs(wrapped))


def azimuth_recall(errors_deg, delta: float) -> float:
    """Fraction of azimuth errors at or below delta degrees."""
    errors = np.asarray(errors_deg, dtype=np.float64)
    if errors.size == 0:
        raise MetricError("need at least one azimuth error")
    return float((errors <= delta).mean())


def azimuth_recall_curve(errors_deg, deltas=DEFAULT_AZIMUTH_DELTAS) -> CurveSeries:
    deltas = np.asarray(deltas, dtype=np.float64)
    values = np.array([azimuth_recall(errors_deg, d) for d in deltas])
    return CurveSeries(deltas, values, label="azimuth_recall")


def geodesic_rotation_angle(r_a, r_b) -> float:
    """Angle of the relative rotation between two rotation matrices."""
    rel = np.asarray(r_a).T @ np.asarray(r_b)
    c = np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.arccos(c))


def retrieve_nearest(query, database, mode: str, k: int = 1) -> np.ndarray:
    """Rank database entries by distance to the query.

    mode 'by-structure': query/database rows are weight vectors, Euclidean
    distance. mode 'by-viewpoint': entries are rotation matrices, geodesic
    distance. Ties resolve to the lower database index. Returns the first
    min(k, len(database)) indices, ascending by distance.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if mode == "by-structure":
        db = np.asarray(database, dtype=np.float64)
        if db.ndim != 2 or db.shape[0] == 0:
            raise MetricError("database must be a non-empty (M, K) array")
        q = np.asarray(query, dtype=np.float64).ravel()
        if q.shape[0] != db.shape[1]:
            raise MetricError(
                f"query length {q.shape[0]} does not match database width {db.shape[1]}"
            )
        dists = np.linalg.norm(db - q[None, :], axis=1)
    elif mode == "by-viewpoint":
        database = list(database)
        if not database:
            raise MetricError("database must be non-empty")
        dists = np.array([geodesic_rotation_angle(query, r) for r in database])
    else:
        raise ValueError(f"mode must be 'by-structure' or 'by-viewpoint', got {mode!r}")
    order = np.argsort(dists, kind="stable")
    return order[: min(k, order.size)]


def write_curves_csv(path, curves) -> None:
    """Serialize curves as CSV with columns threshold,value,label."""
    lines = ["threshold,value,label"]
    for c in curves:
        for t, v in zip(c.thresholds, c.values):
            lines.append(f"{t:.10g},{v:.10g},{c.label}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
