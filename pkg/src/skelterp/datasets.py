"""Synthetic corpus generation and persistence.

Each record samples structural weights and a camera, composes the 3D
keypoints, perturbs them with Gaussian noise scaled to the shape's
bounding-box diagonal, projects them, and renders heatmaps. Records are
drawn from per-index RNG substreams so generation is reproducible and
schedule-independent.

Files use the "skelds-v1" container: two UTF-8 text lines (format id,
JSON header with provenance and a body checksum) followed by fixed-width
little-endian records. Heatmaps are optionally stored; when absent they
are re-rendered on demand from the stored 2D coordinates.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__ as _pkg_version
from .camera import DEPTH_EPSILON, CameraPose, DepthDomainError, project
from .heatmaps import (
    DEFAULT_SIGMA,
    GridGeometry,
    HeatmapStack,
    corrupt_salt_pepper_rng,
    render_heatmaps,
)
from .skeleton import (
    SkeletonSpec,
    _spec_from_document,
    _spec_to_document,
    compose_shape,
    diagonal_length,
)

DATASET_FORMAT_VERSION = "skelds-v1"
PERTURBATION_FRACTION = 0.01  # noise std as a fraction of the bbox diagonal
MIN_VISIBLE_KEYPOINTS = 4
MAX_SAMPLE_ATTEMPTS = 100


class SamplingConfigError(RuntimeError):
    """Sampling ranges keep producing invalid instances."""


class DatasetIntegrityError(RuntimeError):
    """A dataset file is truncated or fails its checksum."""


@dataclass(frozen=True)
class SamplingRanges:
    """Uniform sampling intervals for (alpha, omega, t, f)."""

    alpha_ranges: np.ndarray  # (K, 2)
    omega_range: np.ndarray = field(
        default_factory=lambda: np.array([[-np.pi / 2, np.pi / 2]] * 3)
    )
    t_range: np.ndarray = field(
        default_factory=lambda: np.array([[-0.5, 0.5], [-0.5, 0.5], [2.0, 6.0]])
    )
    f_range: np.ndarray = field(default_factory=lambda: np.array([1.0, 3.0]))

    def __post_init__(self):
        for name in ("alpha_ranges", "omega_range", "t_range", "f_range"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.alpha_ranges.ndim != 2 or self.alpha_ranges.shape[1] != 2:
            raise ValueError(f"alpha_ranges: expected (K, 2), got {self.alpha_ranges.shape}")
        if self.omega_range.shape != (3, 2):
            raise ValueError(f"omega_range: expected (3, 2), got {self.omega_range.shape}")
        if self.t_range.shape != (3, 2):
            raise ValueError(f"t_range: expected (3, 2), got {self.t_range.shape}")
        if self.f_range.shape != (2,):
            raise ValueError(f"f_range: expected (2,), got {self.f_range.shape}")
        for name in ("alpha_ranges", "omega_range", "t_range"):
            r = getattr(self, name)
            if np.any(r[:, 0] > r[:, 1]):
                raise ValueError(f"{name}: empty interval")
        if self.f_range[0] > self.f_range[1] or self.f_range[0] <= 0:
            raise ValueError("f_range: must be a non-empty positive interval")
        if self.t_range[2, 0] <= 10 * DEPTH_EPSILON:
            raise ValueError(
                f"t_range: depth lower bound {self.t_range[2, 0]} too close to the camera"
            )

    @classmethod
    def for_spec(cls, spec: SkeletonSpec, **overrides) -> "SamplingRanges":
        return cls(alpha_ranges=spec.alpha_ranges, **overrides)

    def to_dict(self) -> dict:
        return {
            "alpha_ranges": self.alpha_ranges.tolist(),
            "omega_range": self.omega_range.tolist(),
            "t_range": self.t_range.tolist(),
            "f_range": self.f_range.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingRanges":
        return cls(
            alpha_ranges=d["alpha_ranges"],
            omega_range=d["omega_range"],
            t_range=d["t_range"],
            f_range=d["f_range"],
        )


@dataclass(frozen=True)
class SampleRecord:
    """One synthetic instance: parameters, 3D keypoints, projections."""

    alpha: np.ndarray
    pose: CameraPose
    y_clean: np.ndarray
    y_perturbed: np.ndarray
    x: np.ndarray
    visible: np.ndarray
    heatmaps: HeatmapStack | None = None


@dataclass
class Dataset:
    """A list of sample records plus the generating configuration."""

    spec: SkeletonSpec
    records: list
    geometry: GridGeometry
    sigma: float
    provenance: dict

    def __len__(self) -> int:
        return len(self.records)

    def heatmaps_for(self, index: int, noise_level: float = 0.0, rng=None) -> HeatmapStack:
        """Heatmaps of one record, rendered on demand when not stored."""
        rec = self.records[index]
        hm = rec.heatmaps
        if hm is None:
            hm = render_heatmaps(rec.x, self.geometry, self.sigma)
        if noise_level > 0.0:
            if rng is None:
                raise ValueError("noise_level > 0 requires an rng")
            hm = corrupt_salt_pepper_rng(hm, noise_level, rng)
        return hm


@dataclass(frozen=True)
class Dataset2D:
    """2D-only view for projection-supervised fine-tuning.

    Exposes heatmaps and labeled 2D keypoints; the 3D fields of the source
    records are withheld.
    """

    spec: SkeletonSpec
    geometry: GridGeometry
    sigma: float
    xs: np.ndarray  # (n, 2, N)
    visible: np.ndarray  # (n, N) bool

    def __len__(self) -> int:
        return self.xs.shape[0]

    def heatmaps_for(self, index: int, noise_level: float = 0.0, rng=None) -> HeatmapStack:
        hm = render_heatmaps(self.xs[index], self.geometry, self.sigma)
        if noise_level > 0.0:
            if rng is None:
                raise ValueError("noise_level > 0 requires an rng")
            hm = corrupt_salt_pepper_rng(hm, noise_level, rng)
        return hm


def to_2d_view(ds: Dataset) -> Dataset2D:
    xs = np.stack([r.x for r in ds.records])
    vis = np.stack([r.visible for r in ds.records])
    return Dataset2D(ds.spec, ds.geometry, ds.sigma, xs, vis)


def _uniform(rng, interval):
    return rng.uniform(interval[..., 0], interval[..., 1])


def sample_instance(
    spec: SkeletonSpec,
    ranges: SamplingRanges,
    rng,
    geometry: GridGeometry | None = None,
    sigma: float = DEFAULT_SIGMA,
    with_heatmaps: bool = True,
    perturbation: float = PERTURBATION_FRACTION,
):
    """Draw one valid sample record.

    Draws are retried (fresh parameters each time) when a keypoint ends up
    behind the camera or fewer than MIN_VISIBLE_KEYPOINTS land inside the
    heatmap window. Returns (record, attempts).
    """
    if ranges.alpha_ranges.shape[0] != spec.n_basis:
        raise ValueError(
            f"ranges define {ranges.alpha_ranges.shape[0]} weight intervals, "
            f"spec '{spec.name}' has {spec.n_basis}"
        )
    geometry = geometry or GridGeometry()
    for attempt in range(1, MAX_SAMPLE_ATTEMPTS + 1):
        alpha = _uniform(rng, ranges.alpha_ranges)
        omega = _uniform(rng, ranges.omega_range)
        t = _uniform(rng, ranges.t_range)
        f = float(_uniform(rng, ranges.f_range))
        pose = CameraPose(omega, t, f)
        y_clean = compose_shape(spec, alpha)
        std = perturbation * diagonal_length(y_clean)
        y_perturbed = y_clean + rng.normal(0.0, std, size=y_clean.shape)
        try:
            x = project(y_perturbed, pose)
        except DepthDomainError:
            continue
        visible = geometry.in_window(x)
        if visible.sum() < MIN_VISIBLE_KEYPOINTS:
            continue
        heatmaps = render_heatmaps(x, geometry, sigma) if with_heatmaps else None
        rec = SampleRecord(alpha, pose, y_clean, y_perturbed, x, visible, heatmaps)
        return rec, attempt
    raise SamplingConfigError(
        f"no valid sample after {MAX_SAMPLE_ATTEMPTS} attempts; "
        "sampling ranges are incompatible with the heatmap window"
    )


def record_rng(seed: int, index: int):
    """Per-record RNG substream; independent of generation order."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def generate_dataset(
    spec: SkeletonSpec,
    ranges: SamplingRanges,
    count: int,
    seed: int,
    geometry: GridGeometry | None = None,
    sigma: float = DEFAULT_SIGMA,
    with_heatmaps: bool = False,
    perturbation: float = PERTURBATION_FRACTION,
) -> Dataset:
    """Generate a reproducible corpus of sample records."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    geometry = geometry or GridGeometry()
    records = []
    total_attempts = 0
    for i in range(count):
        rec, attempts = sample_instance(
            spec, ranges, record_rng(seed, i), geometry, sigma,
            with_heatmaps=with_heatmaps, perturbation=perturbation,
        )
        records.append(rec)
        total_attempts += attempts
    provenance = {
        "seed": int(seed),
        "count": int(count),
        "ranges": ranges.to_dict(),
        "generator_version": f"{DATASET_FORMAT_VERSION}/skelterp-{_pkg_version}",
        "perturbation_rule": (
            f"per-coordinate gaussian, std = {perturbation:g} * bbox diagonal "
            "of the clean shape (std, not variance)"
        ),
        "sigma": float(sigma),
        "resample_rate": (total_attempts - count) / count,
    }
    return Dataset(spec, records, geometry, sigma, provenance)


def _record_dtype(spec: SkeletonSpec, with_heatmaps: bool, geometry: GridGeometry):
    n, k = spec.n_keypoints, spec.n_basis
    fields = [
        ("alpha", "<f8", (k,)),
        ("omega", "<f8", (3,)),
        ("t", "<f8", (3,)),
        ("f", "<f8"),
        ("y_clean", "<f8", (3, n)),
        ("y_perturbed", "<f8", (3, n)),
        ("x", "<f8", (2, n)),
        ("visible", "u1", (n,)),
    ]
    if with_heatmaps:
        fields.append(("heatmaps", "<f4", (n, geometry.height, geometry.width)))
    return np.dtype(fields)


def save_dataset(ds: Dataset, path, store_heatmaps: bool = False) -> None:
    """Write a dataset container; lossless for everything stored."""
    dtype = _record_dtype(ds.spec, store_heatmaps, ds.geometry)
    body = np.empty(len(ds.records), dtype=dtype)
    for i, rec in enumerate(ds.records):
        row = body[i]
        row["alpha"] = rec.alpha
        row["omega"] = rec.pose.omega
        row["t"] = rec.pose.t
        row["f"] = rec.pose.f
        row["y_clean"] = rec.y_clean
        row["y_perturbed"] = rec.y_perturbed
        row["x"] = rec.x
        row["visible"] = rec.visible.astype(np.uint8)
        if store_heatmaps:
            row["heatmaps"] = ds.heatmaps_for(i).channels.astype(np.float32)
    raw = body.tobytes()
    header = {
        "record_count": len(ds.records),
        "spec": _spec_to_document(ds.spec),
        "geometry": {
            "width": ds.geometry.width,
            "height": ds.geometry.height,
            "cell_size": ds.geometry.cell_size,
        },
        "sigma": ds.sigma,
        "store_heatmaps": bool(store_heatmaps),
        "provenance": ds.provenance,
        "body_sha256": hashlib.sha256(raw).hexdigest(),
        "body_bytes": len(raw),
    }
    with open(path, "wb") as fh:
        fh.write(DATASET_FORMAT_VERSION.encode("utf-8") + b"\n")
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(raw)


def load_dataset(path) -> Dataset:
    """Read a dataset container, verifying its checksum."""
    with open(path, "rb") as fh:
        magic = fh.readline().rstrip(b"\n").decode("utf-8", "replace")
        if magic != DATASET_FORMAT_VERSION:
            raise DatasetIntegrityError(
                f"{path}: not a {DATASET_FORMAT_VERSION} file (got {magic!r})"
            )
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise DatasetIntegrityError(f"{path}: unreadable header ({exc})") from exc
        raw = fh.read()
    if len(raw) != header["body_bytes"]:
        raise DatasetIntegrityError(
            f"{path}: truncated body ({len(raw)} bytes, expected {header['body_bytes']})"
        )
    digest = hashlib.sha256(raw).hexdigest()
    if digest != header["body_sha256"]:
        raise DatasetIntegrityError(
            f"{path}: checksum mismatch (expected {header['body_sha256']}, got {digest})"
        )
    spec = _spec_from_document(header["spec"], f"{path}:spec")
    geometry = GridGeometry(**header["geometry"])
    dtype = _record_dtype(spec, header["store_heatmaps"], geometry)
    body = np.frombuffer(raw, dtype=dtype)
    records = []
    for row in body:
        hm = None
        if header["store_heatmaps"]:
            vis = row["visible"].astype(bool)
            hm = HeatmapStack(
                np.asarray(row["heatmaps"], dtype=np.float64), geometry, vis
            )
        records.append(
            SampleRecord(
                alpha=np.array(row["alpha"]),
                pose=CameraPose(np.array(row["omega"]), np.array(row["t"]), float(row["f"])),
                y_clean=np.array(row["y_clean"]),
                y_perturbed=np.array(row["y_perturbed"]),
                x=np.array(row["x"]),
                visible=row["visible"].astype(bool),
                heatmaps=hm,
            )
        )
    return Dataset(spec, records, geometry, header["sigma"], header["provenance"])


def parameter_vector(alpha, pose: CameraPose) -> np.ndarray:
    """Regression target layout: (alpha, omega, t, log f)."""
    return np.concatenate([alpha, pose.omega, pose.t, [np.log(pose.f)]])


def split_parameter_vector(spec: SkeletonSpec, vec) -> tuple:
    """Inverse of parameter_vector; exponentiates the focal component."""
    vec = np.asarray(vec, dtype=np.float64).ravel()
    k = spec.n_basis
    if vec.shape[0] != k + 7:
        raise ValueError(f"expected length {k + 7} parameter vector, got {vec.shape[0]}")
    alpha = vec[:k]
    pose = CameraPose(vec[k : k + 3], vec[k + 3 : k + 6], float(np.exp(vec[k + 6])))
    return alpha, pose


def target_matrix(ds: Dataset) -> np.ndarray:
    """(n, K + 7) matrix of regression targets for every record."""
    return np.stack([parameter_vector(r.alpha, r.pose) for r in ds.records])


def feature_matrix(
    ds, indices=None, noise_level: float = 0.0, rng=None, dtype=np.float32
) -> np.ndarray:
    """Flattened (optionally corrupted) heatmaps as an (n, N*H*W) matrix."""
    indices = range(len(ds)) if indices is None else indices
    rows = [
        ds.heatmaps_for(i, noise_level=noise_level, rng=rng).flatten() for i in indices
    ]
    return np.asarray(np.stack(rows), dtype=dtype)
