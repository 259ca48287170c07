"""Basis-shape skeleton model.

A skeleton is a set of named 3D keypoints plus connections. A concrete
object instance is a weighted sum of base shapes: the first base shape is
the category mean, the rest are deformation directions. Composing the
weights gives the 3 x N keypoint matrix in the canonical object frame
(mean shape centered on its centroid, bounding-box diagonal 1).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .validation import check_alpha, check_shape3d

SPEC_FORMAT_VERSION = "skelspec-v1"

BUNDLED_SPECS = ("chair", "tetrapod")


class SpecFormatError(ValueError):
    """Raised when a skeleton spec document is malformed."""


@dataclass(frozen=True)
class SkeletonSpec:
    """Per-category skeleton definition.

    base_shapes has shape (K, 3, N); base_shapes[0] is the mean shape,
    later entries are mean-free deformation directions. alpha_ranges is a
    (K, 2) array of sampling intervals for the weights.
    """

    name: str
    keypoint_names: tuple
    connections: tuple
    base_shapes: np.ndarray
    alpha_ranges: np.ndarray

    def __post_init__(self):
        bases = np.asarray(self.base_shapes, dtype=np.float64)
        ranges = np.asarray(self.alpha_ranges, dtype=np.float64)
        object.__setattr__(self, "base_shapes", bases)
        object.__setattr__(self, "alpha_ranges", ranges)
        object.__setattr__(self, "keypoint_names", tuple(self.keypoint_names))
        object.__setattr__(
            self, "connections", tuple((int(a), int(b)) for a, b in self.connections)
        )
        if bases.ndim != 3 or bases.shape[1] != 3:
            raise SpecFormatError(
                f"base_shapes: expected shape (K, 3, N), got {bases.shape}"
            )
        k, _, n = bases.shape
        if k < 1:
            raise SpecFormatError("base_shapes: need at least one base shape")
        if n < 4:
            raise SpecFormatError(f"base_shapes: need at least 4 keypoints, got {n}")
        if not np.all(np.isfinite(bases)):
            raise SpecFormatError("base_shapes: contains non-finite values")
        if len(self.keypoint_names) != n:
            raise SpecFormatError(
                f"keypoint_names: expected {n} names, got {len(self.keypoint_names)}"
            )
        for a, b in self.connections:
            if not (0 <= a < n and 0 <= b < n):
                raise SpecFormatError(
                    f"connections: index pair ({a}, {b}) out of range [0, {n})"
                )
        if ranges.shape != (k, 2):
            raise SpecFormatError(
                f"alpha_ranges: expected shape ({k}, 2), got {ranges.shape}"
            )
        if np.any(ranges[:, 0] > ranges[:, 1]):
            raise SpecFormatError("alpha_ranges: lower bound exceeds upper bound")
        if not (ranges[0, 0] <= 1.0 <= ranges[0, 1]):
            raise SpecFormatError(
                "alpha_ranges: first interval must contain 1.0 (mean shape)"
            )

    @property
    def n_keypoints(self) -> int:
        return self.base_shapes.shape[2]

    @property
    def n_basis(self) -> int:
        return self.base_shapes.shape[0]

    @property
    def mean_shape(self) -> np.ndarray:
        return self.base_shapes[0]


def compose_shape(spec: SkeletonSpec, alpha) -> np.ndarray:
    """Weighted sum of base shapes: returns the 3 x N keypoint matrix."""
    alpha = check_alpha(spec, alpha)
    return np.tensordot(alpha, spec.base_shapes, axes=(0, 0))


def shape_basis_jacobian(spec: SkeletonSpec) -> np.ndarray:
    """Derivative of the composed shape w.r.t. each weight.

    The shape model is linear, so entry k is exactly base_shapes[k].
    Returned as a read-only (K, 3, N) view.
    """
    jac = spec.base_shapes.view()
    jac.flags.writeable = False
    return jac


def diagonal_length(shape) -> float:
    """Euclidean length of the axis-aligned bounding-box diagonal."""
    y = check_shape3d(shape)
    extent = y.max(axis=1) - y.min(axis=1)
    return float(np.linalg.norm(extent))


def canonicalize_shape(shape) -> np.ndarray:
    """Center a shape on its centroid and scale its bbox diagonal to 1.

    Raises ValueError for degenerate (all-coincident) keypoint sets.
    """
    y = check_shape3d(shape)
    centered = y - y.mean(axis=1, keepdims=True)
    diag = diagonal_length(centered)
    if diag <= 0.0:
        raise ValueError("cannot canonicalize a shape with zero bounding-box diagonal")
    return centered / diag


def _spec_to_document(spec: SkeletonSpec) -> dict:
    return {
        "version": SPEC_FORMAT_VERSION,
        "name": spec.name,
        "keypoint_names": list(spec.keypoint_names),
        "connections": [list(c) for c in spec.connections],
        "base_shapes": spec.base_shapes.tolist(),
        "alpha_ranges": spec.alpha_ranges.tolist(),
    }


_REQUIRED_FIELDS = ("name", "keypoint_names", "connections", "base_shapes", "alpha_ranges")


def _spec_from_document(doc: dict, origin: str) -> SkeletonSpec:
    if not isinstance(doc, dict):
        raise SpecFormatError(f"{origin}: expected a JSON object at top level")
    version = doc.get("version")
    if version != SPEC_FORMAT_VERSION:
        raise SpecFormatError(
            f"{origin}: field 'version' must be '{SPEC_FORMAT_VERSION}', got {version!r}"
        )
    for fld in _REQUIRED_FIELDS:
        if fld not in doc:
            raise SpecFormatError(f"{origin}: missing required field '{fld}'")
    try:
        return SkeletonSpec(
            name=doc["name"],
            keypoint_names=doc["keypoint_names"],
            connections=doc["connections"],
            base_shapes=doc["base_shapes"],
            alpha_ranges=doc["alpha_ranges"],
        )
    except SpecFormatError as exc:
        raise SpecFormatError(f"{origin}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise SpecFormatError(f"{origin}: malformed field value ({exc})") from exc


def save_spec(spec: SkeletonSpec, path) -> None:
    """Write a skeleton spec as a UTF-8 JSON document."""
    path = Path(path)
    path.write_text(
        json.dumps(_spec_to_document(spec), indent=2) + "\n", encoding="utf-8"
    )


def load_spec(path) -> SkeletonSpec:
    """Load a skeleton spec from a JSON document, enforcing all invariants."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SpecFormatError(f"{path}: not valid JSON ({exc})") from exc
    return _spec_from_document(doc, str(path))


def bundled_spec(name: str) -> SkeletonSpec:
    """Load one of the specs shipped with the package ('chair', 'tetrapod')."""
    if name not in BUNDLED_SPECS:
        raise ValueError(f"unknown bundled spec {name!r}; available: {BUNDLED_SPECS}")
    text = resources.files("skelterp.specs").joinpath(f"{name}.json").read_text("utf-8")
    return _spec_from_document(json.loads(text), f"bundled:{name}")
