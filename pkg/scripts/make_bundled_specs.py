"""Regenerate the bundled skeleton spec JSON files.

Run from the repo root:  python scripts/make_bundled_specs.py

The mean shapes are authored in working units, then centered on their
centroid and scaled so the mean shape's bounding-box diagonal is exactly 1
(the canonical object frame). Deformation bases get the same scale factor
and are stored mean-free so translation stays owned by the camera.
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from skelterp.skeleton import SkeletonSpec, diagonal_length, save_spec  # noqa: E402

OUT_DIR = Path(__file__).resolve().parents[1] / "src" / "skelterp" / "specs"


def canonicalize(mean, deformations):
    mean = np.asarray(mean, dtype=np.float64)
    centered = mean - mean.mean(axis=1, keepdims=True)
    scale = diagonal_length(centered)
    bases = [centered / scale]
    for d in deformations:
        d = np.asarray(d, dtype=np.float64)
        bases.append((d - d.mean(axis=1, keepdims=True)) / scale)
    return np.stack(bases)


def chair_spec():
    # x right, y up, z toward the viewer; units arbitrary before canonicalization
    names = [
        "leg_front_left", "leg_front_right", "leg_back_left", "leg_back_right",
        "seat_front_left", "seat_front_right", "seat_back_left", "seat_back_right",
        "back_top_left", "back_top_right",
    ]
    xs = np.array([-0.30, 0.30, -0.30, 0.30, -0.30, 0.30, -0.30, 0.30, -0.30, 0.30])
    ys = np.array([-0.45, -0.45, -0.45, -0.45, 0.0, 0.0, 0.0, 0.0, 0.55, 0.55])
    zs = np.array([0.25, 0.25, -0.25, -0.25, 0.25, 0.25, -0.25, -0.25, -0.25, -0.25])
    mean = np.stack([xs, ys, zs])

    back_tilt = np.zeros((3, 10))
    back_tilt[2, 8:] = -0.25       # back top corners lean away from the seat

    leg_length = np.zeros((3, 10))
    leg_length[1, :4] = -0.30      # leg bottoms extend downward

    seat_width = np.zeros((3, 10))
    seat_width[0] = 0.5 * xs       # widen everything proportionally in x

    connections = [
        (0, 4), (1, 5), (2, 6), (3, 7),          # legs to seat corners
        (4, 5), (5, 7), (7, 6), (6, 4),          # seat perimeter
        (6, 8), (7, 9), (8, 9),                  # back rest
    ]
    alpha_ranges = [[0.8, 1.2], [-0.5, 0.5], [-0.5, 0.5], [-0.5, 0.5]]
    return SkeletonSpec(
        name="chair",
        keypoint_names=names,
        connections=connections,
        base_shapes=canonicalize(mean, [back_tilt, leg_length, seat_width]),
        alpha_ranges=alpha_ranges,
    )


def tetrapod_spec():
    names = ["apex_a", "apex_b", "apex_c", "apex_d"]
    mean = 0.25 * np.array(
        [[1.0, 1.0, -1.0, -1.0], [1.0, -1.0, 1.0, -1.0], [1.0, -1.0, -1.0, 1.0]]
    )
    stretch = np.zeros((3, 4))
    stretch[1] = mean[1]           # stretch along the up axis
    connections = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    alpha_ranges = [[0.8, 1.2], [-0.5, 0.5]]
    return SkeletonSpec(
        name="tetrapod",
        keypoint_names=names,
        connections=connections,
        base_shapes=canonicalize(mean, [stretch]),
        alpha_ranges=alpha_ranges,
    )


def main():
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    for spec in (chair_spec(), tetrapod_spec()):
        out = OUT_DIR / f"{spec.name}.json"
        save_spec(spec, out)
        print(f"wrote {out} ({spec.n_keypoints} keypoints, K={spec.n_basis})")


if __name__ == "__main__":
    main()
