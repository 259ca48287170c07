"""Input validation helpers shared across the package."""

import numpy as np

__all__ = [
    "as_float_array",
    "check_finite",
    "check_keypoints2d",
    "check_shape3d",
    "check_alpha",
]


def as_float_array(a, shape=None, name="array", dtype=np.float64):
    """Coerce to a float ndarray, optionally enforcing an exact shape."""
    out = np.asarray(a, dtype=dtype)
    if shape is not None and out.shape != tuple(shape):
        raise ValueError(f"{name}: expected shape {tuple(shape)}, got {out.shape}")
    return out


def check_finite(a, name="array"):
    a = np.asarray(a)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: contains non-finite values")
    return a


def check_keypoints2d(x, n_keypoints=None, name="keypoints"):
    """Validate a 2 x N image-coordinate array."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != 2:
        raise ValueError(f"{name}: expected shape (2, N), got {x.shape}")
    if n_keypoints is not None and x.shape[1] != n_keypoints:
        raise ValueError(f"{name}: expected {n_keypoints} keypoints, got {x.shape[1]}")
    check_finite(x, name)
    return x


def check_shape3d(y, n_keypoints=None, name="shape"):
    """Validate a 3 x N object-frame coordinate array."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] != 3:
        raise ValueError(f"{name}: expected shape (3, N), got {y.shape}")
    if n_keypoints is not None and y.shape[1] != n_keypoints:
        raise ValueError(f"{name}: expected {n_keypoints} keypoints, got {y.shape[1]}")
    check_finite(y, name)
    return y


def check_alpha(spec, alpha, name="alpha"):
    """Validate a structural weight vector against a skeleton definition."""
    alpha = np.asarray(alpha, dtype=np.float64).ravel()
    if alpha.shape != (spec.n_basis,):
        raise ValueError(
            f"{name}: expected {spec.n_basis} weights for spec '{spec.name}', "
            f"got {alpha.shape[0]}"
        )
    check_finite(alpha, name)
    return alpha
