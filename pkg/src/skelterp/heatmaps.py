"""Keypoint heatmaps: Gaussian rendering, salt-and-pepper noise, decoding.

Heatmaps are the intermediate representation between image-space
keypoints and the parameter regressor. Each keypoint gets one H x W
confidence grid over a window centered on the principal point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import check_keypoints2d

DEFAULT_GRID_WIDTH = 40
DEFAULT_GRID_HEIGHT = 30
DEFAULT_CELL_SIZE = 0.15
DEFAULT_SIGMA = 1.5


@dataclass(frozen=True)
class GridGeometry:
    """Maps heatmap cells to continuous image coordinates.

    The grid covers a window of width*cell_size by height*cell_size image
    units centered on the principal point. Cell (row, col) has its center
    at ((col + 0.5) * cell - w/2, (row + 0.5) * cell - h/2).
    """

    width: int = DEFAULT_GRID_WIDTH
    height: int = DEFAULT_GRID_HEIGHT
    cell_size: float = DEFAULT_CELL_SIZE

    def __post_init__(self):
        if self.width < 4 or self.height < 4:
            raise ValueError(
                f"grid must be at least 4x4, got {self.width}x{self.height}"
            )
        if self.cell_size <= 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")

    @property
    def window(self):
        """(x_min, x_max, y_min, y_max) of the image-plane window."""
        hx = self.width * self.cell_size / 2.0
        hy = self.height * self.cell_size / 2.0
        return (-hx, hx, -hy, hy)

    def cell_centers(self):
        """Coordinates of cell centers: (xs of shape (W,), ys of shape (H,))."""
        xs = (np.arange(self.width) + 0.5) * self.cell_size - self.width * self.cell_size / 2.0
        ys = (np.arange(self.height) + 0.5) * self.cell_size - self.height * self.cell_size / 2.0
        return xs, ys

    def in_window(self, x) -> np.ndarray:
        """Boolean mask of keypoints inside the (closed) window."""
        x = check_keypoints2d(x)
        x_min, x_max, y_min, y_max = self.window
        return (
            (x[0] >= x_min) & (x[0] <= x_max) & (x[1] >= y_min) & (x[1] <= y_max)
        )


@dataclass(frozen=True)
class HeatmapStack:
    """Per-keypoint confidence grids plus their geometry and visibility."""

    channels: np.ndarray  # (N, H, W), values in [0, 1]
    geometry: GridGeometry
    visible: np.ndarray  # (N,) bool

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float64)
        vis = np.asarray(self.visible, dtype=bool)
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "visible", vis)
        if ch.ndim != 3:
            raise ValueError(f"channels: expected (N, H, W), got {ch.shape}")
        n, h, w = ch.shape
        if (h, w) != (self.geometry.height, self.geometry.width):
            raise ValueError(
                f"channels {h}x{w} do not match geometry "
                f"{self.geometry.height}x{self.geometry.width}"
            )
        if vis.shape != (n,):
            raise ValueError(f"visible: expected ({n},), got {vis.shape}")
        if np.any(ch < 0.0) or np.any(ch > 1.0):
            raise ValueError("channels: values must lie in [0, 1]")

    @property
    def n_channels(self) -> int:
        return self.channels.shape[0]

    def flatten(self) -> np.ndarray:
        """Row-major flattening used as regressor input."""
        return self.channels.ravel()


@dataclass(frozen=True)
class NoiseConfig:
    """Salt-and-pepper corruption level (fraction of cells) and seed."""

    level: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.level <= 1.0:
            raise ValueError(f"noise level must be in [0, 1], got {self.level}")


def render_heatmaps(x, geometry: GridGeometry, sigma: float = DEFAULT_SIGMA) -> HeatmapStack:
    """Render keypoints to Gaussian heatmaps.

    Channel i holds exp(-d^2 / (2 sigma^2)) of the distance d (in grid
    cells) from each cell center to keypoint i. Keypoints outside the
    window give an all-zero channel flagged invisible.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    x = check_keypoints2d(x)
    n = x.shape[1]
    xs, ys = geometry.cell_centers()
    visible = geometry.in_window(x)
    # squared distances in cell units, separable in x and y
    dx = (xs[None, :] - x[0][:, None]) / geometry.cell_size  # (N, W)
    dy = (ys[None, :] - x[1][:, None]) / geometry.cell_size  # (N, H)
    g = np.exp(-(dy[:, :, None] ** 2 + dx[:, None, :] ** 2) / (2.0 * sigma**2))
    g[~visible] = 0.0
    return HeatmapStack(g, geometry, visible)


def corrupt_salt_pepper(hm: HeatmapStack, cfg: NoiseConfig) -> HeatmapStack:
    """Overwrite a fraction of cells per channel with extreme values.

    Per channel, round(level * H * W) distinct cells are chosen uniformly;
    half of them (rounded) become 1.0, the rest 0.0. Deterministic given
    the config seed.
    """
    rng = np.random.default_rng(cfg.seed)
    return corrupt_salt_pepper_rng(hm, cfg.level, rng)


def corrupt_salt_pepper_rng(hm: HeatmapStack, level: float, rng) -> HeatmapStack:
    """Same corruption as corrupt_salt_pepper but drawing from a caller stream."""
    if not 0.0 <= level <= 1.0:
        raise ValueError(f"noise level must be in [0, 1], got {level}")
    n, h, w = hm.channels.shape
    n_cells = h * w
    m = int(round(level * n_cells))
    if m == 0:
        return HeatmapStack(hm.channels.copy(), hm.geometry, hm.visible.copy())
    n_salt = int(round(m / 2.0))
    out = hm.channels.copy().reshape(n, n_cells)
    for i in range(n):
        idx = rng.choice(n_cells, size=m, replace=False)
        out[i, idx[:n_salt]] = 1.0
        out[i, idx[n_salt:]] = 0.0
    return HeatmapStack(out.reshape(n, h, w), hm.geometry, hm.visible.copy())


def decode_argmax(hm: HeatmapStack):
    """Decode each channel to the center of its maximum cell.

    Ties resolve to the lowest (row, col) in lexicographic order. All-zero
    channels decode to (0, 0) and are flagged invisible.

    Returns (coords (2, N), visible (N,) bool).
    """
    n = hm.n_channels
    xs, ys = hm.geometry.cell_centers()
    coords = np.zeros((2, n))
    visible = np.ones(n, dtype=bool)
    flat = hm.channels.reshape(n, -1)
    peaks = flat.max(axis=1)
    idx = flat.argmax(axis=1)  # first occurrence = lowest (row, col)
    rows, cols = np.unravel_index(idx, (hm.geometry.height, hm.geometry.width))
    coords[0] = xs[cols]
    coords[1] = ys[rows]
    dead = peaks <= 0.0
    coords[:, dead] = 0.0
    visible[dead] = False
    return coords, visible


def decode_soft(hm: HeatmapStack, temperature: float = 1.0) -> np.ndarray:
    """Differentiable decoding: softmax-weighted mean of cell centers.

    Weights are proportional to value^(1/temperature), i.e. a softmax over
    log-confidences; zero cells carry zero weight. As temperature -> 0
    this converges to decode_argmax. All-zero channels decode to the
    window center (0, 0).
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    n = hm.n_channels
    xs, ys = hm.geometry.cell_centers()
    coords = np.zeros((2, n))
    for i in range(n):
        ch = hm.channels[i]
        peak = ch.max()
        if peak <= 0.0:
            continue
        w = (ch / peak) ** (1.0 / temperature)
        total = w.sum()
        coords[0, i] = (w.sum(axis=0) @ xs) / total
        coords[1, i] = (w.sum(axis=1) @ ys) / total
    return coords
