"""Heatmap refiner: a bottleneck autoencoder that denoises keypoint stacks.

The refiner learns the joint structure of all keypoint channels, so
corrupted cells inconsistent with that structure get suppressed. Inputs
and outputs are flattened stacks; outputs are clamped to [0, 1].

Full-size hidden widths exceed desk-scale memory, so when the flattened
input is wide a fixed seeded random projection compresses it first; the
bottleneck principle is unchanged.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .datasets import Dataset, feature_matrix
from .heatmaps import GridGeometry, HeatmapStack
from .mlp import Adam, MlpModel, TrainingError, init_mlp
from .interpreter import _corrupt_feature_rows, _train_val_split

DEFAULT_BOTTLENECK_WIDTHS = (256, 64, 256)
PAPER_BOTTLENECK_WIDTHS = (8192, 4096, 8192)
RANDOM_PROJECTION_THRESHOLD = 4096
RANDOM_PROJECTION_DIM = 1024


class HeatmapRefiner(BaseEstimator, TransformerMixin):
    """Denoising autoencoder over flattened heatmap stacks.

    Parameters
    ----------
    hidden_widths : tuple of int
        Encoder/decoder widths; the middle entry must be strictly smaller
        than its neighbors (information bottleneck).
    noise_levels : corruption levels drawn per sample per epoch to build
        noisy/clean training pairs; must contain at least one level > 0.
    projection_dim : when the flattened input exceeds
        RANDOM_PROJECTION_THRESHOLD, a fixed seeded random projection to
        this many dimensions feeds the bottleneck; the decoder still
        reconstructs the full stack.
    epochs, batch_size, lr, grad_clip, val_fraction, seed : as in
        SkeletonInterpreter.
    """

    def __init__(
        self,
        hidden_widths=DEFAULT_BOTTLENECK_WIDTHS,
        noise_levels=(0.05, 0.1, 0.2),
        projection_dim: int = RANDOM_PROJECTION_DIM,
        epochs: int = 20,
        batch_size: int = 128,
        lr: float = 1e-3,
        grad_clip: float = 5.0,
        val_fraction: float = 0.1,
        seed: int = 0,
    ):
        self.hidden_widths = hidden_widths
        self.noise_levels = noise_levels
        self.projection_dim = projection_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.grad_clip = grad_clip
        self.val_fraction = val_fraction
        self.seed = seed

    def _check_config(self):
        widths = [int(w) for w in self.hidden_widths]
        if len(widths) < 3 or len(widths) % 2 == 0:
            raise ValueError("hidden_widths must be an odd-length list of >= 3 widths")
        mid = len(widths) // 2
        if not (widths[mid] < widths[mid - 1] and widths[mid] < widths[mid + 1]):
            raise ValueError(
                f"middle width {widths[mid]} must be strictly smaller than its "
                "neighbors (information bottleneck)"
            )
        if not any(lv > 0 for lv in self.noise_levels):
            raise ValueError("noise_levels must contain a positive level")
        for lv in self.noise_levels:
            if not 0.0 <= lv <= 1.0:
                raise ValueError(f"noise level {lv} outside [0, 1]")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("invalid training schedule")
        return widths

    def fit(self, dataset: Dataset, y=None):
        """Train on (corrupted, clean) pairs rendered from the dataset."""
        widths = self._check_config()
        if not isinstance(dataset, Dataset):
            raise TypeError("fit expects a Dataset")
        if len(dataset) == 0:
            raise ValueError("empty dataset")
        spec, geom = dataset.spec, dataset.geometry
        n_cells = geom.width * geom.height
        d = spec.n_keypoints * n_cells
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(2,)))

        self.projection_ = None
        d_in = d
        if d > RANDOM_PROJECTION_THRESHOLD:
            # fixed seeded projection; scaled so projected variance is O(input)
            self.projection_ = rng.standard_normal((d, int(self.projection_dim))) / np.sqrt(
                float(self.projection_dim)
            )
            d_in = int(self.projection_dim)

        x_clean = feature_matrix(dataset)  # float32 clean renders
        train_idx, val_idx = _train_val_split(len(dataset), self.val_fraction, rng)

        model = init_mlp(
            [d_in, *widths, d],
            rng,
            meta={
                "kind": "refiner",
                "spec_name": spec.name,
                "n_keypoints": spec.n_keypoints,
                "geometry": {
                    "width": geom.width, "height": geom.height,
                    "cell_size": geom.cell_size,
                },
                "seed": self.seed,
                "noise_levels": list(self.noise_levels),
                "projected": self.projection_ is not None,
                "projection_dim": int(self.projection_dim),
            },
        )
        opt = Adam(model, lr=self.lr, grad_clip=self.grad_clip)
        levels = tuple(self.noise_levels)

        def encode(x):
            return x if self.projection_ is None else x @ self.projection_

        # fixed corrupted copy for a stable validation loss
        x_val_clean = x_clean[val_idx].astype(np.float64)
        x_val_noisy = x_val_clean.copy()
        val_rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(3,)))
        _corrupt_feature_rows(x_val_noisy, spec.n_keypoints, n_cells, levels, val_rng)
        x_val_in = encode(x_val_noisy)

        def val_loss():
            return float(np.mean((model.apply(x_val_in) - x_val_clean) ** 2))

        trace = []
        best = model.copy()
        best_val = val_loss()
        step = 0
        for epoch in range(self.epochs):
            order = rng.permutation(train_idx)
            epoch_loss, n_batches = 0.0, 0
            for start in range(0, order.shape[0], self.batch_size):
                batch = order[start : start + self.batch_size]
                clean = x_clean[batch].astype(np.float64)
                noisy = clean.copy()
                _corrupt_feature_rows(noisy, spec.n_keypoints, n_cells, levels, rng)
                out, cache = model.forward(encode(noisy))
                diff = out - clean
                loss = float(np.mean(diff**2))
                if not np.isfinite(loss):
                    raise TrainingError("refiner loss diverged", step)
                gw, gb, _ = model.backward(cache, 2.0 * diff / diff.size)
                opt.step(gw, gb)
                step += 1
                epoch_loss += loss
                n_batches += 1
            model.check_finite(step)
            v = val_loss()
            trace.append(
                {"epoch": epoch, "train_loss": epoch_loss / max(n_batches, 1), "val_loss": v}
            )
            if v < best_val:
                best_val = v
                best = model.copy()
        best.meta["val_loss"] = best_val
        self.model_ = best
        self.spec_name_ = spec.name
        self.geometry_ = geom
        self.n_keypoints_ = spec.n_keypoints
        self.loss_trace_ = trace
        return self

    def transform(self, features) -> np.ndarray:
        """Denoise flattened stacks (rows); output clamped to [0, 1]."""
        if not hasattr(self, "model_"):
            raise RuntimeError("transform requires a fitted refiner")
        features = np.asarray(features, dtype=np.float64)
        single = features.ndim == 1
        if single:
            features = features[None, :]
        x = features if self.projection_ is None else features @ self.projection_
        out = np.clip(self.model_.apply(x), 0.0, 1.0)
        return out[0] if single else out

    def refine(self, hm: HeatmapStack) -> HeatmapStack:
        """Denoise one heatmap stack, preserving geometry and visibility."""
        if not hasattr(self, "model_"):
            raise RuntimeError("refine requires a fitted refiner")
        if hm.geometry != self.geometry_:
            raise ValueError(
                f"heatmap geometry {hm.geometry} != training geometry {self.geometry_}"
            )
        if hm.n_channels != self.n_keypoints_:
            raise ValueError(
                f"stack has {hm.n_channels} channels, refiner expects {self.n_keypoints_}"
            )
        flat = self.transform(hm.flatten())
        channels = flat.reshape(hm.channels.shape)
        return HeatmapStack(channels, hm.geometry, hm.visible.copy())


def refiner_from_model(model: MlpModel) -> HeatmapRefiner:
    """Rebuild a fitted refiner (including its fixed projection) from disk.

    The random projection is regenerated from the seed recorded in the
    model metadata, reproducing the training-time matrix exactly.
    """
    meta = model.meta
    if meta.get("kind") != "refiner":
        raise ValueError(f"model kind {meta.get('kind')!r} is not 'refiner'")
    geom = meta["geometry"]
    ref = HeatmapRefiner(
        hidden_widths=tuple(model.layer_widths[1:-1]),
        noise_levels=tuple(meta.get("noise_levels", (0.05, 0.1, 0.2))),
        projection_dim=int(meta.get("projection_dim", RANDOM_PROJECTION_DIM)),
        seed=int(meta.get("seed", 0)),
    )
    ref.model_ = model
    ref.spec_name_ = meta.get("spec_name", "")
    ref.n_keypoints_ = int(meta["n_keypoints"])
    ref.geometry_ = GridGeometry(
        width=int(geom["width"]),
        height=int(geom["height"]),
        cell_size=float(geom["cell_size"]),
    )
    ref.projection_ = None
    if meta.get("projected"):
        d = ref.n_keypoints_ * ref.geometry_.width * ref.geometry_.height
        rng = np.random.default_rng(np.random.SeedSequence(ref.seed, spawn_key=(2,)))
        ref.projection_ = rng.standard_normal(
            (d, int(ref.projection_dim))
        ) / np.sqrt(float(ref.projection_dim))
    ref.loss_trace_ = []
    return ref
