"""Learned 3D interpreter: heatmaps in, structural and camera parameters out.

Stage II trains the regressor on synthetic records with full parameter
supervision (mean squared error on z-scored targets). Stage III fine-tunes
on 2D-only data by pushing reprojection-error gradients through the
projection layer into the network. Both stages checkpoint on held-out
loss and are deterministic given a seed.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .camera import DEPTH_EPSILON, CameraPose, canonical_omega, projection_system_raw
from .datasets import Dataset, Dataset2D, feature_matrix, target_matrix
from .heatmaps import GridGeometry, HeatmapStack
from .mlp import Adam, MlpModel, TrainingError, init_mlp, zscore_stats
from .skeleton import SkeletonSpec

DEFAULT_HIDDEN_WIDTHS = (512, 128, 64)
PAPER_HIDDEN_WIDTHS = (2048, 512, 128)
DEFAULT_NOISE_LEVELS = (0.0, 0.05, 0.1, 0.2)


def _corrupt_feature_rows(rows, n_channels: int, n_cells: int, levels, rng) -> None:
    """In-place salt-and-pepper on flattened heatmap rows.

    Applies the same per-channel law as corrupt_salt_pepper_rng; each row
    gets a level drawn uniformly from `levels`.
    """
    levels = np.asarray(levels, dtype=np.float64)
    for row in rows:
        level = levels[rng.integers(levels.shape[0])]
        m = int(round(level * n_cells))
        if m == 0:
            continue
        n_salt = int(round(m / 2.0))
        view = row.reshape(n_channels, n_cells)
        for c in range(n_channels):
            idx = rng.choice(n_cells, size=m, replace=False)
            view[c, idx[:n_salt]] = 1.0
            view[c, idx[n_salt:]] = 0.0


def _train_val_split(n: int, val_fraction: float, rng) -> tuple:
    """Deterministic permutation split; a 1-sample input validates on itself."""
    if n == 1:
        return np.array([0]), np.array([0])
    n_val = int(round(val_fraction * n))
    n_val = min(max(n_val, 1), n - 1)
    perm = rng.permutation(n)
    return perm[n_val:], perm[:n_val]


def split_prediction(spec: SkeletonSpec, vec) -> tuple:
    """Network output vector (alpha, omega, t, log f) -> (alpha, CameraPose)."""
    vec = np.asarray(vec, dtype=np.float64).ravel()
    k = spec.n_basis
    if vec.shape[0] != k + 7:
        raise ValueError(f"expected length {k + 7} output, got {vec.shape[0]}")
    omega = canonical_omega(vec[k : k + 3])
    return vec[:k], CameraPose(omega, vec[k + 3 : k + 6], float(np.exp(vec[k + 6])))


def stage3_loss_and_grads(
    model: MlpModel,
    spec: SkeletonSpec,
    features,
    x_labels,
    visible,
    z_safe: float = DEPTH_EPSILON,
) -> tuple:
    """Reprojection loss of a batch and its exact model-parameter gradients.

    Per sample, keypoints that are visible and project safely contribute
    squared 2D residuals; visible keypoints at unsafe depth contribute a
    smooth quadratic hinge (z_safe - Z)^2 pulling the point back in front
    of the camera. Each sample's terms are averaged over its visible
    keypoints; the batch loss is the sample mean.

    Returns (loss, weight grads, bias grads).
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError(f"features must be (batch, d), got shape {features.shape}")
    x_labels = np.asarray(x_labels, dtype=np.float64)
    visible = np.asarray(visible, dtype=bool)
    b = features.shape[0]
    k, n = spec.n_basis, spec.n_keypoints
    if x_labels.shape != (b, 2, n) or visible.shape != (b, n):
        raise ValueError("label shapes inconsistent with features and spec")

    out, cache = model.forward(features)
    d_out = np.zeros_like(out)
    total = 0.0
    for s in range(b):
        vec = out[s]
        alpha, omega, t = vec[:k], vec[k : k + 3], vec[k + 3 : k + 6]
        f = float(np.exp(vec[k + 6]))
        sysm = projection_system_raw(spec, alpha, omega, t, f, z_safe)
        vis = visible[s]
        n_vis = max(int(vis.sum()), 1)
        good = vis & sysm["safe"]
        bad = vis & ~sysm["safe"]

        resid = sysm["uv"] - x_labels[s]  # (2, N), unsafe entries already zero
        resid[:, ~good] = 0.0
        loss_s = float(np.sum(resid**2))
        g_vec = 2.0 * (sysm["jac"].T @ resid.ravel())
        if np.any(bad):
            gap = z_safe - sysm["depths"][bad]
            loss_s += float(np.sum(gap**2))
            g_vec += 2.0 * (sysm["depth_jac"][bad].T @ -gap)
        g_vec[k + 6] *= f  # output head carries log f
        total += loss_s / n_vis
        d_out[s] = g_vec / n_vis
    loss = total / b
    gw, gb, _ = model.backward(cache, d_out / b)
    return loss, gw, gb


def reprojection_report(
    model: MlpModel, spec: SkeletonSpec, features, x_labels, visible,
    z_safe: float = DEPTH_EPSILON,
) -> dict:
    """Mean 2D reprojection distance of predictions over visible keypoints.

    Keypoints predicted at unsafe depth are excluded from the mean and
    counted as domain violations.
    """
    features = np.asarray(features, dtype=np.float64)
    out = model.apply(features)
    k, n = spec.n_basis, spec.n_keypoints
    total, count, violations = 0.0, 0, 0
    for s in range(features.shape[0]):
        vec = out[s]
        f = float(np.exp(vec[k + 6]))
        sysm = projection_system_raw(spec, vec[:k], vec[k : k + 3], vec[k + 3 : k + 6], f, z_safe)
        vis = np.asarray(visible[s], dtype=bool)
        good = vis & sysm["safe"]
        violations += int(np.sum(vis & ~sysm["safe"]))
        if np.any(good):
            d = np.linalg.norm(sysm["uv"][:, good] - np.asarray(x_labels[s])[:, good], axis=0)
            total += float(d.sum())
            count += int(good.sum())
    mean = total / count if count else float("inf")
    return {"mean_error": mean, "keypoints": count, "domain_violations": violations}


class SkeletonInterpreter(BaseEstimator):
    """Heatmap-to-parameters regressor with two supervised training stages.

    Parameters
    ----------
    hidden_widths : tuple of int
        Hidden layer widths. The default is desk-scale; PAPER_HIDDEN_WIDTHS
        restores the full-size architecture.
    epochs, batch_size, lr : stage-II schedule (Adam).
    noise_levels : tuple of float
        Salt-and-pepper levels drawn per sample per epoch for training
        augmentation; () trains on clean renders only.
    finetune_epochs, finetune_lr : stage-III schedule.
    grad_clip : global gradient-norm clip for both stages.
    val_fraction : held-out fraction used for best-checkpoint selection.
    refiner : optional fitted HeatmapRefiner applied to features in both
        training and prediction.
    seed : controls init, splits, shuffling, and augmentation.
    """

    def __init__(
        self,
        hidden_widths=DEFAULT_HIDDEN_WIDTHS,
        epochs: int = 30,
        batch_size: int = 128,
        lr: float = 1e-3,
        noise_levels=DEFAULT_NOISE_LEVELS,
        finetune_epochs: int = 10,
        finetune_lr: float = 1e-4,
        grad_clip: float = 5.0,
        val_fraction: float = 0.1,
        refiner=None,
        seed: int = 0,
    ):
        self.hidden_widths = hidden_widths
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.noise_levels = noise_levels
        self.finetune_epochs = finetune_epochs
        self.finetune_lr = finetune_lr
        self.grad_clip = grad_clip
        self.val_fraction = val_fraction
        self.refiner = refiner
        self.seed = seed

    def _check_config(self):
        if self.epochs < 0 or self.finetune_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0 or self.finetune_lr <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        for lv in self.noise_levels:
            if not 0.0 <= lv <= 1.0:
                raise ValueError(f"noise level {lv} outside [0, 1]")

    def _apply_refiner(self, features):
        if self.refiner is None:
            return features
        return self.refiner.transform(features)

    def fit(self, dataset: Dataset, y=None):
        """Stage II: parameter-supervised training on a synthetic corpus."""
        self._check_config()
        if not isinstance(dataset, Dataset):
            raise TypeError("fit expects a Dataset")
        if len(dataset) == 0:
            raise ValueError("empty dataset")
        spec, geom = dataset.spec, dataset.geometry
        n_cells = geom.width * geom.height
        d_in = spec.n_keypoints * n_cells
        d_out = spec.n_basis + 7

        x_clean = feature_matrix(dataset)  # float32, clean renders
        targets = target_matrix(dataset)
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(0,)))
        train_idx, val_idx = _train_val_split(len(dataset), self.val_fraction, rng)
        tmu, tsd = zscore_stats(targets[train_idx])
        targets_n = (targets - tmu) / tsd

        model = init_mlp(
            [d_in, *[int(w) for w in self.hidden_widths], d_out],
            rng,
            target_norm=(tmu, tsd),
            meta={
                "kind": "interpreter",
                "stage": 2,
                "spec_name": spec.name,
                "n_keypoints": spec.n_keypoints,
                "n_basis": spec.n_basis,
                "geometry": {
                    "width": geom.width, "height": geom.height,
                    "cell_size": geom.cell_size,
                },
                "sigma": dataset.sigma,
                "seed": self.seed,
                "noise_levels": list(self.noise_levels),
            },
        )
        opt = Adam(model, lr=self.lr, grad_clip=self.grad_clip)
        x_val = self._apply_refiner(x_clean[val_idx].astype(np.float64))
        tn_val = targets_n[val_idx]
        augment = any(lv > 0 for lv in self.noise_levels)
        levels = tuple(self.noise_levels) or (0.0,)

        def val_loss():
            raw = (model.apply(x_val) - tmu) / tsd
            return float(np.mean((raw - tn_val) ** 2))

        trace = []
        best = model.copy()
        best_val = val_loss()
        step = 0
        for epoch in range(self.epochs):
            order = rng.permutation(train_idx)
            epoch_loss, n_batches = 0.0, 0
            for start in range(0, order.shape[0], self.batch_size):
                batch = order[start : start + self.batch_size]
                xb = x_clean[batch].astype(np.float64)
                if augment:
                    _corrupt_feature_rows(xb, spec.n_keypoints, n_cells, levels, rng)
                xb = self._apply_refiner(xb)
                out, cache = model.forward(xb)
                raw = (out - tmu) / tsd
                diff = raw - targets_n[batch]
                loss = float(np.mean(diff**2))
                if not np.isfinite(loss):
                    raise TrainingError("training loss diverged", step)
                d_out = 2.0 * diff / (diff.size * tsd)
                gw, gb, _ = model.backward(cache, d_out)
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
        self.spec_ = spec
        self.geometry_ = geom
        self.loss_trace_ = trace
        return self

    def finetune(self, dataset_2d: Dataset2D) -> dict:
        """Stage III: fine-tune on 2D labels through the projection layer.

        Returns a report with held-out mean reprojection error before and
        after, domain-violation counts, and the per-epoch trace.
        """
        self._check_config()
        if not hasattr(self, "model_"):
            raise RuntimeError("finetune requires a fitted interpreter (run fit first)")
        if not isinstance(dataset_2d, Dataset2D):
            raise TypeError("finetune expects a Dataset2D (see to_2d_view)")
        if len(dataset_2d) == 0:
            raise ValueError("empty dataset")
        if dataset_2d.spec.name != self.spec_.name:
            raise ValueError(
                f"dataset spec {dataset_2d.spec.name!r} != model spec {self.spec_.name!r}"
            )
        model = self.model_
        spec = self.spec_
        n = len(dataset_2d)
        feats = np.stack(
            [dataset_2d.heatmaps_for(i).flatten() for i in range(n)]
        ).astype(np.float64)
        feats = self._apply_refiner(feats)
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(1,)))
        train_idx, val_idx = _train_val_split(n, self.val_fraction, rng)

        def report(idx):
            return reprojection_report(
                model, spec, feats[idx], dataset_2d.xs[idx], dataset_2d.visible[idx]
            )

        before = report(val_idx)
        best = model.copy()
        best_err = before["mean_error"]
        opt = Adam(model, lr=self.finetune_lr, grad_clip=self.grad_clip)
        trace = []
        step = 0
        for epoch in range(self.finetune_epochs):
            order = rng.permutation(train_idx)
            epoch_loss, n_batches = 0.0, 0
            for start in range(0, order.shape[0], self.batch_size):
                batch = order[start : start + self.batch_size]
                loss, gw, gb = stage3_loss_and_grads(
                    model, spec, feats[batch], dataset_2d.xs[batch],
                    dataset_2d.visible[batch],
                )
                if not np.isfinite(loss):
                    raise TrainingError("fine-tuning loss diverged", step)
                opt.step(gw, gb)
                step += 1
                epoch_loss += loss
                n_batches += 1
            model.check_finite(step)
            val = report(val_idx)
            trace.append(
                {
                    "epoch": epoch,
                    "train_loss": epoch_loss / max(n_batches, 1),
                    "val_error": val["mean_error"],
                }
            )
            if val["mean_error"] < best_err:
                best_err = val["mean_error"]
                best = model.copy()
        best.meta["stage"] = 3
        self.model_ = best
        after = reprojection_report(
            best, spec, feats[val_idx], dataset_2d.xs[val_idx], dataset_2d.visible[val_idx]
        )
        return {
            "before": before,
            "after": after,
            "epochs": self.finetune_epochs,
            "val_size": int(val_idx.shape[0]),
            "trace": trace,
        }

    def predict(self, features) -> np.ndarray:
        """Parameter vectors (alpha, omega, t, log f) for feature rows."""
        if not hasattr(self, "model_"):
            raise RuntimeError("predict requires a fitted interpreter")
        features = np.asarray(features, dtype=np.float64)
        single = features.ndim == 1
        if single:
            features = features[None, :]
        out = self.model_.apply(self._apply_refiner(features))
        return out[0] if single else out

    def predict_params(self, hm: HeatmapStack) -> tuple:
        """One heatmap stack -> (alpha, CameraPose)."""
        if not hasattr(self, "model_"):
            raise RuntimeError("predict_params requires a fitted interpreter")
        if hm.geometry != self.geometry_:
            raise ValueError(
                f"heatmap geometry {hm.geometry} != training geometry {self.geometry_}"
            )
        if hm.n_channels != self.spec_.n_keypoints:
            raise ValueError(
                f"stack has {hm.n_channels} channels, spec needs {self.spec_.n_keypoints}"
            )
        return split_prediction(self.spec_, self.predict(hm.flatten()))


def interpreter_from_model(
    model: MlpModel, spec: SkeletonSpec, refiner=None
) -> SkeletonInterpreter:
    """Wrap a loaded model back into an estimator for inference or stage III."""
    meta = model.meta
    if meta.get("kind") != "interpreter":
        raise ValueError(f"model kind {meta.get('kind')!r} is not 'interpreter'")
    if meta.get("spec_name") != spec.name:
        raise ValueError(
            f"model was trained for spec {meta.get('spec_name')!r}, got {spec.name!r}"
        )
    geom = meta["geometry"]
    est = SkeletonInterpreter(
        hidden_widths=tuple(model.layer_widths[1:-1]),
        noise_levels=tuple(meta.get("noise_levels", DEFAULT_NOISE_LEVELS)),
        refiner=refiner,
        seed=int(meta.get("seed", 0)),
    )
    est.model_ = model
    est.spec_ = spec
    est.geometry_ = GridGeometry(
        width=int(geom["width"]),
        height=int(geom["height"]),
        cell_size=float(geom["cell_size"]),
    )
    est.loss_trace_ = []
    return est
