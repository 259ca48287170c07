"""Fully-connected networks with hand-written forward and reverse passes.

The model is a plain stack of affine layers with rectified hidden units
and a linear output. Input and (optionally) target normalizations are
part of the model so a saved file is self-contained. Training utilities
(Adam with gradient-norm clipping, seeded init) live here; task-specific
loops belong to the estimator wrappers.

Files use the "skelmlp-v1" container: a format-id line, a JSON header
(widths, normalizations, provenance, body checksum), then all weights
and biases as little-endian float32 in layer order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

MODEL_FORMAT_VERSION = "skelmlp-v1"
DEFAULT_GRAD_CLIP = 5.0


class TrainingError(RuntimeError):
    """Training produced a non-finite loss or parameter."""

    def __init__(self, message: str, step: int | None = None):
        self.step = step
        super().__init__(message if step is None else f"{message} (step {step})")


class ModelIntegrityError(RuntimeError):
    """A model file is truncated or fails its checksum."""


def _identity_norm(width: int) -> tuple:
    return np.zeros(width), np.ones(width)


def _check_norm(pair, width, name):
    mean = np.asarray(pair[0], dtype=np.float64).ravel()
    scale = np.asarray(pair[1], dtype=np.float64).ravel()
    if mean.shape != (width,) or scale.shape != (width,):
        raise ValueError(f"{name}: normalization vectors must have width {width}")
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(scale))):
        raise ValueError(f"{name}: normalization must be finite")
    if np.any(scale <= 0):
        raise ValueError(f"{name}: normalization scale must be positive")
    return mean, scale


class MlpModel:
    """Dense rectifier network y = denorm(W_L(...relu(W_1 norm(x)+b_1)...)).

    Weights are stored as (fan_in, fan_out) matrices so a batch forward
    pass is X @ W + b. The hidden activation is a rectifier; the output
    layer is linear. Normalizations are applied on the way in and out.
    """

    def __init__(self, weights, biases, input_norm=None, target_norm=None, meta=None):
        if len(weights) != len(biases) or not weights:
            raise ValueError("weights and biases must be equal-length, non-empty lists")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64).ravel() for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2:
                raise ValueError(f"layer {i}: weight must be a matrix, got shape {w.shape}")
            if b.shape != (w.shape[1],):
                raise ValueError(
                    f"layer {i}: bias width {b.shape[0]} != weight fan-out {w.shape[1]}"
                )
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(
                    f"layer {i}: fan-in {w.shape[0]} != previous fan-out "
                    f"{self.weights[i - 1].shape[1]}"
                )
        d_in, d_out = self.weights[0].shape[0], self.weights[-1].shape[1]
        self.input_norm = _check_norm(
            input_norm if input_norm is not None else _identity_norm(d_in), d_in, "input"
        )
        self.target_norm = (
            None
            if target_norm is None
            else _check_norm(target_norm, d_out, "target")
        )
        self.meta = dict(meta or {})

    @property
    def layer_widths(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def check_finite(self, step: int | None = None) -> None:
        for w, b in zip(self.weights, self.biases):
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise TrainingError("non-finite model parameter", step)

    def copy(self) -> "MlpModel":
        return MlpModel(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            input_norm=(self.input_norm[0].copy(), self.input_norm[1].copy()),
            target_norm=None
            if self.target_norm is None
            else (self.target_norm[0].copy(), self.target_norm[1].copy()),
            meta=dict(self.meta),
        )

    def _validate_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.layer_widths[0]:
            raise ValueError(
                f"input width {x.shape[-1] if x.ndim else '?'} != model input "
                f"width {self.layer_widths[0]}"
            )
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite input")
        return x, squeeze

    def forward(self, x):
        """Forward pass returning (output, cache) for a later backward pass."""
        x, squeeze = self._validate_input(x)
        mu, sd = self.input_norm
        a = (x - mu) / sd
        pre = []  # pre-activations per layer
        post = [a]  # post-activations, starting with the normalized input
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            pre.append(z)
            a = z if i == last else np.maximum(z, 0.0)
            post.append(a)
        out = a
        if self.target_norm is not None:
            tmu, tsd = self.target_norm
            out = tmu + tsd * out
        cache = {"pre": pre, "post": post, "squeeze": squeeze}
        return (out[0] if squeeze else out), cache

    def apply(self, x):
        """Forward pass without cache; the inference entry point."""
        out, _ = self.forward(x)
        return out

    def backward(self, cache, d_out):
        """Reverse pass for the forward that produced `cache`.

        `d_out` is the loss gradient w.r.t. the de-normalized output.
        Returns (weight grads, bias grads, input grad), where the input
        grad is w.r.t. the raw (un-normalized) input.
        """
        d = np.asarray(d_out, dtype=np.float64)
        if cache["squeeze"]:
            d = d[None, :]
        if d.shape != cache["pre"][-1].shape:
            raise ValueError(
                f"upstream gradient shape {d.shape} != output shape {cache['pre'][-1].shape}"
            )
        if self.target_norm is not None:
            d = d * self.target_norm[1]
        grads_w = [None] * self.n_layers
        grads_b = [None] * self.n_layers
        for i in range(self.n_layers - 1, -1, -1):
            if i != self.n_layers - 1:
                d = d * (cache["pre"][i] > 0.0)
            grads_w[i] = cache["post"][i].T @ d
            grads_b[i] = d.sum(axis=0)
            d = d @ self.weights[i].T
        d_in = d / self.input_norm[1]
        if cache["squeeze"]:
            d_in = d_in[0]
        return grads_w, grads_b, d_in


def init_mlp(widths, rng, input_norm=None, target_norm=None, meta=None) -> MlpModel:
    """Fan-in scaled uniform weights, zero biases, in a fixed draw order."""
    widths = [int(w) for w in widths]
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ValueError(f"need at least two positive layer widths, got {widths}")
    weights, biases = [], []
    for d_in, d_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(d_in)
        weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
        biases.append(np.zeros(d_out))
    return MlpModel(weights, biases, input_norm=input_norm, target_norm=target_norm, meta=meta)


class Adam:
    """Adaptive moment estimation over one model's parameter list."""

    def __init__(self, model: MlpModel, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 grad_clip: float = DEFAULT_GRAD_CLIP):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.model = model
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.grad_clip = float(grad_clip)
        self.step_count = 0
        self._m = [np.zeros_like(p) for p in model.weights + model.biases]
        self._v = [np.zeros_like(p) for p in model.weights + model.biases]

    def step(self, grads_w, grads_b) -> float:
        """One update over all parameters; returns the pre-clip grad norm."""
        grads = list(grads_w) + list(grads_b)
        params = self.model.weights + self.model.biases
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
        if not np.isfinite(norm):
            raise TrainingError("non-finite gradient", self.step_count)
        scale = 1.0 if norm <= self.grad_clip else self.grad_clip / norm
        self.step_count += 1
        b1t = 1.0 - self.beta1 ** self.step_count
        b2t = 1.0 - self.beta2 ** self.step_count
        for p, g, m, v in zip(params, grads, self._m, self._v):
            g = g * scale
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
        return norm


def zscore_stats(matrix, floor: float = 1e-8) -> tuple:
    """Column means and scales for z-scoring; scales floored away from 0."""
    matrix = np.asarray(matrix, dtype=np.float64)
    mean = matrix.mean(axis=0)
    scale = np.maximum(matrix.std(axis=0), floor)
    return mean, scale


def save_model(model: MlpModel, path) -> None:
    """Write a model container (weights quantized to float32)."""
    parts = [np.asarray(w, dtype="<f4").tobytes(order="C") for w in model.weights]
    parts += [np.asarray(b, dtype="<f4").tobytes(order="C") for b in model.biases]
    raw = b"".join(parts)
    tn = model.target_norm
    header = {
        "layer_widths": model.layer_widths,
        "input_norm": [model.input_norm[0].tolist(), model.input_norm[1].tolist()],
        "target_norm": None if tn is None else [tn[0].tolist(), tn[1].tolist()],
        "meta": model.meta,
        "body_sha256": hashlib.sha256(raw).hexdigest(),
        "body_bytes": len(raw),
    }
    with open(path, "wb") as fh:
        fh.write(MODEL_FORMAT_VERSION.encode("utf-8") + b"\n")
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(raw)


def load_model(path) -> MlpModel:
    """Read a model container, verifying its checksum."""
    with open(path, "rb") as fh:
        magic = fh.readline().rstrip(b"\n").decode("utf-8", "replace")
        if magic != MODEL_FORMAT_VERSION:
            raise ModelIntegrityError(
                f"{path}: not a {MODEL_FORMAT_VERSION} file (got {magic!r})"
            )
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ModelIntegrityError(f"{path}: unreadable header ({exc})") from exc
        raw = fh.read()
    if len(raw) != header["body_bytes"]:
        raise ModelIntegrityError(
            f"{path}: truncated body ({len(raw)} bytes, expected {header['body_bytes']})"
        )
    digest = hashlib.sha256(raw).hexdigest()
    if digest != header["body_sha256"]:
        raise ModelIntegrityError(
            f"{path}: checksum mismatch (expected {header['body_sha256']}, got {digest})"
        )
    widths = header["layer_widths"]
    weights, biases, offset = [], [], 0
    for d_in, d_out in zip(widths[:-1], widths[1:]):
        n = d_in * d_out
        weights.append(
            np.frombuffer(raw, dtype="<f4", count=n, offset=offset)
            .reshape(d_in, d_out).astype(np.float64)
        )
        offset += 4 * n
    for d_out in widths[1:]:
        biases.append(
            np.frombuffer(raw, dtype="<f4", count=d_out, offset=offset)
            .astype(np.float64)
        )
        offset += 4 * d_out
    if offset != len(raw):
        raise ModelIntegrityError(f"{path}: body size inconsistent with layer widths")
    tn = header["target_norm"]
    return MlpModel(
        weights,
        biases,
        input_norm=tuple(header["input_norm"]),
        target_norm=None if tn is None else tuple(tn),
        meta=header.get("meta", {}),
    )
