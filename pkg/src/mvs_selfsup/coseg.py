"""Unsupervised co-segmentation: non-negative features, NMF and softmax maps."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

EPS = 1e-12
N_FEATURES = 16
DEFAULT_KC = 4

FEATURE_NAMES = (
    "red", "green", "blue", "intensity",
    "dx+", "dx-", "dy+", "dy-", "diag+", "diag-", "anti+", "anti-",
    "smooth1", "smooth2", "local_std", "chroma",
)


@dataclass(frozen=True)
class NmfFactors:
    p: np.ndarray
    q: np.ndarray
    final_error: float
    iterations: int
    error_trace: list[float] = field(default_factory=list)

    @property
    def kc(self) -> int:
        return self.q.shape[0]


def _rgb(view: np.ndarray) -> np.ndarray:
    view = np.asarray(view, dtype=float)
    if view.ndim == 2:
        view = view[..., None]
    if view.shape[2] == 1:
        view = np.repeat(view, 3, axis=2)
    if view.shape[2] != 3:
        raise ValueError(f"expected 1 or 3 channels, got {view.shape[2]}")
    return view


def _pool(x: np.ndarray, k: int) -> np.ndarray:
    if k == 1:
        return x
    h, w = x.shape[:2]
    return x.reshape(h // k, k, w // k, k, *x.shape[2:]).mean(axis=(1, 3))


def pixel_features(view: np.ndarray) -> np.ndarray:
    """The 16-channel non-negative feature bank of one view at full resolution.

    Channels, in order: RGB; mean intensity; positive and negative parts of
    the horizontal, vertical, diagonal and anti-diagonal central differences of
    intensity; intensity smoothed with Gaussians of sigma 1 and 2; 3x3 local
    standard deviation; chroma (max minus min over RGB).
    """
    rgb = _rgb(view)
    gray = rgb.mean(axis=2)
    pad = np.pad(gray, 1, mode="edge")
    dx = (pad[1:-1, 2:] - pad[1:-1, :-2]) / 2
    dy = (pad[2:, 1:-1] - pad[:-2, 1:-1]) / 2
    diag = (pad[2:, 2:] - pad[:-2, :-2]) / 2
    anti = (pad[2:, :-2] - pad[:-2, 2:]) / 2
    oriented = []
    for d in (dx, dy, diag, anti):
        oriented += [np.maximum(d, 0.0), np.maximum(-d, 0.0)]
    s1 = ndimage.gaussian_filter(gray, 1.0, mode="nearest")
    s2 = ndimage.gaussian_filter(gray, 2.0, mode="nearest")
    mean = ndimage.uniform_filter(gray, 3, mode="nearest")
    sq = ndimage.uniform_filter(gray * gray, 3, mode="nearest")
    std = np.sqrt(np.maximum(sq - mean * mean, 0.0))
    # uniform_filter round-off leaves ~1e-9 on flat regions
    std[std < 1e-7] = 0.0
    chroma = rgb.max(axis=2) - rgb.min(axis=2)
    feats = np.stack([*np.moveaxis(rgb, 2, 0), gray, *oriented, s1, s2, std, chroma], axis=-1)
    return np.maximum(feats, 0.0)


def extract_features(views: Sequence[np.ndarray], downsample: int = 1) -> np.ndarray:
    """Feature volume of shape (N, H/downsample, W/downsample, 16)."""
    if not views:
        raise ValueError("need at least one view")
    shape = np.asarray(views[0]).shape[:2]
    if any(np.asarray(v).shape[:2] != shape for v in views):
        raise ValueError("all views must share the same dimensions")
    if downsample < 1 or shape[0] % downsample or shape[1] % downsample:
        raise ValueError(f"downsample {downsample} must be >= 1 and divide {shape}")
    return np.stack([_pool(pixel_features(v), downsample) for v in views])


def feature_matrix(volume: np.ndarray) -> np.ndarray:
    """Flatten (N, hf, wf, C) to the (N*hf*wf, C) matrix, view-major."""
    return volume.reshape(-1, volume.shape[-1])


def frobenius_error(a, p, q) -> float:
    return float(np.linalg.norm(a - p @ q))


def nmf_factorize(
    a: np.ndarray,
    kc: int = DEFAULT_KC,
    max_iters: int = 200,
    tol: float = 0.0,
    seed: int = 0,
    init: tuple[np.ndarray, np.ndarray] | None = None,
    callback: Callable[[int, np.ndarray, np.ndarray, float], None] | None = None,
) -> NmfFactors:
    """Factor ``a ≈ p @ q`` with multiplicative updates (Q first, then P).

    Args:
        a: non-negative (rows, cols) matrix.
        kc: number of clusters, 1 <= kc <= min(rows, cols).
        max_iters: iteration cap.
        tol: stop once the Frobenius residual is <= tol.
        seed: seeds the uniform (eps, 1] initialization.
        init: optional (p, q) warm start; overrides the random initialization.
        callback: called as ``callback(iteration, p, q, error)`` after each
            iteration (test hook).
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError("a must be a 2-D matrix")
    if not np.all(np.isfinite(a)):
        raise ValueError("a must be finite")
    if np.any(a < 0):
        raise ValueError("a must be non-negative")
    rows, cols = a.shape
    if not 1 <= kc <= min(rows, cols):
        raise ValueError(f"kc={kc} out of range [1, {min(rows, cols)}]")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if tol < 0:
        raise ValueError("tol must be >= 0")

    if init is not None:
        p, q = (np.array(x, dtype=float) for x in init)
        if p.shape != (rows, kc) or q.shape != (kc, cols):
            raise ValueError("warm-start factors have the wrong shape")
    else:
        rng = np.random.default_rng(seed)
        # 1 - U[0, 1) lies in (0, 1]
        p = EPS + (1.0 - EPS) * (1.0 - rng.random((rows, kc)))
        q = EPS + (1.0 - EPS) * (1.0 - rng.random((kc, cols)))

    trace = []
    it = 0
    for it in range(1, max_iters + 1):
        q = q * (p.T @ a) / (p.T @ p @ q + EPS)
        p = p * (a @ q.T) / (p @ (q @ q.T) + EPS)
        err = frobenius_error(a, p, q)
        trace.append(err)
        if callback is not None:
            callback(it, p, q, err)
        if err <= tol:
            break
    return NmfFactors(p, q, trace[-1], it, trace)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def segmentation_from_factors(factors: NmfFactors, n_views: int, hf: int, wf: int) -> np.ndarray:
    """Reshape P into per-view heat maps and softmax them over clusters.

    Returns an array of shape (N, hf, wf, kc) whose last axis sums to one.
    """
    p = np.asarray(factors.p)
    if p.shape[0] != n_views * hf * wf:
        raise ValueError(f"P has {p.shape[0]} rows, expected {n_views * hf * wf}")
    return softmax(p.reshape(n_views, hf, wf, p.shape[1]))


def onehot_argmax(probs: np.ndarray) -> np.ndarray:
    """One-hot of the arg-max along the last axis; ties go to the lowest index."""
    probs = np.asarray(probs, dtype=float)
    if probs.size == 0 or probs.shape[-1] == 0:
        raise ValueError("empty probability vector")
    if not np.all(np.isfinite(probs)):
        raise ValueError("non-finite probabilities")
    idx = np.argmax(probs, axis=-1)
    return np.eye(probs.shape[-1])[idx]


def upsample_nearest(maps: np.ndarray, factor: int) -> np.ndarray:
    """Repeat (N, hf, wf, K) maps to image resolution."""
    if factor == 1:
        return maps
    return maps.repeat(factor, axis=1).repeat(factor, axis=2)


def cosegment(
    views: Sequence[np.ndarray],
    kc: int = DEFAULT_KC,
    downsample: int = 1,
    max_iters: int = 200,
    tol: float = 0.0,
    seed: int = 0,
    init: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, NmfFactors]:
    """Co-segment views; returns (N, H, W, kc) maps at image resolution and the factors."""
    vol = extract_features(views, downsample)
    n, hf, wf, _ = vol.shape
    factors = nmf_factorize(feature_matrix(vol), kc, max_iters, tol, seed, init=init)
    seg = segmentation_from_factors(factors, n, hf, wf)
    return upsample_nearest(seg, downsample), factors


PALETTE = np.array(
    [
        [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200],
        [245, 130, 48], [145, 30, 180], [70, 240, 240], [240, 50, 230],
    ],
    dtype=np.uint8,
)


def label_image(seg: np.ndarray) -> np.ndarray:
    """Color-coded arg-max labels for one (H, W, kc) segmentation map."""
    labels = np.argmax(seg, axis=-1)
    return PALETTE[labels % len(PALETTE)]
