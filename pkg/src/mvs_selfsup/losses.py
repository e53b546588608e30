"""Self-supervision loss terms with analytic gradients, and their weighted sum.

Every term returns ``(value, gradient)``. Norms follow one convention: the sum
over valid pixels of the per-pixel Euclidean norm across channels, divided by
the valid-pixel count. Values use the exact norm; gradients use the smoothed
norm ``sqrt(x**2 + 1e-12)`` so they stay defined at zero residual.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .coseg import onehot_argmax
from .geometry import DepthMap, image_gradient, image_gradient_adjoint

NORM_EPS = 1e-12
LOG_EPS = 1e-12
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

TERM_NAMES = ("l_pc", "l_sc", "l_da", "l_ssim", "l_smooth")


class LossComputationError(ArithmeticError):
    """A loss term evaluated to a non-finite value."""

    def __init__(self, term: str, value: float):
        super().__init__(f"loss term {term} is not finite ({value})")
        self.term = term


def _channels(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[..., None] if x.ndim == 2 else x


def _norm_and_grad(r: np.ndarray):
    """Per-pixel channel norm of r (H, W, C) and d(norm)/dr (smoothed)."""
    sq = np.sum(r * r, axis=-1)
    return np.sqrt(sq), r / np.sqrt(sq + NORM_EPS)[..., None]


def photometric_view_loss(ref: np.ndarray, warped: np.ndarray, mask: np.ndarray):
    """One view's photometric term and its gradient w.r.t. ``warped``.

    Returns ``(value, grad, valid_count)``; an all-zero mask gives value 0.
    The gradient-difference residual at a pixel uses only the forward
    differences whose both endpoints are valid.
    """
    ref = _channels(ref)
    warped = _channels(warped)
    m = np.asarray(mask, dtype=float)
    count = float(m.sum())
    if count == 0:
        return 0.0, np.zeros_like(warped), 0
    diff = (warped - ref) * m[..., None]
    n_abs, g_abs = _norm_and_grad(diff)

    wgx, wgy = image_gradient(warped)
    rgx, rgy = image_gradient(ref)
    mx = np.zeros_like(m)
    my = np.zeros_like(m)
    mx[:, :-1] = m[:, :-1] * m[:, 1:]
    my[:-1] = m[:-1] * m[1:]
    ex = (wgx - rgx) * mx[..., None]
    ey = (wgy - rgy) * my[..., None]
    stacked = np.concatenate([ex, ey], axis=-1)
    n_grad, g_grad = _norm_and_grad(stacked)
    c = ref.shape[-1]
    g_ex, g_ey = g_grad[..., :c] * mx[..., None], g_grad[..., c:] * my[..., None]

    value = float((np.sum(n_abs * m) + np.sum(n_grad * m)) / count)
    grad = (g_abs * m[..., None] + image_gradient_adjoint(g_ex * m[..., None], g_ey * m[..., None])) / count
    return value, grad, int(count)


def photometric_loss(ref: np.ndarray, warped: Sequence[tuple[np.ndarray, np.ndarray]]):
    """Photometric consistency summed over source views.

    Args:
        ref: reference image (H, W) or (H, W, C).
        warped: list of ``(warped_image, mask)`` pairs.

    Returns:
        ``(value, grads)`` with one gradient array per view, shaped like the
        warped image with a channel axis.
    """
    if not warped:
        raise ValueError("photometric_loss needs at least one warped view")
    total, grads = 0.0, []
    for img, mask in warped:
        v, g, _ = photometric_view_loss(ref, img, mask)
        total += v
        grads.append(g)
    return total, grads


def _box3(x: np.ndarray) -> np.ndarray:
    """3x3 window sums at interior centres; (H, W, C) -> (H-2, W-2, C)."""
    h, w = x.shape[:2]
    out = np.zeros((h - 2, w - 2) + x.shape[2:])
    for dy in range(3):
        for dx in range(3):
            out += x[dy : dy + h - 2, dx : dx + w - 2]
    return out


def _box3_adjoint(y: np.ndarray, shape) -> np.ndarray:
    out = np.zeros(shape)
    h, w = shape[:2]
    for dy in range(3):
        for dx in range(3):
            out[dy : dy + h - 2, dx : dx + w - 2] += y
    return out


def ssim_map(x: np.ndarray, y: np.ndarray):
    """SSIM with a 3x3 uniform window at interior centres, and its partials.

    Returns ``(ssim, d_mx, d_mxx, d_mxy, moments)`` where the partials are
    with respect to the window moments of ``x``.
    """
    mx = _box3(x) / 9
    my = _box3(y) / 9
    mxx = _box3(x * x) / 9
    myy = _box3(y * y) / 9
    mxy = _box3(x * y) / 9
    vx = mxx - mx * mx
    vy = myy - my * my
    cxy = mxy - mx * my
    a1 = 2 * mx * my + SSIM_C1
    a2 = 2 * cxy + SSIM_C2
    b1 = mx * mx + my * my + SSIM_C1
    b2 = vx + vy + SSIM_C2
    s = a1 * a2 / (b1 * b2)
    d_mx = s * (2 * my / a1 - 2 * my / a2 - 2 * mx / b1 + 2 * mx / b2)
    d_mxx = -s / b2
    d_mxy = s * 2 / a2
    return s, d_mx, d_mxx, d_mxy


def ssim_loss(ref: np.ndarray, warped: np.ndarray, mask: np.ndarray):
    """Mean of (1 - SSIM)/2 over windows lying entirely in the mask.

    Returns ``(value, grad_wrt_warped, valid_count)``.
    """
    ref = _channels(ref)
    warped = _channels(warped)
    m = np.asarray(mask, dtype=float)
    h, w, c = warped.shape
    if h < 3 or w < 3:
        raise ValueError("SSIM window does not fit the image")
    win = _box3(m[..., None])[..., 0] >= 9 - 1e-9
    count = int(win.sum())
    if count == 0:
        return 0.0, np.zeros_like(warped), 0
    s, d_mx, d_mxx, d_mxy = ssim_map(warped, ref)
    wv = win[..., None]
    per = np.clip((1 - s) / 2, 0.0, 1.0)
    value = float(np.sum(per * wv) / (count * c))
    scale = -0.5 * wv / (count * c * 9)
    grad = (
        _box3_adjoint(d_mx * scale, warped.shape)
        + 2 * warped * _box3_adjoint(d_mxx * scale, warped.shape)
        + ref * _box3_adjoint(d_mxy * scale, warped.shape)
    )
    return value, grad, count


def smoothness_loss(depth: DepthMap, ref_image: np.ndarray):
    """Edge-aware first-order smoothness of the mean-normalized depth.

    Value is the mean over valid horizontal pairs of
    ``|dx d_hat| * exp(-|dx I|)`` plus the same over vertical pairs, with
    ``d_hat = depth / mean(valid depth)`` and ``|dx I|`` averaged over channels.
    Returns ``(value, grad_wrt_depth, valid_count)``.
    """
    img = _channels(ref_image)
    if img.shape[:2] != depth.shape:
        raise ValueError("depth and image lattices differ")
    valid = depth.valid
    n = int(valid.sum())
    grad = np.zeros(depth.shape)
    if n == 0:
        return 0.0, grad, 0
    d = np.where(valid, depth.values, 0.0)
    mu = d.sum() / n
    dn = d / mu
    gx_i, gy_i = image_gradient(img)
    wx = np.exp(-np.abs(gx_i).mean(axis=-1))
    wy = np.exp(-np.abs(gy_i).mean(axis=-1))
    px = valid[:, :-1] & valid[:, 1:]
    py = valid[:-1] & valid[1:]
    value = 0.0
    g_dn = np.zeros(depth.shape)
    for pairs, diff, weight, axis in (
        (px, dn[:, 1:] - dn[:, :-1], wx[:, :-1], 1),
        (py, dn[1:] - dn[:-1], wy[:-1], 0),
    ):
        k = int(pairs.sum())
        if k == 0:
            continue
        value += float(np.sum(np.abs(diff) * weight * pairs) / k)
        coef = diff / np.sqrt(diff * diff + NORM_EPS) * weight * pairs / k
        if axis == 1:
            g_dn[:, 1:] += coef
            g_dn[:, :-1] -= coef
        else:
            g_dn[1:] += coef
            g_dn[:-1] -= coef
    # d_hat_j = d_j / mu with mu = sum(d)/n over valid pixels
    grad = np.where(valid, g_dn / mu - np.sum(g_dn * dn) / (n * mu), 0.0)
    return value, grad, n


def semantic_view_loss(seg_ref: np.ndarray, warped_seg: np.ndarray, mask: np.ndarray):
    """Cross-entropy of warped probabilities against the reference arg-max labels.

    Returns ``(value, grad_wrt_warped_seg, valid_count)``. ``log`` is taken of
    ``max(p, 1e-12)``; the reference labels carry no gradient.
    """
    seg_ref = np.asarray(seg_ref, dtype=float)
    warped_seg = np.asarray(warped_seg, dtype=float)
    if seg_ref.shape != warped_seg.shape:
        raise ValueError("reference and warped segmentation shapes differ")
    if np.any(warped_seg < 0):
        raise ValueError("warped segmentation probabilities must be >= 0")
    m = np.asarray(mask, dtype=float)
    count = float(m.sum())
    if count == 0:
        return 0.0, np.zeros_like(warped_seg), 0
    target = onehot_argmax(seg_ref)
    p = np.sum(target * warped_seg, axis=-1)
    safe = np.maximum(p, LOG_EPS)
    value = float(-np.sum(np.log(safe) * m) / count)
    dp = np.where(p > LOG_EPS, -1.0 / safe, 0.0) * m / count
    return value, target * dp[..., None], int(count)


def semantic_loss(seg_ref: np.ndarray, warped_segs: Sequence[tuple[np.ndarray, np.ndarray]]):
    """Semantic consistency summed over views; returns ``(value, grads)``."""
    total, grads = 0.0, []
    for seg, mask in warped_segs:
        v, g, _ = semantic_view_loss(seg_ref, seg, mask)
        total += v
        grads.append(g)
    return total, grads


def da_consistency_loss(d_main: DepthMap, d_aug: DepthMap, da_mask: np.ndarray):
    """Mean absolute depth difference over the unoccluded mask.

    ``d_main`` is a detached target; the gradient is w.r.t. ``d_aug`` only.
    Returns ``(value, grad_wrt_d_aug, valid_count)``.
    """
    if d_main.shape != d_aug.shape or np.shape(da_mask) != d_main.shape:
        raise ValueError("depth maps and mask must share one lattice")
    m = np.asarray(da_mask, dtype=float) * d_main.valid * d_aug.valid
    count = float(m.sum())
    if count == 0:
        return 0.0, np.zeros(d_aug.shape), 0
    diff = np.where(m > 0, d_aug.values - d_main.values, 0.0)
    value = float(np.sum(np.abs(diff) * m) / count)
    grad = diff / np.sqrt(diff * diff + NORM_EPS) * m / count
    return value, grad, int(count)


@dataclass(frozen=True)
class LossWeights:
    """Term weights with the standard defaults.

    ``lambda3_warmup`` is ``(initial, period_epochs)``; when set, the
    effective data-augmentation weight is ``initial * 2**(epoch // period)``.
    """

    lambda1: float = 0.8
    lambda2: float = 0.1
    lambda3: float = 0.1
    lambda4: float = 0.2
    lambda5: float = 0.0067
    lambda3_warmup: tuple[float, int] | None = None

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4", "lambda5"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")
        if self.lambda3_warmup is not None:
            init, period = self.lambda3_warmup
            if init < 0 or period < 1:
                raise ValueError("warm-up needs initial >= 0 and period >= 1")
            object.__setattr__(self, "lambda3_warmup", (float(init), int(period)))

    @classmethod
    def with_warmup(cls, initial: float = 0.01, period: int = 2, **kw) -> "LossWeights":
        return cls(lambda3_warmup=(initial, period), **kw)

    def lambda3_at(self, epoch: int) -> float:
        if self.lambda3_warmup is None:
            return self.lambda3
        init, period = self.lambda3_warmup
        return init * 2.0 ** (epoch // period)

    def effective(self, epoch: int = 0) -> tuple[float, ...]:
        return (self.lambda1, self.lambda2, self.lambda3_at(epoch), self.lambda4, self.lambda5)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        d = dict(d)
        if d.get("lambda3_warmup") is not None:
            d["lambda3_warmup"] = tuple(d["lambda3_warmup"])
        return cls(**d)


@dataclass
class LossBreakdown:
    l_pc: float = 0.0
    l_sc: float = 0.0
    l_da: float = 0.0
    l_ssim: float = 0.0
    l_smooth: float = 0.0
    total: float = 0.0
    weights: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0, 0.0)
    valid_pixel_counts: list[int] = field(default_factory=list)
    empty_views: list[int] = field(default_factory=list)

    def terms(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in TERM_NAMES}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = list(self.weights)
        return d


def total_loss(terms: dict[str, float], weights: LossWeights, epoch: int = 0, **extra) -> LossBreakdown:
    """Weighted sum of the five terms; missing terms count as zero.

    ``extra`` is forwarded to the breakdown (``valid_pixel_counts``,
    ``empty_views``).
    """
    unknown = set(terms) - set(TERM_NAMES)
    if unknown:
        raise KeyError(f"unknown loss terms: {sorted(unknown)}")
    vals = [float(terms.get(k, 0.0)) for k in TERM_NAMES]
    for name, v in zip(TERM_NAMES, vals):
        if not math.isfinite(v):
            raise LossComputationError(name, v)
    lam = weights.effective(epoch)
    total = sum(w * v for w, v in zip(lam, vals))
    return LossBreakdown(*vals, total=total, weights=lam, **extra)


def total_loss_multiscale(levels: Sequence[dict[str, float]], weights: LossWeights, epoch: int = 0) -> LossBreakdown:
    """Sum of per-level breakdowns with shared weights."""
    parts = [total_loss(t, weights, epoch) for t in levels]
    summed = {k: sum(getattr(p, k) for p in parts) for k in TERM_NAMES}
    out = total_loss(summed, weights, epoch)
    out.total = sum(p.total for p in parts)
    return out
