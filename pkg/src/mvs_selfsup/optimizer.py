"""Direct per-pixel depth optimization under the combined self-supervision objective.

The depth map itself is the optimization variable. Each step is a projected
gradient step ``D <- clip(D - step * n_pixels * dL/dD, d_min, d_max)``; the
pixel-count factor turns the per-pixel-averaged losses into a per-pixel
update of resolution-independent size.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import coseg
from .augment import AugmentParams, compose_augmentation, random_params
from .geometry import Camera, DepthMap, pixel_grid, sample_bilinear, warp
from .losses import (
    LossBreakdown,
    LossComputationError,
    LossWeights,
    da_consistency_loss,
    photometric_view_loss,
    semantic_view_loss,
    smoothness_loss,
    ssim_loss,
    total_loss,
    total_loss_multiscale,
)


# per-pixel depth has no network prior; the default 0.0067 under-regularizes it
DEFAULT_SMOOTHNESS = 0.05


class OptimizationAborted(RuntimeError):
    """A non-finite loss stopped the run; ``trace`` holds the steps so far."""

    def __init__(self, message: str, trace: "OptTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class OptimizeConfig:
    """Optimizer settings.

    ``step_size`` of ``None`` means ``0.05 * (d_max - d_min)`` at the coarsest
    level, halved for every finer level. ``iterations_per_epoch`` converts
    iterations into epochs for the data-augmentation weight warm-up.
    """

    iterations: int = 150
    step_size: float | None = None
    pyramid_levels: int = 3
    weights: LossWeights = field(default_factory=lambda: LossWeights(lambda5=DEFAULT_SMOOTHNESS))
    enable_sc: bool = True
    enable_da: bool = True
    coseg_refresh_period: int = 25
    kc: int = coseg.DEFAULT_KC
    nmf_iters: int = 200
    iterations_per_epoch: int = 20
    augment: AugmentParams | None = None
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if self.coseg_refresh_period < 1 or self.iterations_per_epoch < 1:
            raise ValueError("periods must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = self.weights.to_dict()
        d["augment"] = None if self.augment is None else self.augment.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizeConfig":
        d = dict(d)
        if "weights" in d:
            d["weights"] = LossWeights.from_dict(d["weights"])
        if d.get("augment") is not None:
            d["augment"] = AugmentParams.from_dict(d["augment"])
        return cls(**d)


@dataclass
class OptTrace:
    breakdowns: list[LossBreakdown] = field(default_factory=list)
    level_depths: list[np.ndarray] = field(default_factory=list)
    level_iterations: list[int] = field(default_factory=list)
    level_breakdowns: list[LossBreakdown] = field(default_factory=list)
    multiscale: LossBreakdown | None = None
    wall_time: float = 0.0

    def extend(self, other: "OptTrace") -> None:
        self.breakdowns += other.breakdowns
        self.level_depths += other.level_depths
        self.level_iterations += other.level_iterations
        self.level_breakdowns += other.level_breakdowns


@dataclass
class SceneBundle:
    """Views and cameras of one optimization problem; view 0 is the reference."""

    views: list[np.ndarray]
    cameras: list[Camera]

    def __post_init__(self):
        if len(self.views) < 2 or len(self.views) != len(self.cameras):
            raise ValueError("need >= 2 views with one camera each")
        self.views = [v[..., None] if v.ndim == 2 else np.asarray(v, float) for v in self.views]

    @property
    def shape(self) -> tuple[int, int]:
        return self.views[0].shape[:2]

    def pooled(self, factor: int) -> "SceneBundle":
        if factor == 1:
            return self
        return SceneBundle([_pool(v, factor) for v in self.views], [c.pooled(factor) for c in self.cameras])


def _pool(x: np.ndarray, k: int) -> np.ndarray:
    h, w = x.shape[:2]
    if h % k or w % k:
        raise ValueError(f"image {h}x{w} not divisible by {k}")
    return x.reshape(h // k, k, w // k, k, *x.shape[2:]).mean(axis=(1, 3))


def _chain(grad_img: np.ndarray, w) -> np.ndarray:
    """dL/dD from dL/d(warped) through the bilinear sample and the reprojection."""
    du = np.sum(grad_img * w.d_du, axis=-1)
    dv = np.sum(grad_img * w.d_dv, axis=-1)
    return du * w.duv_ddepth[..., 0] + dv * w.duv_ddepth[..., 1]


def depth_objective_gradient(
    depth: DepthMap,
    bundle: SceneBundle,
    weights: LossWeights,
    segs: np.ndarray | None = None,
    epoch: int = 0,
    da_target: tuple[DepthMap, np.ndarray] | None = None,
    pc_mask: np.ndarray | None = None,
    terms: Sequence[str] = ("l_pc", "l_ssim", "l_sc", "l_smooth", "l_da"),
) -> tuple[LossBreakdown, np.ndarray]:
    """Objective value breakdown and dTotal/dD.

    Args:
        depth: reference-view depth.
        bundle: views and cameras.
        weights: term weights.
        segs: optional (N, H, W, kc) segmentation maps; enables ``l_sc``.
        epoch: selects the warm-up value of the data-augmentation weight.
        da_target: ``(pseudo_gt_depth, da_mask)``; enables ``l_da`` with the
            gradient flowing into ``depth`` only.
        pc_mask: extra reference-lattice mask applied to the warped-view terms.
        terms: subset of terms to evaluate.

    Validity masks are constants with respect to depth.
    """
    if depth.shape != bundle.shape:
        raise ValueError("depth and reference image lattices differ")
    lam = dict(zip(("l_pc", "l_sc", "l_da", "l_ssim", "l_smooth"), weights.effective(epoch)))
    ref = bundle.views[0]
    cam0 = bundle.cameras[0]
    values = dict.fromkeys(("l_pc", "l_sc", "l_da", "l_ssim", "l_smooth"), 0.0)
    grad = np.zeros(depth.shape)
    counts, empty = [], []
    use_sc = "l_sc" in terms and segs is not None
    for i in range(1, len(bundle.views)):
        cam = bundle.cameras[i]
        rel = cam.relative_to(cam0)
        w = warp(bundle.views[i], depth, cam0.intrinsics, cam.intrinsics, rel)
        m = w.mask if pc_mask is None else w.mask * pc_mask
        counts.append(int(m.sum()))
        if counts[-1] == 0:
            empty.append(i)
        if "l_pc" in terms:
            v, g, _ = photometric_view_loss(ref, w.warped, m)
            values["l_pc"] += v
            if lam["l_pc"]:
                grad += lam["l_pc"] * _chain(g, w)
        if "l_ssim" in terms and min(depth.shape) >= 3:
            v, g, _ = ssim_loss(ref, w.warped, m)
            values["l_ssim"] += v
            if lam["l_ssim"]:
                grad += lam["l_ssim"] * _chain(g, w)
        if use_sc:
            ws = warp(segs[i], depth, cam0.intrinsics, cam.intrinsics, rel)
            v, g, _ = semantic_view_loss(segs[0], ws.warped, m)
            values["l_sc"] += v
            if lam["l_sc"]:
                grad += lam["l_sc"] * _chain(g, ws)
    if "l_smooth" in terms:
        v, g, _ = smoothness_loss(depth, ref)
        values["l_smooth"] = v
        if lam["l_smooth"]:
            grad += lam["l_smooth"] * g
    if "l_da" in terms and da_target is not None:
        target, da_mask = da_target
        v, g, _ = da_consistency_loss(target, depth, da_mask)
        values["l_da"] = v
        if lam["l_da"]:
            grad += lam["l_da"] * g
    breakdown = total_loss(values, weights, epoch, valid_pixel_counts=counts, empty_views=empty)
    return breakdown, np.where(depth.valid, grad, 0.0)


class _Segmenter:
    """Co-segmentation cache with warm-started refreshes."""

    def __init__(self, bundle: SceneBundle, config: OptimizeConfig, seed: int):
        self.bundle = bundle
        self.config = config
        self.seed = seed
        self.factors = None
        self.maps = None

    def refresh(self) -> np.ndarray:
        init = None if self.factors is None else (self.factors.p, self.factors.q)
        kc = min(self.config.kc, coseg.N_FEATURES)
        self.maps, self.factors = coseg.cosegment(
            [v for v in self.bundle.views], kc=kc, max_iters=self.config.nmf_iters,
            seed=self.seed, init=init,
        )
        return self.maps


def _step_size(config: OptimizeConfig, depth: DepthMap, level_from_coarsest: int) -> float:
    base = config.step_size if config.step_size is not None else 0.05 * (depth.d_max - depth.d_min)
    return base * 0.5**level_from_coarsest


def _project(values: np.ndarray, depth: DepthMap) -> DepthMap:
    return DepthMap(np.clip(values, depth.d_min, depth.d_max), depth.d_min, depth.d_max)


def dual_branch_step(
    d_main: DepthMap,
    d_aug: DepthMap,
    bundle: SceneBundle,
    aug_params: AugmentParams,
    config: OptimizeConfig,
    step: float,
    segs: np.ndarray | None = None,
    epoch: int = 0,
) -> tuple[DepthMap, DepthMap, LossBreakdown]:
    """One main-branch step on clean views, then one augmented-branch step.

    The augmented branch sees the views transformed by ``aug_params`` (the
    occlusion is projected with the current main depth) and minimizes the
    photometric term outside the occlusion plus the weighted distance to the
    detached main-branch depth.
    """
    n = d_main.values.size
    w = config.weights
    main_terms = ("l_pc", "l_ssim", "l_smooth") + (("l_sc",) if config.enable_sc else ())
    bd_main, g_main = depth_objective_gradient(d_main, bundle, w, segs if config.enable_sc else None, epoch, terms=main_terms)
    new_main = _project(d_main.values - step * n * g_main, d_main)

    aug = compose_augmentation([v for v in bundle.views], d_main, bundle.cameras, aug_params)
    aug_bundle = SceneBundle(aug.images, bundle.cameras)
    bd_aug, g_aug = depth_objective_gradient(
        d_aug, aug_bundle, w, epoch=epoch, da_target=(d_main, aug.da_mask),
        pc_mask=aug.da_mask, terms=("l_pc", "l_da"),
    )
    new_aug = _project(d_aug.values - step * n * g_aug, d_aug)
    terms = bd_main.terms()
    terms["l_da"] = bd_aug.l_da
    bd = total_loss(terms, w, epoch, valid_pixel_counts=bd_main.valid_pixel_counts, empty_views=bd_main.empty_views)
    return new_main, new_aug, bd


def refine_depth(
    init: DepthMap,
    bundle: SceneBundle,
    config: OptimizeConfig,
    level_from_coarsest: int = 0,
    iteration_offset: int = 0,
) -> tuple[DepthMap, OptTrace]:
    """Projected gradient descent on one resolution level."""
    t0 = time.perf_counter()
    trace = OptTrace()
    depth = init.clamped()
    d_aug = depth
    step = _step_size(config, depth, level_from_coarsest)
    n = depth.values.size
    ss = np.random.SeedSequence([config.seed, level_from_coarsest])
    seg_seed, aug_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    aug_rng = np.random.default_rng(aug_seed)
    segmenter = _Segmenter(bundle, config, seg_seed) if config.enable_sc else None
    segs = None
    for it in range(config.iterations):
        epoch = (iteration_offset + it) // config.iterations_per_epoch
        if segmenter is not None and it % config.coseg_refresh_period == 0:
            segs = segmenter.refresh()
        try:
            if config.enable_da:
                params = config.augment or random_params(depth.shape, aug_rng)
                depth, d_aug, bd = dual_branch_step(depth, d_aug, bundle, params, config, step, segs, epoch)
            else:
                terms = ("l_pc", "l_ssim", "l_smooth") + (("l_sc",) if segs is not None else ())
                bd, g = depth_objective_gradient(depth, bundle, config.weights, segs, epoch, terms=terms)
                depth = _project(depth.values - step * n * g, depth)
        except LossComputationError as exc:
            trace.wall_time = time.perf_counter() - t0
            raise OptimizationAborted(str(exc), trace) from exc
        trace.breakdowns.append(bd)
    final_terms = ("l_pc", "l_ssim", "l_smooth") + (("l_sc",) if segs is not None else ())
    final_bd, _ = depth_objective_gradient(depth, bundle, config.weights, segs, terms=final_terms)
    trace.level_depths.append(depth.values.copy())
    trace.level_iterations.append(config.iterations)
    trace.level_breakdowns.append(final_bd)
    trace.wall_time = time.perf_counter() - t0
    return depth, trace


def upsample_depth(depth: DepthMap, shape: tuple[int, int]) -> DepthMap:
    """Bilinear 2x-style upsampling consistent with average-pool pixel centres."""
    h, w = depth.shape
    fh, fw = shape[0] / h, shape[1] / w
    uv = pixel_grid(*shape)
    uv[..., 0] = np.clip((uv[..., 0] - (fw - 1) / 2) / fw, 0, w - 1)
    uv[..., 1] = np.clip((uv[..., 1] - (fh - 1) / 2) / fh, 0, h - 1)
    vals = sample_bilinear(depth.values, uv).values[..., 0]
    return DepthMap(vals, depth.d_min, depth.d_max)


def coarse_to_fine(init: DepthMap, bundle: SceneBundle, config: OptimizeConfig) -> tuple[DepthMap, OptTrace]:
    """Refine on an average-pooled pyramid from coarsest to finest level."""
    levels = config.pyramid_levels
    h, w = bundle.shape
    k = 2 ** (levels - 1)
    if h % k or w % k:
        raise ValueError(f"image {h}x{w} not divisible by 2^{levels - 1}")
    if levels == 1:
        depth, trace = refine_depth(init, bundle, config)
        trace.multiscale = total_loss_multiscale([trace.level_breakdowns[0].terms()], config.weights)
        return depth, trace
    t0 = time.perf_counter()
    trace = OptTrace()
    depth = DepthMap(_pool(init.clamped().values, k), init.d_min, init.d_max)
    for li in range(levels):
        factor = 2 ** (levels - 1 - li)
        level_bundle = bundle.pooled(factor)
        if li > 0:
            depth = upsample_depth(depth, level_bundle.shape)
        depth, lt = refine_depth(depth, level_bundle, config, li, iteration_offset=li * config.iterations)
        trace.extend(lt)
    trace.multiscale = total_loss_multiscale([b.terms() for b in trace.level_breakdowns], config.weights)
    trace.wall_time = time.perf_counter() - t0
    return depth, trace


def optimize(init: DepthMap, bundle: SceneBundle, config: OptimizeConfig) -> tuple[DepthMap, OptTrace]:
    """Entry point: coarse-to-fine when more than one level is configured."""
    return coarse_to_fine(init, bundle, config)


def depth_error(depth: DepthMap, gt: DepthMap) -> float:
    """Mean absolute depth error over pixels valid in both maps."""
    m = depth.valid & gt.valid
    return float(np.mean(np.abs(depth.values - gt.values)[m]))
