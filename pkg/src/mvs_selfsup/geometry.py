"""Pinhole cameras, cross-view reprojection and differentiable bilinear warping.

Conventions:
    * Images are float arrays of shape (H, W) or (H, W, C). Pixel (x, y) is the
      array element ``[y, x]`` and samples the continuous coordinate (x, y)
      exactly (no half-pixel offset).
    * Camera frames are x-right, y-down, z-forward.
    * ``CameraPose`` is a rigid map ``X_dst = R @ X_src + t``. A camera's
      extrinsic is world-to-camera; the pose used for warping maps reference
      camera coordinates to source camera coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

MIN_SOURCE_DEPTH = 1e-9
# pixels; identity reprojection can land 1e-14 outside the last column
BOUNDS_TOL = 1e-9
_ORTHO_TOL = 1e-9


def _check_finite(name: str, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError(f"{name}: non-finite input")


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (np.isfinite(self.cx) and np.isfinite(self.cy)):
            raise ValueError("principal point must be finite")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @classmethod
    def from_matrix(cls, k: np.ndarray) -> "CameraIntrinsics":
        k = np.asarray(k, dtype=float)
        return cls(float(k[0, 0]), float(k[1, 1]), float(k[0, 2]), float(k[1, 2]))

    def pooled(self, factor: int) -> "CameraIntrinsics":
        """Intrinsics of the image average-pooled by ``factor``.

        Pooled pixel k covers full-resolution pixels ``k*factor ... k*factor +
        factor - 1``, so its centre is ``k*factor + (factor - 1)/2``.
        """
        off = (factor - 1) / 2
        return CameraIntrinsics(
            self.fx / factor, self.fy / factor, (self.cx - off) / factor, (self.cy - off) / factor
        )


@dataclass(frozen=True)
class CameraPose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        _check_finite("CameraPose", r, t)
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "CameraPose":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "CameraPose":
        rt = self.rotation.T
        return CameraPose(rt, -rt @ self.translation)

    def compose(self, other: "CameraPose") -> "CameraPose":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return CameraPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        return points @ self.rotation.T + self.translation


@dataclass(frozen=True)
class Camera:
    """A calibrated view: intrinsics, world-to-camera extrinsic and depth range."""

    intrinsics: CameraIntrinsics
    extrinsic: CameraPose
    depth_min: float
    depth_max: float

    def __post_init__(self):
        if not (0 < self.depth_min < self.depth_max):
            raise ValueError(
                f"invalid depth range [{self.depth_min}, {self.depth_max}]"
            )

    def relative_to(self, ref: "Camera") -> CameraPose:
        """Pose mapping ``ref`` camera coordinates into this camera's coordinates."""
        return self.extrinsic.compose(ref.extrinsic.inverse())

    def pooled(self, factor: int) -> "Camera":
        return Camera(self.intrinsics.pooled(factor), self.extrinsic, self.depth_min, self.depth_max)


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel depth with an explicit validity flag.

    If ``valid`` is omitted it is derived from finiteness and the depth range.
    An explicit ``valid`` must not flag out-of-range values as valid.
    """

    values: np.ndarray
    d_min: float
    d_max: float
    valid: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.size == 0:
            raise ValueError(f"depth values must be a non-empty 2-D array, got {v.shape}")
        if not (0 < self.d_min < self.d_max):
            raise ValueError(f"invalid depth range [{self.d_min}, {self.d_max}]")
        with np.errstate(invalid="ignore"):
            in_range = np.isfinite(v) & (v >= self.d_min) & (v <= self.d_max)
        if self.valid is None:
            valid = in_range
        else:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != v.shape:
                raise ValueError("valid mask shape does not match depth values")
            if np.any(valid & ~in_range):
                raise ValueError("pixels flagged valid lie outside [d_min, d_max]")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def with_values(self, values: np.ndarray) -> "DepthMap":
        """Same range, validity recomputed from the new values."""
        return DepthMap(values, self.d_min, self.d_max)

    def clamped(self) -> "DepthMap":
        return DepthMap(np.clip(self.values, self.d_min, self.d_max), self.d_min, self.d_max)


class PixelCorrespondence(NamedTuple):
    source_uv: np.ndarray
    valid: bool


class Reprojection(NamedTuple):
    """Dense reprojection of a reference lattice into a source view.

    ``uv`` has shape (H, W, 2); ``duv_ddepth`` is its derivative with respect
    to the reference depth; ``valid`` flags positive source depth and
    in-bounds landing.
    """

    uv: np.ndarray
    duv_ddepth: np.ndarray
    valid: np.ndarray
    source_depth: np.ndarray


def pixel_grid(height: int, width: int) -> np.ndarray:
    """Integer pixel coordinates as an (H, W, 2) array of (x, y)."""
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    return np.stack([xs, ys], axis=-1)


def in_image_bounds(uv: np.ndarray, height: int, width: int) -> np.ndarray:
    """``[0, W-1] x [0, H-1]`` with ``BOUNDS_TOL`` slack for reprojection round-off."""
    u, v = uv[..., 0], uv[..., 1]
    t = BOUNDS_TOL
    return (u >= -t) & (u <= width - 1 + t) & (v >= -t) & (v <= height - 1 + t)


def reproject(
    uv: np.ndarray,
    depth: np.ndarray,
    intr_ref: CameraIntrinsics,
    intr_src: CameraIntrinsics,
    rel_pose: CameraPose,
    src_shape: tuple[int, int],
) -> Reprojection:
    """Vectorized pinhole reprojection with its depth derivative.

    Back-projects ``uv`` (shape (..., 2)) at ``depth`` (shape (...)) into the
    reference camera, maps it with ``rel_pose``, projects with ``intr_src`` and
    divides by the source-camera depth.
    """
    uv = np.asarray(uv, dtype=float)
    depth = np.asarray(depth, dtype=float)
    _check_finite("reproject", uv, depth)
    ray = np.stack(
        [
            (uv[..., 0] - intr_ref.cx) / intr_ref.fx,
            (uv[..., 1] - intr_ref.cy) / intr_ref.fy,
            np.ones(uv.shape[:-1]),
        ],
        axis=-1,
    )
    direction = ray @ rel_pose.rotation.T  # d(X_src)/d(depth)
    x_src = depth[..., None] * direction + rel_pose.translation
    z = x_src[..., 2]
    ok = z > MIN_SOURCE_DEPTH
    z_safe = np.where(ok, z, 1.0)
    u = intr_src.fx * x_src[..., 0] / z_safe + intr_src.cx
    v = intr_src.fy * x_src[..., 1] / z_safe + intr_src.cy
    z2 = z_safe * z_safe
    du = intr_src.fx * (direction[..., 0] * z - x_src[..., 0] * direction[..., 2]) / z2
    dv = intr_src.fy * (direction[..., 1] * z - x_src[..., 1] * direction[..., 2]) / z2
    out_uv = np.stack([u, v], axis=-1)
    duv = np.stack([du, dv], axis=-1)
    valid = ok & in_image_bounds(out_uv, *src_shape)
    out_uv = np.where(ok[..., None], out_uv, 0.0)
    duv = np.where(ok[..., None], duv, 0.0)
    return Reprojection(out_uv, duv, valid, z)


def reproject_pixel(
    uv,
    depth: float,
    intr_ref: CameraIntrinsics,
    intr_src: CameraIntrinsics,
    rel_pose: CameraPose,
    src_shape: tuple[int, int] | None = None,
) -> PixelCorrespondence:
    """Map one reference pixel at ``depth`` to source-image coordinates.

    ``src_shape`` is (height, width) of the source image; when omitted the
    bounds are taken from the source principal point (2*cx+1, 2*cy+1).
    """
    uv = np.asarray(uv, dtype=float)
    if not (np.all(np.isfinite(uv)) and np.isfinite(depth)):
        raise ValueError("reproject_pixel: non-finite input")
    if depth <= 0:
        raise ValueError(f"depth must be positive, got {depth}")
    if src_shape is None:
        src_shape = (int(round(2 * intr_src.cy)) + 1, int(round(2 * intr_src.cx)) + 1)
    r = reproject(uv[None], np.array([depth]), intr_ref, intr_src, rel_pose, src_shape)
    return PixelCorrespondence(r.uv[0], bool(r.valid[0]))


class BilinearSample(NamedTuple):
    """Sampled values (..., C), their (u, v) derivatives, and in-bounds flags."""

    values: np.ndarray
    d_du: np.ndarray
    d_dv: np.ndarray
    in_bounds: np.ndarray


def _as_channels(grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim == 2:
        grid = grid[..., None]
    if grid.ndim != 3 or grid.shape[0] == 0 or grid.shape[1] == 0:
        raise ValueError(f"expected an (H, W) or (H, W, C) grid, got {grid.shape}")
    return grid


def sample_bilinear(grid: np.ndarray, uv: np.ndarray) -> BilinearSample:
    """Dense 4-neighbour bilinear sampling with analytic coordinate derivatives.

    Out-of-bounds samples (outside [0, W-1] x [0, H-1]) return zero values and
    zero derivatives.
    """
    g = _as_channels(grid)
    uv = np.asarray(uv, dtype=float)
    _check_finite("bilinear_sample", uv)
    h, w, _ = g.shape
    u, v = uv[..., 0], uv[..., 1]
    inside = in_image_bounds(uv, h, w)
    x0 = np.clip(np.floor(u), 0, max(w - 2, 0)).astype(int)
    y0 = np.clip(np.floor(v), 0, max(h - 2, 0)).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = np.where(inside, u - x0, 0.0)[..., None]
    ay = np.where(inside, v - y0, 0.0)[..., None]
    v00, v01 = g[y0, x0], g[y0, x1]
    v10, v11 = g[y1, x0], g[y1, x1]
    top = v00 + ax * (v01 - v00)
    bottom = v10 + ax * (v11 - v10)
    values = top + ay * (bottom - top)
    d_du = (1 - ay) * (v01 - v00) + ay * (v11 - v10)
    d_dv = bottom - top
    if w == 1:
        d_du = np.zeros_like(d_du)
    if h == 1:
        d_dv = np.zeros_like(d_dv)
    m = inside[..., None]
    return BilinearSample(values * m, d_du * m, d_dv * m, inside)


def bilinear_sample(grid: np.ndarray, uv) -> tuple[np.ndarray, bool]:
    """Sample ``grid`` at one continuous coordinate (x, y).

    Returns the channel vector and whether the point lies in bounds; an
    out-of-bounds point yields a zero vector.
    """
    s = sample_bilinear(grid, np.asarray(uv, dtype=float)[None])
    return s.values[0], bool(s.in_bounds[0])


class Warp(NamedTuple):
    """Result of warping a source grid onto the reference lattice."""

    warped: np.ndarray
    mask: np.ndarray
    d_du: np.ndarray
    d_dv: np.ndarray
    duv_ddepth: np.ndarray


def warp(
    src: np.ndarray,
    depth_ref: DepthMap,
    intr_ref: CameraIntrinsics,
    intr_src: CameraIntrinsics,
    rel_pose: CameraPose,
) -> Warp:
    """Inverse-warp ``src`` into the reference view, keeping derivatives.

    ``warped`` and the derivative arrays have shape (H, W, C); ``mask`` is a
    float {0, 1} array of shape (H, W).
    """
    g = _as_channels(src)
    h, w = depth_ref.shape
    uv = pixel_grid(h, w)
    depth = np.where(depth_ref.valid, depth_ref.values, 1.0)
    rep = reproject(uv, depth, intr_ref, intr_src, rel_pose, g.shape[:2])
    s = sample_bilinear(g, rep.uv)
    mask = rep.valid & depth_ref.valid
    m = mask[..., None]
    return Warp(s.values * m, mask.astype(float), s.d_du * m, s.d_dv * m, rep.duv_ddepth)


def warp_grid(
    src: np.ndarray,
    depth_ref: DepthMap,
    intr_ref: CameraIntrinsics,
    intr_src: CameraIntrinsics,
    rel_pose: CameraPose,
) -> tuple[np.ndarray, np.ndarray]:
    """Warp a source image or segmentation map onto the reference lattice.

    Returns ``(warped, mask)`` where ``warped`` keeps the input's channel
    layout and ``mask`` is 1 exactly where the correspondence is valid and the
    reference depth is valid.
    """
    src = np.asarray(src, dtype=float)
    if depth_ref.values.ndim != 2:
        raise ValueError("depth map must be 2-D")
    out = warp(src, depth_ref, intr_ref, intr_src, rel_pose)
    warped = out.warped[..., 0] if src.ndim == 2 else out.warped
    return warped, out.mask


def image_gradient(grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences along x and y; the last column/row is zero.

    Accepts (H, W) or (H, W, C) and returns arrays of the same shape.
    """
    g = np.asarray(grid, dtype=float)
    if g.ndim not in (2, 3) or g.shape[0] < 1 or g.shape[1] < 1:
        raise ValueError(f"expected an (H, W) or (H, W, C) grid, got {g.shape}")
    if g.shape[0] < 2 and g.shape[1] < 2:
        raise ValueError("image_gradient needs at least two pixels along one axis")
    gx = np.zeros_like(g)
    gy = np.zeros_like(g)
    gx[:, :-1] = g[:, 1:] - g[:, :-1]
    gy[:-1] = g[1:] - g[:-1]
    return gx, gy


def image_gradient_adjoint(ax: np.ndarray, ay: np.ndarray) -> np.ndarray:
    """Adjoint of ``image_gradient``: maps cotangents of (gx, gy) to the image."""
    out = np.zeros_like(ax)
    out[:, 1:] += ax[:, :-1]
    out[:, :-1] -= ax[:, :-1]
    out[1:] += ay[:-1]
    out[:-1] -= ay[:-1]
    return out


def look_at_pose(center, target, up=(0.0, -1.0, 0.0)) -> CameraPose:
    """World-to-camera pose of a camera at ``center`` looking at ``target``.

    ``up`` is the world direction that should appear upward in the image
    (negative camera y).
    """
    center = np.asarray(center, dtype=float)
    z = np.asarray(target, dtype=float) - center
    z /= np.linalg.norm(z)
    x = np.cross(-np.asarray(up, dtype=float), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    r = np.stack([x, y, z])
    # re-orthonormalize to machine precision
    u, _, vt = np.linalg.svd(r)
    r = u @ vt
    return CameraPose(r, -r @ center)


def backproject(depth: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Camera-frame 3-D points (H, W, 3) for every pixel of a depth array."""
    h, w = depth.shape
    uv = pixel_grid(h, w)
    x = (uv[..., 0] - intr.cx) / intr.fx * depth
    y = (uv[..., 1] - intr.cy) / intr.fy * depth
    return np.stack([x, y, depth], axis=-1)
