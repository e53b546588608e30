"""Point-cloud accuracy / completeness evaluation and depth back-projection."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import Camera, DepthMap, backproject

DEFAULT_OUTLIER_CAP = 20.0


class EmptyCloudError(ValueError):
    """A point cloud required for evaluation has no points."""


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    completeness: float
    overall: float
    outlier_cap: float

    def to_dict(self) -> dict:
        return asdict(self)


def depth_to_points(depth: DepthMap, camera: Camera, stride: int = 1, colors: np.ndarray | None = None):
    """World points for every ``stride``-th valid pixel (rows and columns).

    Returns ``points`` (M, 3), or ``(points, colors)`` when an image is given.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    sel = np.zeros(depth.shape, dtype=bool)
    sel[::stride, ::stride] = True
    sel &= depth.valid
    if not sel.any():
        raise EmptyCloudError("depth map has no valid pixels to back-project")
    cam_pts = backproject(np.where(depth.valid, depth.values, 1.0), camera.intrinsics)[sel]
    world = camera.extrinsic.inverse().apply(cam_pts)
    if colors is None:
        return world
    return world, np.asarray(colors)[sel]


def _check_cloud(name: str, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyCloudError(f"{name} point cloud is empty")
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"{name} point cloud has non-finite coordinates")
    return pts


def nearest_distances_brute(query: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """All-pairs nearest-neighbour distances (O(n*m) memory in chunks)."""
    query = _check_cloud("query", query)
    ref = _check_cloud("reference", ref)
    out = np.empty(len(query))
    for s in range(0, len(query), 512):
        q = query[s : s + 512]
        d2 = np.sum((q[:, None, :] - ref[None, :, :]) ** 2, axis=-1)
        out[s : s + 512] = np.sqrt(d2.min(axis=1))
    return out


class GridIndex:
    """Uniform-grid spatial hash over a fixed point set.

    A query visits occupied cells in order of their box distance to the query
    and stops once that lower bound reaches the best distance found.
    """

    def __init__(self, points: np.ndarray, cell: float | None = None):
        self.points = _check_cloud("reference", points)
        lo, hi = self.points.min(0), self.points.max(0)
        if cell is None:
            extent = max(float(np.max(hi - lo)), 1e-12)
            # about two points per occupied cell for surface-like clouds
            cell = extent / max(1.0, math.sqrt(len(self.points) / 2))
        self.cell = float(cell)
        keys = np.floor((self.points - lo) / self.cell).astype(np.int64)
        cells, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        self.sorted_points = self.points[np.argsort(inverse, kind="stable")]
        self.starts = np.concatenate([[0], np.cumsum(np.bincount(inverse))])
        self.cell_lo = lo + cells * self.cell
        self.cell_hi = self.cell_lo + self.cell

    @property
    def n_occupied(self) -> int:
        return len(self.cell_lo)

    def query(self, q: np.ndarray, max_distance: float = math.inf) -> float:
        """Distance to the nearest indexed point, or ``max_distance`` if none is closer."""
        gap = np.maximum(np.maximum(self.cell_lo - q, q - self.cell_hi), 0.0)
        bound = np.sqrt(np.sum(gap * gap, axis=1))
        best = math.inf
        for c in np.argsort(bound, kind="stable"):
            if bound[c] >= min(best, max_distance):
                break
            pts = self.sorted_points[self.starts[c] : self.starts[c + 1]]
            best = min(best, float(np.sqrt(np.min(np.sum((pts - q) ** 2, axis=1)))))
        return min(best, max_distance)

    def distances(self, queries: np.ndarray, max_distance: float = math.inf) -> np.ndarray:
        queries = _check_cloud("query", queries)
        return np.array([self.query(q, max_distance) for q in queries])


def nearest_distances(query, ref, max_distance: float = math.inf, method: str = "grid") -> np.ndarray:
    if method == "brute":
        return np.minimum(nearest_distances_brute(query, ref), max_distance)
    if method == "grid":
        return GridIndex(ref).distances(query, max_distance)
    raise ValueError(f"unknown method {method!r}")


def evaluate(recon, gt, outlier_cap: float = DEFAULT_OUTLIER_CAP, method: str = "grid") -> EvalResult:
    """Mean capped nearest-neighbour distances in both directions."""
    if not outlier_cap > 0:
        raise ValueError("outlier_cap must be positive")
    recon = _check_cloud("reconstruction", recon)
    gt = _check_cloud("ground-truth", gt)
    acc = float(np.mean(nearest_distances(recon, gt, outlier_cap, method)))
    comp = float(np.mean(nearest_distances(gt, recon, outlier_cap, method)))
    return EvalResult(acc, comp, (acc + comp) / 2, float(outlier_cap))
