"""Procedural multi-view scenes rendered by ray casting, with ground-truth depth.

With the default ``look_at = (0, 0, ring_radius)`` the world frame coincides
with the reference camera (view 0): x right, y down, z forward. Other views
sit on a ring around ``look_at`` and all point at it. Textures are smooth solid functions of the world point so that every
view sees the same surface color; shading is Lambertian, hence
view-independent.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .augment import gamma_correct
from .geometry import (
    Camera,
    CameraIntrinsics,
    DepthMap,
    look_at_pose,
    pixel_grid,
    reproject,
    sample_bilinear,
    warp_grid,
)

TEXTURES = ("checker", "noise", "stripes", "flat")


@dataclass(frozen=True)
class Texture:
    """Smooth procedural albedo.

    ``period`` is in scene units. ``checker`` is a product of sinusoids,
    ``stripes`` a single sinusoid along x, ``noise`` smooth 3-D value noise
    drawn independently per color channel.
    """

    kind: str = "checker"
    period: float = 1.3
    contrast: float = 0.8
    color: tuple[float, float, float] = (0.8, 0.7, 0.6)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TEXTURES:
            raise ValueError(f"unknown texture {self.kind!r}; choose from {TEXTURES}")
        if self.period <= 0:
            raise ValueError("texture period must be positive")

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """RGB albedo in [0, 1] for world points of shape (..., 3)."""
        w = 2 * np.pi / self.period
        x, y, z = points[..., 0], points[..., 1], points[..., 2]
        if self.kind == "checker":
            pattern = np.sin(w * x) * np.sin(w * y) * 0.7 + 0.3 * np.sin(w * 0.5 * (x + z))
        elif self.kind == "stripes":
            pattern = np.sin(w * x + 0.5 * w * z)
        elif self.kind == "noise":
            # independent noise per color channel
            pattern = np.stack(
                [2 * _value_noise(points / self.period, self.seed * 3 + c) - 1 for c in range(3)], axis=-1
            )
            value = 0.5 + 0.5 * self.contrast * np.clip(pattern, -1, 1)
            return value * np.asarray(self.color)
        else:
            pattern = np.zeros_like(x)
        value = 0.5 + 0.5 * self.contrast * np.clip(pattern, -1, 1)
        return value[..., None] * np.asarray(self.color)


def _lattice_hash(ix, iy, iz, seed):
    h = (ix * 73856093) ^ (iy * 19349663) ^ (iz * 83492791) ^ (seed * 2654435761)
    h = (h ^ (h >> 13)) * 1274126177
    return ((h ^ (h >> 16)) & 0xFFFF) / 65535.0


def _value_noise(p: np.ndarray, seed: int) -> np.ndarray:
    """C2-smooth value noise in [0, 1] (quintic interpolation of lattice values)."""
    base = np.floor(p).astype(np.int64)
    f = p - base
    s = f * f * f * (f * (f * 6 - 15) + 10)
    out = np.zeros(p.shape[:-1])
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                wgt = (
                    (s[..., 0] if dx else 1 - s[..., 0])
                    * (s[..., 1] if dy else 1 - s[..., 1])
                    * (s[..., 2] if dz else 1 - s[..., 2])
                )
                out += wgt * _lattice_hash(base[..., 0] + dx, base[..., 1] + dy, base[..., 2] + dz, seed)
    return out


@dataclass(frozen=True)
class Plane:
    point: tuple[float, float, float]
    normal: tuple[float, float, float]
    texture: Texture = field(default_factory=Texture)

    def intersect(self, origin, dirs):
        n = np.asarray(self.normal, float)
        n = n / np.linalg.norm(n)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((np.asarray(self.point, float) - origin) @ n) / denom
        t = np.where(np.abs(denom) > 1e-12, t, np.inf)
        normals = np.broadcast_to(np.where((denom < 0)[..., None], n, -n), dirs.shape)
        return t, normals


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    texture: Texture = field(default_factory=lambda: Texture("noise", period=0.5, color=(0.6, 0.75, 0.9)))

    def intersect(self, origin, dirs):
        c = np.asarray(self.center, float)
        oc = origin - c
        a = np.sum(dirs * dirs, axis=-1)
        b = 2 * dirs @ oc
        cc = oc @ oc - self.radius**2
        disc = b * b - 4 * a * cc
        sq = np.sqrt(np.maximum(disc, 0))
        t0 = (-b - sq) / (2 * a)
        t1 = (-b + sq) / (2 * a)
        t = np.where(t0 > 1e-9, t0, t1)
        t = np.where(disc >= 0, t, np.inf)
        pts = origin + np.where(np.isfinite(t), t, 0.0)[..., None] * dirs
        normals = (pts - c) / self.radius
        return t, normals


@dataclass(frozen=True)
class Perturbation:
    gamma: float = 1.0
    brightness: float = 1.0
    noise_sigma: float = 0.0


@dataclass(frozen=True)
class SceneSpec:
    """Scene description.

    The background plane is mandatory: ``primitives[0]`` must be a plane that
    every camera ray hits. Views are placed at angles
    ``0, +step, -step, +2 step, ...`` (degrees) about the vertical axis through
    ``look_at``; view 0 is the identity camera when ``look_at`` is
    ``(0, 0, ring_radius)``.
    """

    primitives: tuple = (Plane((0.0, 0.0, 4.0), (0.0, 0.0, -1.0)),)
    n_views: int = 3
    ring_radius: float = 4.0
    look_at: tuple[float, float, float] = (0.0, 0.0, 4.0)
    angular_step: float = 5.0
    width: int = 64
    height: int = 64
    focal: float = 64.0
    perturbations: tuple = ()
    light_dir: tuple[float, float, float] = (0.3, 0.5, 1.0)
    ambient: float = 0.35
    textureless: bool = False
    depth_margin: float = 1.3
    seed: int = 0

    def __post_init__(self):
        if not self.primitives or not isinstance(self.primitives[0], Plane):
            raise ValueError("the first primitive must be a background plane")
        if self.n_views < 2:
            raise ValueError("need at least two views")
        if self.width < 2 or self.height < 2 or self.focal <= 0:
            raise ValueError("invalid image size or focal length")
        if self.perturbations and len(self.perturbations) != self.n_views:
            raise ValueError("one perturbation per view is required")
        if self.depth_margin < 1:
            raise ValueError("depth_margin must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["primitives"] = [
            {"type": type(p).__name__.lower(), **asdict(p)} for p in self.primitives
        ]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        given = "primitives" in d
        prims = []
        for p in d.pop("primitives", []):
            p = dict(p)
            kind = p.pop("type")
            if "texture" in p:
                tex = dict(p["texture"])
                if "color" in tex:
                    tex["color"] = tuple(tex["color"])
                p["texture"] = Texture(**tex)
            for k in ("point", "normal", "center"):
                if k in p:
                    p[k] = tuple(p[k])
            if kind == "plane":
                prims.append(Plane(**p))
            elif kind == "sphere":
                prims.append(Sphere(**p))
            else:
                raise ValueError(f"unknown primitive type {kind!r}")
        if given:
            d["primitives"] = tuple(prims)
        if "perturbations" in d:
            d["perturbations"] = tuple(Perturbation(**x) for x in d["perturbations"])
        for k in ("look_at", "light_dir"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SceneSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class RenderedScene:
    images: list[np.ndarray]
    depths: list[DepthMap]
    cameras: list[Camera]
    d_min: float
    d_max: float

    @property
    def n_views(self) -> int:
        return len(self.images)


def ring_cameras(spec: SceneSpec):
    """Shared intrinsics and the world-to-camera pose of every view."""
    intr = CameraIntrinsics(spec.focal, spec.focal, (spec.width - 1) / 2, (spec.height - 1) / 2)
    target = np.asarray(spec.look_at, float)
    poses = []
    for i in range(spec.n_views):
        k = (i + 1) // 2
        angle = np.deg2rad(spec.angular_step * k * (1 if i % 2 else -1))
        center = target + spec.ring_radius * np.array([np.sin(angle), 0.0, -np.cos(angle)])
        poses.append(look_at_pose(center, target))
    return intr, poses


def _cast(spec: SceneSpec, intr: CameraIntrinsics, pose) -> tuple[np.ndarray, np.ndarray]:
    h, w = spec.height, spec.width
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    ray_cam = np.stack([(xs - intr.cx) / intr.fx, (ys - intr.cy) / intr.fy, np.ones_like(xs)], -1)
    r = pose.rotation
    origin = -r.T @ pose.translation
    dirs = ray_cam @ r  # rows of R are camera axes in world coords
    best_t = np.full((h, w), np.inf)
    color = np.zeros((h, w, 3))
    light = np.asarray(spec.light_dir, float)
    light = light / np.linalg.norm(light)
    for prim in spec.primitives:
        t, normals = prim.intersect(origin, dirs)
        hit = (t > 1e-9) & (t < best_t)
        if not hit.any():
            continue
        pts = origin + np.where(hit, t, 0.0)[..., None] * dirs
        normals = np.where(hit[..., None], normals, 0.0)
        tex = prim.texture
        if spec.textureless:
            tex = Texture("flat", color=tex.color)
        albedo = tex(pts)
        shade = spec.ambient + (1 - spec.ambient) * np.clip(-(normals @ light), 0, 1)
        color = np.where(hit[..., None], albedo * shade[..., None], color)
        best_t = np.where(hit, t, best_t)
    if not np.all(np.isfinite(best_t)):
        raise ValueError("some camera rays miss all geometry; enlarge the background plane")
    # t is camera-frame depth because ray_cam has unit z
    return np.clip(color, 0.0, 1.0), best_t


def render_scene(spec: SceneSpec) -> RenderedScene:
    """Ray-cast every view; returns images, ground-truth depths and cameras."""
    intr, poses = ring_cameras(spec)
    renders = [_cast(spec, intr, pose) for pose in poses]
    all_depth = np.concatenate([d.ravel() for _, d in renders])
    d_min = float(all_depth.min() / spec.depth_margin)
    d_max = float(all_depth.max() * spec.depth_margin)
    cams = [Camera(intr, pose, d_min, d_max) for pose in poses]
    return RenderedScene(
        images=[img for img, _ in renders],
        depths=[DepthMap(d, d_min, d_max) for _, d in renders],
        cameras=cams,
        d_min=d_min,
        d_max=d_max,
    )


def perturb_views(scene: RenderedScene, perturbations, seed: int = 0) -> RenderedScene:
    """Apply per-view gamma, brightness and noise to the images only."""
    if not perturbations:
        return scene
    if len(perturbations) != scene.n_views:
        raise ValueError("one perturbation per view is required")
    seqs = np.random.SeedSequence(seed).spawn(scene.n_views)
    images = []
    for img, p, ss in zip(scene.images, perturbations, seqs):
        out = gamma_correct(img, p.gamma) * p.brightness
        if p.noise_sigma > 0:
            out = out + np.random.default_rng(ss).normal(0.0, p.noise_sigma, out.shape)
        images.append(np.clip(out, 0.0, 1.0))
    return RenderedScene(images, scene.depths, scene.cameras, scene.d_min, scene.d_max)


def render(spec: SceneSpec) -> RenderedScene:
    """Render and apply the spec's perturbations."""
    return perturb_views(render_scene(spec), spec.perturbations, spec.seed)


def visible_mask(scene: RenderedScene, src: int, ref: int = 0, rel_tol: float = 1e-3) -> np.ndarray:
    """Reference pixels whose ground-truth point is not occluded in view ``src``."""
    cr, cs = scene.cameras[ref], scene.cameras[src]
    d = scene.depths[ref]
    rel = cs.relative_to(cr)
    rep = reproject(pixel_grid(*d.shape), d.values, cr.intrinsics, cs.intrinsics, rel, scene.depths[src].shape)
    # nearest-neighbour would alias at silhouettes; bilinear of src depth is exact on planes
    s = sample_bilinear(scene.depths[src].values, rep.uv).values[..., 0]
    return rep.valid & (np.abs(s - rep.source_depth) <= rel_tol * rep.source_depth)


def consistency_residual(scene: RenderedScene, src: int = 1, ref: int = 0, occlusion_aware: bool = True) -> float:
    """Mean absolute photometric residual of ``src`` warped to ``ref`` at GT depth."""
    cr, cs = scene.cameras[ref], scene.cameras[src]
    warped, mask = warp_grid(scene.images[src], scene.depths[ref], cr.intrinsics, cs.intrinsics, cs.relative_to(cr))
    m = mask > 0
    if occlusion_aware:
        m &= visible_mask(scene, src, ref)
    if not m.any():
        return 0.0
    return float(np.mean(np.abs(warped - scene.images[ref])[m]))


def plane_scene(n_views: int = 3, size: int = 64, seed: int = 0, **kw) -> SceneSpec:
    """A single textured fronto-parallel plane."""
    tex = Texture("noise", period=0.65, seed=seed)
    return SceneSpec(
        primitives=(Plane((0.0, 0.0, 4.0), (0.0, 0.0, -1.0), tex),),
        n_views=n_views, width=size, height=size, focal=float(size), seed=seed, **kw,
    )


def plane_sphere_scene(n_views: int = 3, size: int = 64, seed: int = 0, **kw) -> SceneSpec:
    """Textured background plane with a textured sphere in front of it."""
    rng = np.random.default_rng(seed)
    cx, cy = rng.uniform(-0.4, 0.4, 2)
    back = Plane((0.0, 0.0, 5.0), (0.0, 0.0, -1.0), Texture("noise", period=0.8, seed=seed))
    ball = Sphere(
        (float(cx), float(cy), 3.6), float(rng.uniform(0.7, 0.9)),
        Texture("noise", period=0.5, color=(0.6, 0.75, 0.9), seed=seed + 1),
    )
    return SceneSpec(
        primitives=(back, ball), n_views=n_views, width=size, height=size,
        focal=float(size), look_at=(0.0, 0.0, 4.0), seed=seed, **kw,
    )
