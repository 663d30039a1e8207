"""Analytic synthetic scenes with exact ground-truth depth.

Surfaces carry a solid (3-D) texture built from a few random sinusoids, so
every view sees the same pattern and the rendered intensities are exact
point samples of a band-limited function.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fusion import PointCloud
from .geometry import Camera, DepthMap, look_at, pixel_grid

SCENE_KINDS = ("plane", "sphere", "step")


@dataclass
class SceneConfig:
    kind: str = "plane"
    seed: int = 0
    n_views: int = 3
    baseline: float = 3.0
    pullback: float = 3.0
    image_size: tuple[int, int] = (128, 128)
    focal: float = 240.0
    depth_range: tuple[float, float] = (8.0, 16.0)
    distance: float = 10.0
    tilt_deg: float = 20.0
    radius: float = 2.5
    wavelengths: tuple[float, float] = (0.35, 1.2)
    n_waves: int = 6
    noise: float = 0.0

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        self.depth_range = tuple(float(v) for v in self.depth_range)
        self.wavelengths = tuple(float(v) for v in self.wavelengths)
        if self.kind not in SCENE_KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}")
        if self.n_views < 2:
            raise ValueError("need at least two views")
        if min(self.image_size) < 16:
            raise ValueError("image dimensions must be at least 16")
        lo, hi = self.depth_range
        if not 0 < lo < hi:
            raise ValueError("depth range must be positive and increasing")


@dataclass
class Scene:
    images: list[np.ndarray]
    cameras: list[Camera]
    depths: list[DepthMap]
    cloud: PointCloud
    config: SceneConfig = field(repr=False, default=None)


def ring_cameras(cfg: SceneConfig) -> list[Camera]:
    """Reference camera at the origin looking down +z; the others on a ring of
    radius ``baseline`` around the optical axis, ``pullback`` behind the
    reference, all aimed at the point ``(0, 0, distance)``."""
    H, W = cfg.image_size
    K = np.array([[cfg.focal, 0.0, (W - 1) / 2.0], [0.0, cfg.focal, (H - 1) / 2.0], [0.0, 0.0, 1.0]])
    cams = [Camera(K, np.eye(4), (H, W))]
    target = np.array([0.0, 0.0, cfg.distance])
    n_src = cfg.n_views - 1
    for k in range(n_src):
        a = 2.0 * np.pi * k / n_src
        center = np.array([cfg.baseline * np.cos(a), cfg.baseline * np.sin(a), -cfg.pullback])
        cams.append(Camera(K, look_at(center, target), (H, W)))
    return cams


class SolidTexture:
    """Shared luminance pattern ``0.5 + sum_k a_k sin(w_k . X + phi_k)`` with a
    per-channel tint; amplitudes sum to 0.45 so values never clip."""

    def __init__(self, cfg: SceneConfig):
        rng = np.random.default_rng(cfg.seed)
        n = cfg.n_waves
        dirs = rng.normal(size=(n, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        lam = rng.uniform(*cfg.wavelengths, size=n)
        self.freqs = dirs * (2.0 * np.pi / lam)[:, None]
        self.phases = rng.uniform(0.0, 2.0 * np.pi, size=n)
        amp = rng.uniform(0.5, 1.0, size=n)
        self.amps = 0.45 * amp / amp.sum()
        self.tint = rng.uniform(0.8, 1.0, size=3)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        lum = np.sin(points @ self.freqs.T + self.phases) @ self.amps
        return 0.5 + lum[..., None] * self.tint


def _plane(cfg: SceneConfig):
    t = np.deg2rad(cfg.tilt_deg)
    normal = np.array([0.0, np.sin(t), -np.cos(t)])
    return normal, np.array([0.0, 0.0, cfg.distance])


def _ray_plane(origin, dirs, normal, point):
    denom = dirs @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((point - origin) @ normal) / denom
    return np.where(np.abs(denom) > 1e-12, t, np.inf)


def _ray_sphere(origin, dirs, center, radius):
    oc = origin - center
    b = dirs @ oc
    c = oc @ oc - radius**2
    a = np.einsum("...i,...i->...", dirs, dirs)
    disc = b**2 - a * c
    with np.errstate(invalid="ignore"):
        t = (-b - np.sqrt(disc)) / a
    return np.where((disc >= 0) & (t > 0), t, np.inf)


def camera_rays(cam: Camera) -> tuple[np.ndarray, np.ndarray]:
    """World-space origin and per-pixel ray directions scaled so that the ray
    parameter equals the camera-frame z-depth."""
    y, x = pixel_grid(cam.size)
    pix = np.stack([x, y, np.ones_like(x)], axis=-1)
    dirs_cam = pix @ np.linalg.inv(cam.K).T
    return cam.center, dirs_cam @ cam.R


def intersect(cfg: SceneConfig, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Ray parameter of the first visible surface hit (inf when none)."""
    if cfg.kind == "plane":
        t = _ray_plane(origin, dirs, *_plane(cfg))
        return np.where(t > 0, t, np.inf)
    if cfg.kind == "sphere":
        return _ray_sphere(origin, dirs, np.array([0.0, 0.0, cfg.distance]), cfg.radius)
    # step: near plane for world x < 0, far plane for x >= 0, both fronto-parallel
    near = np.array([0.0, 0.0, cfg.distance * 0.9])
    far = np.array([0.0, 0.0, cfg.distance * 1.1])
    nz = np.array([0.0, 0.0, 1.0])
    best = np.full(dirs.shape[:-1], np.inf)
    for point, side in ((near, -1.0), (far, 1.0)):
        t = _ray_plane(origin, dirs, nz, point)
        with np.errstate(invalid="ignore"):
            hit_x = origin[0] + t * dirs[..., 0]
            ok = (t > 0) & np.isfinite(t) & ((hit_x < 0) if side < 0 else (hit_x >= 0))
        best = np.where(ok & (t < best), t, best)
    return best


def render_view(cfg: SceneConfig, cam: Camera, texture: SolidTexture, rng=None):
    origin, dirs = camera_rays(cam)
    t = intersect(cfg, origin, dirs)
    hit = np.isfinite(t)
    points = origin + np.where(hit, t, 0.0)[..., None] * dirs
    image = np.where(hit[..., None], texture(points), 0.0)
    if rng is not None and cfg.noise > 0:
        image = image + cfg.noise * rng.standard_normal(image.shape)
    depth = DepthMap(np.where(hit, t, 0.0), hit)
    return np.clip(image, 0.0, 1.0), depth, points


def covisible(points: np.ndarray, cams: list[Camera], depths: list[DepthMap], rtol: float = 1e-3) -> np.ndarray:
    """True for points that project inside every view and are not occluded there,
    judged against each view's ground-truth depth."""
    from .geometry import PixelMap, sample_with_bounds_mask

    ok = np.ones(points.shape[:-1], dtype=bool)
    for cam, depth in zip(cams, depths):
        x, y, z = cam.project(points)
        with np.errstate(invalid="ignore"):
            pmap = PixelMap(x, y, (z > 0) & np.isfinite(x) & np.isfinite(y))
        d, inside = sample_with_bounds_mask(np.where(depth.mask, depth.values, 0.0), pmap)
        support, _ = sample_with_bounds_mask(depth.mask.astype(np.float64), pmap)
        with np.errstate(invalid="ignore"):
            ok &= inside & (support > 1 - 1e-9) & (np.abs(d - z) <= rtol * z)
    return ok


def render_scene(cfg: SceneConfig) -> Scene:
    """Render every view.  The ground-truth cloud is the part of the views'
    back-projected ground-truth depths that all views observe."""
    cams = ring_cameras(cfg)
    texture = SolidTexture(cfg)
    rng = np.random.default_rng(cfg.seed + 1)
    images, depths, hits = [], [], []
    for cam in cams:
        image, depth, points = render_view(cfg, cam, texture, rng)
        images.append(image)
        depths.append(depth)
        hits.append(points)
    pts, cols = [], []
    for image, depth, points in zip(images, depths, hits):
        keep = depth.mask & covisible(points, cams, depths)
        pts.append(points[keep])
        cols.append(np.round(image[keep] * 255))
    cloud = PointCloud(np.concatenate(pts), np.concatenate(cols))
    return Scene(images, cams, depths, cloud, cfg)


def ray_march_depth(cfg: SceneConfig, cam: Camera, max_steps: int = 400, tol: float = 1e-12) -> np.ndarray:
    """Sphere-traced depth of the sphere scene, independent of the closed form."""
    if cfg.kind != "sphere":
        raise ValueError("ray marching oracle is implemented for the sphere scene")
    origin, dirs = camera_rays(cam)
    norm = np.linalg.norm(dirs, axis=-1)
    unit = dirs / norm[..., None]
    center = np.array([0.0, 0.0, cfg.distance])
    s = np.zeros(norm.shape)
    for _ in range(max_steps):
        p = origin + s[..., None] * unit
        dist = np.linalg.norm(p - center, axis=-1) - cfg.radius
        s = s + np.maximum(dist, 0.0)
        if np.all((dist < tol) | (s > 4 * cfg.distance)):
            break
    p = origin + s[..., None] * unit
    hit = np.linalg.norm(p - center, axis=-1) - cfg.radius < 1e-6
    return np.where(hit, s / norm, 0.0)


def textured_mask(image: np.ndarray, radius: int = 2, threshold: float = 0.02) -> np.ndarray:
    """Pixels whose local intensity standard deviation exceeds ``threshold``."""
    from .volume import _box_sum

    gray = image.mean(axis=-1) if image.ndim == 3 else image
    g = gray[None]
    ones = np.ones_like(g)
    n = _box_sum(_box_sum(ones, radius, 1), radius, 2)
    m1 = _box_sum(_box_sum(g, radius, 1), radius, 2) / n
    m2 = _box_sum(_box_sum(g * g, radius, 1), radius, 2) / n
    return (np.sqrt(np.maximum(m2 - m1**2, 0.0)) > threshold)[0]
