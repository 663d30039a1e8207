"""Depth-map filtering, multi-view fusion and point-cloud evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Camera, DepthMap, PixelMap, pixel_grid, sample_with_bounds_mask


@dataclass
class FilterParams:
    conf_threshold: float = 0.3
    min_views: int = 2
    pix_threshold: float = 1.0
    depth_threshold: float = 0.01
    dynamic: bool = False
    dyn_pix_slope: float = 0.25
    dyn_depth_slope: float = 0.0025
    dyn_min_k: int = 2
    dyn_max_k: int = 0  # 0: number of source views

    def __post_init__(self):
        if not 0 <= self.conf_threshold <= 1:
            raise ValueError("confidence threshold must lie in [0, 1]")
        if self.min_views < 1:
            raise ValueError("min_views must be at least 1")
        if min(self.pix_threshold, self.depth_threshold, self.dyn_pix_slope, self.dyn_depth_slope) <= 0:
            raise ValueError("thresholds must be positive")
        if self.dyn_min_k < 1 or self.dyn_max_k < 0:
            raise ValueError("invalid dynamic view-count range")


@dataclass
class PointCloud:
    points: np.ndarray  # N x 3
    colors: np.ndarray  # N x 3 uint8

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.colors is None:
            self.colors = np.zeros((len(self.points), 3), dtype=np.uint8)
        self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        if len(self.colors) != len(self.points):
            raise ValueError("one color per point is required")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")

    def __len__(self):
        return len(self.points)


def photometric_filter(depth: DepthMap, conf_threshold: float) -> DepthMap:
    """Drop pixels whose confidence is below ``conf_threshold``."""
    if depth.confidence is None:
        raise ValueError("depth map carries no confidence")
    mask = depth.mask & (depth.confidence >= conf_threshold)
    return DepthMap(depth.values, mask, depth.confidence)


@dataclass
class ConsistencyCheck:
    """Forward-backward reprojection results of one reference view against V sources."""

    pix_err: np.ndarray  # V x H x W, inf where the check is impossible
    rel_err: np.ndarray  # V x H x W
    src_points: np.ndarray  # V x H x W x 3, world points read from the source depths
    src_x: np.ndarray  # V x H x W
    src_y: np.ndarray

    def consistent(self, pix_threshold: float, depth_threshold: float) -> np.ndarray:
        return (self.pix_err < pix_threshold) & (self.rel_err < depth_threshold)

    def counts(self, pix_threshold: float, depth_threshold: float) -> np.ndarray:
        return self.consistent(pix_threshold, depth_threshold).sum(axis=0)


def geometric_check(ref_cam: Camera, ref_depth: DepthMap,
                    srcs: list[tuple[Camera, DepthMap]]) -> ConsistencyCheck:
    """Project each reference pixel into every source, read the source depth there
    and project it back; record pixel and relative depth discrepancies."""
    H, W = ref_depth.shape
    y, x = pixel_grid((H, W))
    d = np.where(ref_depth.mask, ref_depth.values, 1.0)
    world = ref_cam.backproject(d)
    V = len(srcs)
    pix_err = np.full((V, H, W), np.inf)
    rel_err = np.full((V, H, W), np.inf)
    src_points = np.zeros((V, H, W, 3))
    src_x = np.zeros((V, H, W))
    src_y = np.zeros((V, H, W))
    for v, (cam, depth) in enumerate(srcs):
        xs, ys, zs = cam.project(world)
        with np.errstate(invalid="ignore"):
            pmap = PixelMap(xs, ys, ref_depth.mask & (zs > 0) & np.isfinite(xs) & np.isfinite(ys))
        sampled, inside = sample_with_bounds_mask(depth.values, pmap)
        support, _ = sample_with_bounds_mask(depth.mask.astype(np.float64), pmap)
        ok = inside & (support > 1 - 1e-9) & (sampled > 0)
        xs_ok = np.where(ok, xs, 0.0)
        ys_ok = np.where(ok, ys, 0.0)
        back = cam.backproject(np.where(ok, sampled, 1.0), xs_ok, ys_ok)
        xr, yr, zr = ref_cam.project(back)
        with np.errstate(invalid="ignore"):
            ok &= zr > 0
        pix_err[v] = np.where(ok, np.hypot(xr - x, yr - y), np.inf)
        rel_err[v] = np.where(ok, np.abs(zr - d) / d, np.inf)
        src_points[v] = np.where(ok[..., None], back, 0.0)
        src_x[v], src_y[v] = xs_ok, ys_ok
    return ConsistencyCheck(pix_err, rel_err, src_points, src_x, src_y)


def static_filter(check: ConsistencyCheck, params: FilterParams) -> np.ndarray:
    """Pixels consistent in at least ``min_views`` source views."""
    return check.counts(params.pix_threshold, params.depth_threshold) >= params.min_views


def dynamic_filter(check: ConsistencyCheck, params: FilterParams) -> np.ndarray:
    """Keep a pixel if, for some ``k`` in the configured range, at least ``k`` views
    agree within ``k * dyn_pix_slope`` pixels and ``k * dyn_depth_slope`` relative depth."""
    V = check.pix_err.shape[0]
    k_max = V if params.dyn_max_k == 0 else min(params.dyn_max_k, V)
    keep = np.zeros(check.pix_err.shape[1:], dtype=bool)
    for k in range(params.dyn_min_k, k_max + 1):
        keep |= check.counts(k * params.dyn_pix_slope, k * params.dyn_depth_slope) >= k
    return keep


def geometric_filter(check: ConsistencyCheck, params: FilterParams) -> np.ndarray:
    return dynamic_filter(check, params) if params.dynamic else static_filter(check, params)


def _view_key(cam: Camera):
    return tuple(np.round(cam.T.ravel(), 12)) + tuple(np.round(cam.K.ravel(), 12))


def _to_uint8(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=-1)
    return np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)


def fuse(views: list[tuple[Camera, DepthMap, np.ndarray]],
         params: FilterParams | None = None) -> PointCloud:
    """Fuse per-view depth maps into one point cloud.

    Views are processed in a canonical camera order.  A reference pixel that
    survives (valid, not yet consumed and, with ``params``, geometrically
    consistent) is averaged with the points of its consistent source views;
    the source pixels it matched are consumed and never emitted again.
    """
    order = sorted(range(len(views)), key=lambda i: _view_key(views[i][0]))
    thresholds = params or FilterParams()
    consumed = {i: np.zeros(views[i][1].shape, dtype=bool) for i in order}
    points, colors = [], []
    for i in order:
        cam, depth, image = views[i]
        others = [j for j in order if j != i]
        survive = depth.mask & ~consumed[i]
        if others:
            check = geometric_check(cam, depth, [(views[j][0], views[j][1]) for j in others])
            if params is not None:
                survive &= geometric_filter(check, params)
            agree = check.consistent(thresholds.pix_threshold, thresholds.depth_threshold) & survive[None]
            total = cam.backproject(np.where(depth.mask, depth.values, 1.0))
            n = np.ones(depth.shape)
            for v, j in enumerate(others):
                total = total + np.where(agree[v][..., None], check.src_points[v], 0.0)
                n += agree[v]
                Hs, Ws = views[j][1].shape
                xi = np.clip(np.round(check.src_x[v][agree[v]]).astype(np.int64), 0, Ws - 1)
                yi = np.clip(np.round(check.src_y[v][agree[v]]).astype(np.int64), 0, Hs - 1)
                consumed[j][yi, xi] = True
            fused = total / n[..., None]
        else:
            if params is not None:
                survive[:] = False  # no source view can confirm the depth
            fused = cam.backproject(np.where(depth.mask, depth.values, 1.0))
        consumed[i] |= survive
        points.append(fused[survive])
        colors.append(_to_uint8(image)[survive])
    if not points:
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.uint8))
    return PointCloud(np.concatenate(points), np.concatenate(colors))


def evaluate(recon: PointCloud, gt: PointCloud, dist_cap: float) -> tuple[float, float, float]:
    """Accuracy, completeness and their mean, with nearest distances capped at ``dist_cap``."""
    if dist_cap <= 0:
        raise ValueError("dist_cap must be positive")
    if len(recon) == 0 or len(gt) == 0:
        acc = dist_cap
        comp = dist_cap
    else:
        d_acc, _ = cKDTree(gt.points).query(recon.points)
        d_comp, _ = cKDTree(recon.points).query(gt.points)
        acc = float(np.mean(np.minimum(d_acc, dist_cap)))
        comp = float(np.mean(np.minimum(d_comp, dist_cap)))
    return acc, comp, 0.5 * (acc + comp)
