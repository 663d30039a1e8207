"""Pinhole cameras, plane-sweep warping and depth-hypothesis sampling.

Pixel convention: pixel ``(x, y)`` has its centre at integer coordinates, so
column ``x`` spans ``[x - 0.5, x + 0.5)``.  Resampling to a different
resolution uses the half-pixel (area) convention, i.e. ``x' = s (x + 0.5) - 0.5``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_ORTHO_TOL = 1e-9
_EDGE_TOL = 1e-9  # coordinates this close outside the image count as on its edge


@dataclass(frozen=True)
class Camera:
    """Pinhole camera with a world-to-camera rigid transform."""

    K: np.ndarray
    T: np.ndarray
    size: tuple[int, int]  # (H, W)

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.float64)
        T = np.asarray(self.T, dtype=np.float64)
        if K.shape != (3, 3) or T.shape != (4, 4):
            raise ValueError("K must be 3x3 and T must be 4x4")
        if np.any(np.abs(np.tril(K, -1)) > 0) or K[2, 2] <= 0 or K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError("K must be upper-triangular with a positive diagonal")
        R = T[:3, :3]
        if np.max(np.abs(R.T @ R - np.eye(3))) > _ORTHO_TOL or np.linalg.det(R) <= 0:
            raise ValueError("rotation block of T is not a proper rotation")
        if not np.allclose(T[3], [0, 0, 0, 1]):
            raise ValueError("last row of T must be [0, 0, 0, 1]")
        H, W = (int(v) for v in self.size)
        if H <= 0 or W <= 0:
            raise ValueError("image size must be positive")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "size", (H, W))

    @property
    def R(self) -> np.ndarray:
        return self.T[:3, :3]

    @property
    def t(self) -> np.ndarray:
        return self.T[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.R.T @ self.t

    def scaled(self, scale: float) -> "Camera":
        """Camera for the same view rendered at ``scale`` times the resolution."""
        H, W = self.size
        K = self.K.copy()
        K[0, 0] *= scale
        K[0, 1] *= scale
        K[1, 1] *= scale
        K[0, 2] = scale * (K[0, 2] + 0.5) - 0.5
        K[1, 2] = scale * (K[1, 2] + 0.5) - 0.5
        return Camera(K, self.T, (int(round(H * scale)), int(round(W * scale))))

    def backproject(self, depth: np.ndarray, x=None, y=None) -> np.ndarray:
        """World points (..., 3) of pixels ``(x, y)`` at z-depth ``depth``.

        With ``x``/``y`` omitted the full pixel grid is used and ``depth`` must be H x W.
        """
        depth = np.asarray(depth, dtype=np.float64)
        if x is None:
            y, x = pixel_grid(depth.shape)
        rays = np.stack([x, y, np.ones_like(np.asarray(x, dtype=np.float64))], axis=-1)
        cam = (rays @ np.linalg.inv(self.K).T) * depth[..., None]
        return (cam - self.t) @ self.R  # R^T (X_c - t)

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Project world points (..., 3) to pixel x, y and camera-frame z."""
        cam = np.asarray(points, dtype=np.float64) @ self.R.T + self.t
        z = cam[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uvw = cam @ self.K.T
            x = uvw[..., 0] / z
            y = uvw[..., 1] / z
        return x, y, z


def pixel_grid(shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    H, W = shape
    y, x = np.mgrid[0:H, 0:W].astype(np.float64)
    return y, x


@dataclass
class PixelMap:
    """Fractional source-image coordinates for every reference pixel."""

    x: np.ndarray
    y: np.ndarray
    mask: np.ndarray


@dataclass
class HypothesisVolume:
    """Per-pixel, strictly increasing depth hypotheses (M x H x W)."""

    depths: np.ndarray
    stage: int = 0

    def __post_init__(self):
        d = np.asarray(self.depths, dtype=np.float64)
        if d.ndim != 3 or d.shape[0] < 2:
            raise ValueError("hypotheses must be M x H x W with M >= 2")
        if not np.all(d > 0):
            raise ValueError("hypothesis depths must be positive")
        if not np.all(np.diff(d, axis=0) > 0):
            raise ValueError("hypothesis depths must be strictly increasing")
        self.depths = d

    @property
    def M(self) -> int:
        return self.depths.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.depths.shape[1:]


@dataclass
class DepthMap:
    """H x W depths with validity mask and optional confidence."""

    values: np.ndarray
    mask: np.ndarray | None = None
    confidence: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.mask is None:
            self.mask = np.isfinite(self.values) & (self.values > 0)
        else:
            self.mask = np.asarray(self.mask, dtype=bool) & np.isfinite(self.values) & (self.values > 0)
        if self.confidence is not None:
            self.confidence = np.asarray(self.confidence, dtype=np.float64)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def warp_coordinates(ref: Camera, src: Camera, depths: np.ndarray) -> PixelMap:
    """Source-image coordinates of every reference pixel placed at ``depths``.

    Each reference pixel is back-projected to its depth and re-projected into
    ``src``; for fronto-parallel planes this equals the plane-induced homography
    ``d K_src T_src T_ref^-1 K_ref^-1``.
    """
    depths = np.asarray(depths, dtype=np.float64)
    if not np.all(depths > 0):
        raise ValueError("depths must be strictly positive")
    for cam in (ref, src):
        if abs(np.linalg.det(cam.K)) < 1e-12:
            raise ValueError("intrinsics are not invertible")
    points = ref.backproject(depths)
    x, y, z = src.project(points)
    H, W = src.size
    with np.errstate(invalid="ignore"):
        mask = (z > 0) & _in_bounds(x, y, H, W)
    mask &= np.isfinite(x) & np.isfinite(y)
    return PixelMap(x, y, mask)


def _in_bounds(x, y, H: int, W: int):
    t = _EDGE_TOL
    return (x >= -t) & (x <= W - 1 + t) & (y >= -t) & (y <= H - 1 + t)


def sample_with_bounds_mask(image: np.ndarray, pmap: PixelMap) -> tuple[np.ndarray, np.ndarray]:
    """Bilinearly sample ``image`` (..., H, W) at the coordinates of ``pmap``.

    Entries outside the image (or masked in ``pmap``) are 0 with mask False.
    """
    image = np.asarray(image, dtype=np.float64)
    H, W = image.shape[-2:]
    x, y = pmap.x, pmap.y
    if x.shape != y.shape or x.shape != pmap.mask.shape:
        raise ValueError("pixel map components differ in shape")
    with np.errstate(invalid="ignore"):
        mask = pmap.mask & _in_bounds(x, y, H, W)
    xs = np.clip(np.where(mask, x, 0.0), 0, W - 1)
    ys = np.clip(np.where(mask, y, 0.0), 0, H - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, max(W - 2, 0))
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, max(H - 2, 0))
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = xs - x0
    fy = ys - y0
    out = (
        image[..., y0, x0] * ((1 - fx) * (1 - fy))
        + image[..., y0, x1] * (fx * (1 - fy))
        + image[..., y1, x0] * ((1 - fx) * fy)
        + image[..., y1, x1] * (fx * fy)
    )
    out = np.where(mask, out, 0.0)
    return out, mask


def resize_bilinear(image: np.ndarray, shape: tuple[int, int], mask: np.ndarray | None = None):
    """Half-pixel-convention bilinear resize of ``image`` (..., H, W).

    With a ``mask``, interpolation is normalised by the valid weights and the
    returned mask marks outputs that received any valid weight.
    """
    image = np.asarray(image, dtype=np.float64)
    H, W = image.shape[-2:]
    Ho, Wo = shape
    y, x = pixel_grid((Ho, Wo))
    xs = np.clip((x + 0.5) * (W / Wo) - 0.5, 0, W - 1)
    ys = np.clip((y + 0.5) * (H / Ho) - 0.5, 0, H - 1)
    pmap = PixelMap(xs, ys, np.ones((Ho, Wo), dtype=bool))
    if mask is None:
        out, _ = sample_with_bounds_mask(image, pmap)
        return out
    m = np.asarray(mask, dtype=np.float64)
    num, _ = sample_with_bounds_mask(np.where(mask, image, 0.0), pmap)
    den, _ = sample_with_bounds_mask(m, pmap)
    valid = den > 1e-12
    out = np.where(valid, num / np.where(valid, den, 1.0), 0.0)
    return out, valid


def sample_hypotheses_uniform(d_min: float, interval: float, M: int, shape: tuple[int, int],
                              stage: int = 0) -> HypothesisVolume:
    """``M`` evenly spaced depths starting at ``d_min``, identical at every pixel."""
    if d_min <= 0 or interval <= 0:
        raise ValueError("d_min and interval must be positive")
    if M < 2:
        raise ValueError("need at least two hypotheses")
    planes = d_min + interval * np.arange(M, dtype=np.float64)
    depths = np.broadcast_to(planes[:, None, None], (M, *shape)).copy()
    return HypothesisVolume(depths, stage)


def refine_hypotheses(prev_depth: DepthMap, M: int, interval: float,
                      shape: tuple[int, int] | None = None,
                      fallback: tuple[float, float] | None = None,
                      min_depth: float | None = None, stage: int = 0) -> HypothesisVolume:
    """Hypotheses centred on the (bilinearly upsampled) previous-stage depth.

    ``d_i = D_prev + (i - (M - 1) / 2) * interval``.  A range that would reach
    below ``min_depth`` is shifted up so its first plane sits at ``min_depth``,
    keeping the spacing.  Pixels without a previous estimate are swept
    uniformly over ``fallback = (d_min, d_max)``.
    """
    if interval <= 0:
        raise ValueError("interval must be positive")
    if M < 2:
        raise ValueError("need at least two hypotheses")
    shape = tuple(shape) if shape is not None else prev_depth.shape
    if shape == prev_depth.shape:
        center, valid = prev_depth.values.copy(), prev_depth.mask.copy()
    else:
        center, valid = resize_bilinear(prev_depth.values, shape, prev_depth.mask)
    if min_depth is None:
        min_depth = interval * 1e-3
    if min_depth <= 0:
        raise ValueError("min_depth must be positive")
    offsets = (np.arange(M, dtype=np.float64) - (M - 1) / 2.0) * interval
    depths = center[None] + offsets[:, None, None]
    shift = np.maximum(min_depth - depths[0], 0.0)
    depths = depths + shift[None]
    if not np.all(valid):
        if fallback is None:
            raise ValueError("invalid previous depths need a fallback range")
        lo, hi = fallback
        sweep = lo + (hi - lo) * np.arange(M, dtype=np.float64) / (M - 1)
        depths = np.where(valid[None], depths, sweep[:, None, None])
    return HypothesisVolume(depths, stage)


def look_at(center, target, up=(0.0, -1.0, 0.0)) -> np.ndarray:
    """World-to-camera transform for a camera at ``center`` looking at ``target``.

    Camera axes follow the usual vision convention: x right, y down, z forward.
    """
    center = np.asarray(center, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - center
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = -R @ center
    return T
