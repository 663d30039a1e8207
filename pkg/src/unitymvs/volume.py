"""Feature volumes, cost aggregation, cost smoothing and score mapping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Camera, HypothesisVolume, sample_with_bounds_mask, warp_coordinates


@dataclass
class FeatureGrid:
    values: np.ndarray  # C x H x W
    mask: np.ndarray  # H x W


@dataclass
class FeatureVolume:
    values: np.ndarray  # M x C x H x W, zero where masked
    mask: np.ndarray  # M x H x W


@dataclass
class CostVolume:
    values: np.ndarray  # M x H x W
    counts: np.ndarray  # contributing views per cell

    @property
    def valid(self) -> np.ndarray:
        return self.counts >= 2


@dataclass
class ScoreVolume:
    """Per-hypothesis scores with a per-cell validity mask (M x H x W)."""

    values: np.ndarray
    valid: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return self.valid.any(axis=0)


def area_downsample(image: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean downsampling of the trailing two axes by an integer factor."""
    if factor == 1:
        return image
    H, W = image.shape[-2:]
    Hc, Wc = H // factor, W // factor
    image = image[..., : Hc * factor, : Wc * factor]
    shaped = image.reshape(*image.shape[:-2], Hc, factor, Wc, factor)
    return shaped.mean(axis=(-3, -1))


def extract_features(image: np.ndarray, scale: float = 1.0) -> FeatureGrid:
    """Fixed 3-channel features: intensity and its x / y central differences.

    ``image`` is H x W or H x W x channels; ``scale`` is the stage resolution
    as a fraction of the input (1/4, 1/2 or 1 in the default cascade).
    """
    image = np.asarray(image, dtype=np.float64)
    if image.size == 0:
        raise ValueError("empty image")
    gray = image.mean(axis=-1) if image.ndim == 3 else image
    factor = int(round(1.0 / scale))
    if factor < 1 or abs(factor * scale - 1.0) > 1e-9:
        raise ValueError("scale must be 1/k for an integer k")
    gray = area_downsample(gray, factor)
    gy, gx = np.gradient(gray)
    values = np.stack([gray, gx, gy])
    return FeatureGrid(values, np.ones(gray.shape, dtype=bool))


def reference_volume(features: FeatureGrid, M: int) -> FeatureVolume:
    values = np.broadcast_to(features.values, (M, *features.values.shape)).copy()
    mask = np.broadcast_to(features.mask, (M, *features.mask.shape)).copy()
    values[~mask[:, None].repeat(values.shape[1], axis=1)] = 0.0
    return FeatureVolume(values, mask)


def build_feature_volume(src_features: FeatureGrid, ref_cam: Camera, src_cam: Camera,
                         hyp: HypothesisVolume) -> FeatureVolume:
    """Warp source features onto every hypothesis plane of the reference view."""
    C, H, W = src_features.values.shape
    if hyp.shape != ref_cam.size or src_cam.size != (H, W):
        raise ValueError("hypotheses, cameras and features disagree in resolution")
    values = np.zeros((hyp.M, C, *hyp.shape))
    mask = np.zeros((hyp.M, *hyp.shape), dtype=bool)
    src_valid = src_features.mask.astype(np.float64)
    for m in range(hyp.M):
        pmap = warp_coordinates(ref_cam, src_cam, hyp.depths[m])
        sampled, inside = sample_with_bounds_mask(src_features.values, pmap)
        if not src_features.mask.all():
            support, _ = sample_with_bounds_mask(src_valid, pmap)
            inside &= support > 1 - 1e-9
        values[m] = np.where(inside, sampled, 0.0)
        mask[m] = inside
    return FeatureVolume(values, mask)


def aggregate_variance(volumes: list[FeatureVolume]) -> CostVolume:
    """Channel-averaged feature variance across the views that see each cell."""
    if len(volumes) < 2:
        raise ValueError("variance aggregation needs at least two views")
    shape = volumes[0].values.shape
    if any(v.values.shape != shape for v in volumes):
        raise ValueError("feature volumes differ in shape")
    # the mean is taken relative to the first view so identical inputs give exact zeros
    anchor = volumes[0].values
    counts = np.zeros(volumes[0].mask.shape, dtype=np.int64)
    total = np.zeros(shape)
    for v in volumes:
        counts += v.mask
        total += np.where(v.mask[:, None], v.values - anchor, 0.0)
    n = np.maximum(counts, 1)[:, None]
    mean = anchor + total / n
    sq = np.zeros(shape)
    for v in volumes:
        sq += np.where(v.mask[:, None], (v.values - mean) ** 2, 0.0)
    cost = (sq / n).mean(axis=1)
    valid = counts >= 2
    return CostVolume(np.where(valid, cost, 0.0), np.where(valid, counts, 0))


def aggregate_adaptive(ref_volume: FeatureVolume, src_volumes: list[FeatureVolume],
                       weights: list[np.ndarray]) -> CostVolume:
    """Weighted squared difference to the reference, divided by ``N - 1``.

    Weights act per view and are not normalised across views.
    """
    if len(src_volumes) < 1:
        raise ValueError("adaptive aggregation needs at least two views")
    if len(weights) != len(src_volumes):
        raise ValueError("one weight volume per source view is required")
    n_src = len(src_volumes)
    cost = np.zeros(ref_volume.mask.shape)
    support = np.zeros(ref_volume.mask.shape)
    counts = np.zeros(ref_volume.mask.shape, dtype=np.int64)
    for vol, w in zip(src_volumes, weights):
        w = np.where(vol.mask & ref_volume.mask, np.asarray(w, dtype=np.float64), 0.0)
        diff = ((vol.values - ref_volume.values) ** 2).mean(axis=1)
        cost += w * diff
        support += w
        counts += (w > 0)
    cost /= n_src
    valid = support > 0
    return CostVolume(np.where(valid, cost, 0.0), np.where(valid, counts + 1, 0))


def heuristic_view_weights(ref_volume: FeatureVolume, src_volume: FeatureVolume,
                           sigma: float | None = None) -> np.ndarray:
    """Photometric-agreement weights ``exp(-|V_i - V_1|^2 / (2 sigma^2))``.

    ``sigma`` defaults to the median feature distance over the valid cells.
    """
    if ref_volume.values.shape != src_volume.values.shape:
        raise ValueError("feature volumes differ in shape")
    mask = ref_volume.mask & src_volume.mask
    dist2 = ((src_volume.values - ref_volume.values) ** 2).sum(axis=1)
    if sigma is None:
        d = np.sqrt(dist2[mask])
        sigma = float(np.median(d)) if d.size else 1.0
        if sigma <= 0:
            sigma = 1.0
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return np.where(mask, np.exp(-dist2 / (2.0 * sigma**2)), 0.0)


def _box_sum(a: np.ndarray, radius: int, axis: int, symmetric: bool = False) -> np.ndarray:
    """Sum over a ``2 radius + 1`` window along ``axis``, zero-padded at the ends.

    With ``symmetric`` the window shrinks near the ends so it stays centred on
    each element; a linear ramp then averages to itself right up to the border.
    """
    n = a.shape[axis]
    pad = [(0, 0)] * a.ndim
    pad[axis] = (1, 0)
    c = np.cumsum(np.pad(a, pad), axis=axis)
    i = np.arange(n)
    r = np.minimum(radius, np.minimum(i, n - 1 - i)) if symmetric else radius
    hi = np.take(c, np.minimum(i + r + 1, n), axis=axis)
    lo = np.take(c, np.maximum(i - r, 0), axis=axis)
    return hi - lo


def regularize_costs(cost: CostVolume, radius: int = 1, passes: int = 1,
                     symmetric: bool = True) -> CostVolume:
    """Spatial box smoothing of each hypothesis plane, normalised by valid cells.

    Windows shrink symmetrically at the image border (unless ``symmetric`` is
    off) so slanted surfaces are not pulled toward the interior.  Invalid
    cells stay invalid and keep their value.
    """
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if radius == 0 or passes == 0:
        return CostVolume(cost.values.copy(), cost.counts.copy())
    valid = cost.valid
    w = valid.astype(np.float64)
    den = _box_sum(_box_sum(w, radius, 1, symmetric), radius, 2, symmetric)
    values = np.where(valid, cost.values, 0.0)
    for _ in range(passes):
        num = _box_sum(_box_sum(np.where(valid, values, 0.0), radius, 1, symmetric), radius, 2, symmetric)
        values = np.where(valid, num / np.where(den > 0, den, 1.0), cost.values)
    return CostVolume(values, cost.counts.copy())


def costs_to_scores(cost: CostVolume, mode: str = "softmax", temperature: float = 1.0) -> ScoreVolume:
    """Map costs to per-hypothesis scores.

    ``softmax``: ``softmax_m(-cost / T)`` over the valid cells of each pixel.
    ``sigmoid``: ``sigmoid((mean_m cost - cost_m) / T)``, independent per cell.
    Invalid cells score 0; pixels without valid cells are masked.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    valid = cost.valid
    any_valid = valid.any(axis=0)
    if mode == "softmax":
        logits = np.where(valid, -cost.values / temperature, -np.inf)
        top = np.max(logits, axis=0)
        top = np.where(any_valid, top, 0.0)
        e = np.where(valid, np.exp(logits - top), 0.0)
        z = e.sum(axis=0)
        scores = e / np.where(z > 0, z, 1.0)
    elif mode == "sigmoid":
        n = valid.sum(axis=0)
        mu = np.where(valid, cost.values, 0.0).sum(axis=0) / np.maximum(n, 1)
        scores = np.where(valid, _sigmoid((mu - cost.values) / temperature), 0.0)
    else:
        raise ValueError(f"unknown score mode {mode!r}")
    return ScoreVolume(scores, valid)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))
