"""Coarse-to-fine plane-sweep depth estimation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fusion import FilterParams
from .geometry import (Camera, DepthMap, HypothesisVolume, refine_hypotheses,
                       sample_hypotheses_uniform)
from .loss import UflParams
from .unity import UnityVolume, regress_argmax, regress_softargmin, regress_unity
from .volume import (CostVolume, _box_sum, aggregate_adaptive, aggregate_variance,
                     build_feature_volume, costs_to_scores, extract_features,
                     heuristic_view_weights, reference_volume, regularize_costs)

REPRESENTATIONS = ("regression", "classification", "unification")
AGGREGATIONS = ("variance", "adaptive")
UNITY_HEADS = ("proximity", "sigmoid")


@dataclass
class StageConfig:
    fraction: float
    M: int
    ratio: float


@dataclass
class PipelineConfig:
    stages: list[StageConfig] = field(default_factory=lambda: [
        StageConfig(0.25, 48, 4.0), StageConfig(0.5, 32, 2.0), StageConfig(1.0, 8, 1.0)])
    aggregation: str = "variance"
    representation: str = "unification"
    unity_head: str = "proximity"
    temperature: float = 0.0  # 0: per-stage automatic
    reg_radius: int = 4
    reg_passes: int = 2
    weight_sigma: float = 0.0  # 0: median feature distance
    fit_window: int = 2
    prior_radius: int = 6
    loss: UflParams = field(default_factory=UflParams)
    filter: FilterParams = field(default_factory=FilterParams)

    def validate(self, image_size: tuple[int, int] | None = None):
        if len(self.stages) < 1:
            raise ValueError("at least one stage is required")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {self.representation!r}")
        if self.unity_head not in UNITY_HEADS:
            raise ValueError(f"unknown unity head {self.unity_head!r}")
        if self.temperature < 0 or self.reg_radius < 0 or self.reg_passes < 0:
            raise ValueError("temperature and regularisation settings must be non-negative")
        prev = 0.0
        for st in self.stages:
            if st.M < 2:
                raise ValueError("each stage needs at least two hypotheses")
            if st.ratio <= 0:
                raise ValueError("interval ratios must be positive")
            k = int(round(1.0 / st.fraction)) if st.fraction > 0 else 0
            if k < 1 or abs(k * st.fraction - 1.0) > 1e-9:
                raise ValueError("stage fractions must be 1/k for integer k")
            if st.fraction < prev:
                raise ValueError("stage resolutions must be non-decreasing")
            prev = st.fraction
            if image_size is not None and (image_size[0] % k or image_size[1] % k):
                raise ValueError(f"image size {image_size} not divisible by stage factor {k}")
        return self

    def base_interval(self, depth_range: tuple[float, float]) -> float:
        """Interval of ratio 1, chosen so the first stage spans the depth range exactly."""
        first = self.stages[0]
        return (depth_range[1] - depth_range[0]) / ((first.M - 1) * first.ratio)


@dataclass
class StageResult:
    hyp: HypothesisVolume
    cost: CostVolume
    scores: UnityVolume
    depth: DepthMap


def _local_quadratic_minimum(c: np.ndarray, b: np.ndarray, window: int) -> np.ndarray:
    """Sub-plane minimum from a least-squares parabola through the finite costs
    within ``window`` planes of ``b``; falls back to ``b`` when ill-posed."""
    M = c.shape[0]
    offs = np.arange(-window, window + 1)
    idx = np.clip(b[None] + offs[:, None, None], 0, M - 1)
    vals = np.take_along_axis(c, idx, axis=0)
    ok = (b[None] + offs[:, None, None] >= 0) & (b[None] + offs[:, None, None] < M) & np.isfinite(vals)
    t = (idx - b[None]).astype(np.float64)
    w = ok.astype(np.float64)
    vals = np.where(ok, vals, 0.0)
    # normal equations for vals ~ a t^2 + b1 t + c0
    s0, s1, s2 = w.sum(0), (w * t).sum(0), (w * t**2).sum(0)
    s3, s4 = (w * t**3).sum(0), (w * t**4).sum(0)
    y0, y1, y2 = (w * vals).sum(0), (w * t * vals).sum(0), (w * t**2 * vals).sum(0)
    A = np.stack([np.stack([s4, s3, s2], -1), np.stack([s3, s2, s1], -1), np.stack([s2, s1, s0], -1)], -2)
    rhs = np.stack([y2, y1, y0], -1)
    det = np.linalg.det(A)
    good = (s0 >= 3) & (np.abs(det) > 1e-12 * np.maximum(s4, 1.0) ** 3)
    A = np.where(good[..., None, None], A, np.eye(3))
    coef = np.linalg.solve(A, rhs[..., None])[..., 0]
    a, lin = coef[..., 0], coef[..., 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where(good & (a > 0), -lin / (2.0 * a), 0.0)
    return np.clip(np.nan_to_num(delta), -0.5, 0.5)


def proximity_head(cost: CostVolume, hyp: HypothesisVolume, window: int = 1) -> UnityVolume:
    """Non-learned unity estimate from a cost volume.

    The cost minimum is located to sub-plane precision with a least-squares
    parabola over the best plane and up to ``window`` neighbours on each side;
    the plane just below that position receives its proximity
    ``1 - offset / interval`` and every other plane 0.
    """
    valid = cost.valid
    mask = valid.any(axis=0)
    M = hyp.M
    c = np.where(valid, cost.values, np.inf)
    b = np.argmin(c, axis=0)
    delta = _local_quadratic_minimum(c, b, window)
    pos = np.clip(b + delta, 0.0, M - 1.0)
    o = np.minimum(np.floor(pos).astype(np.int64), M - 1)
    proximity = 1.0 - (pos - o)
    values = np.zeros(c.shape)
    np.put_along_axis(values, o[None], np.where(mask, proximity, 0.0)[None], axis=0)
    return UnityVolume(values, mask)


def _auto_temperature(cost: CostVolume) -> float:
    v = cost.values[cost.valid]
    if v.size == 0:
        return 1.0
    t = 0.1 * float(np.median(v))
    return t if t > 0 else 1.0


def smooth_depth(depth: DepthMap, radius: int) -> DepthMap:
    """Replace each valid depth by a least-squares plane fitted to the valid
    depths in its ``(2 radius + 1)^2`` window.

    Planar depth is reproduced exactly, including next to the image border
    where a plain box mean would be biased by the truncated window.
    """
    if radius <= 0:
        return depth
    valid = depth.mask
    H, W = depth.shape
    y, x = np.mgrid[0:H, 0:W].astype(np.float64)
    w = valid.astype(np.float64)
    z = np.where(valid, depth.values, 0.0)

    def box(a):
        return _box_sum(_box_sum(a[None], radius, 1), radius, 2)[0]

    # moments taken about each window centre keep the system well conditioned
    sums = {}
    for name, a in (("1", w), ("x", w * x), ("y", w * y), ("xx", w * x * x), ("xy", w * x * y),
                    ("yy", w * y * y), ("z", w * z), ("xz", w * x * z), ("yz", w * y * z)):
        sums[name] = box(a)
    n, sx, sy = sums["1"], sums["x"], sums["y"]
    cxx = sums["xx"] - 2 * x * sx + x * x * n
    cxy = sums["xy"] - x * sy - y * sx + x * y * n
    cyy = sums["yy"] - 2 * y * sy + y * y * n
    cx, cy = sx - x * n, sy - y * n
    bz, bxz, byz = sums["z"], sums["xz"] - x * sums["z"], sums["yz"] - y * sums["z"]
    A = np.stack([np.stack([n, cx, cy], -1), np.stack([cx, cxx, cxy], -1), np.stack([cy, cxy, cyy], -1)], -2)
    rhs = np.stack([bz, bxz, byz], -1)
    det = np.linalg.det(A)
    good = valid & (n >= 3) & (np.abs(det) > 1e-9 * np.maximum(n, 1.0) ** 3)
    A = np.where(good[..., None, None], A, np.eye(3))
    fit = np.linalg.solve(A, rhs[..., None])[..., 0, 0]
    mean = bz / np.maximum(n, 1.0)
    values = np.where(good, fit, np.where(valid, mean, 0.0))
    return DepthMap(values, valid & (values > 0), depth.confidence)


def run_stage(cfg: PipelineConfig, features, cams: list[Camera], hyp: HypothesisVolume,
              ref_index: int = 0) -> StageResult:
    """One plane sweep: warp, aggregate, regularise, score and decode depth."""
    ref_cam = cams[ref_index]
    ref_vol = reference_volume(features[ref_index], hyp.M)
    src_vols = [build_feature_volume(features[i], ref_cam, cams[i], hyp)
                for i in range(len(cams)) if i != ref_index]
    if cfg.aggregation == "variance":
        cost = aggregate_variance([ref_vol] + src_vols)
    else:
        sigma = cfg.weight_sigma or None
        weights = [heuristic_view_weights(ref_vol, v, sigma) for v in src_vols]
        cost = aggregate_adaptive(ref_vol, src_vols, weights)
    cost = regularize_costs(cost, cfg.reg_radius, cfg.reg_passes)
    temperature = cfg.temperature or _auto_temperature(cost)

    if cfg.representation == "unification":
        if cfg.unity_head == "proximity":
            scores = proximity_head(cost, hyp, cfg.fit_window)
        else:
            sv = costs_to_scores(cost, "sigmoid", temperature)
            scores = UnityVolume(sv.values, sv.mask)
        depth = regress_unity(scores, hyp)
    else:
        sv = costs_to_scores(cost, "softmax", temperature)
        scores = UnityVolume(sv.values, sv.mask)
        if cfg.representation == "regression":
            depth = regress_softargmin(scores, hyp)
        else:
            depth = regress_argmax(scores, hyp)
    return StageResult(hyp, cost, scores, depth)


def run_pipeline(cfg: PipelineConfig, images: list[np.ndarray], cameras: list[Camera],
                 depth_range: tuple[float, float], ref_index: int = 0) -> list[StageResult]:
    """Run the cascade for view ``ref_index``; the last result holds the final depth."""
    H, W = images[ref_index].shape[:2]
    cfg.validate((H, W))
    if len(images) != len(cameras) or len(images) < 2:
        raise ValueError("need one camera per image and at least two views")
    base = cfg.base_interval(depth_range)
    results: list[StageResult] = []
    for s, st in enumerate(cfg.stages):
        cams = [c.scaled(st.fraction) if st.fraction != 1.0 else c for c in cameras]
        features = [extract_features(img, st.fraction) for img in images]
        shape = cams[ref_index].size
        interval = st.ratio * base
        if s == 0:
            hyp = sample_hypotheses_uniform(depth_range[0], interval, st.M, shape, stage=s)
        else:
            prior = smooth_depth(results[-1].depth, cfg.prior_radius)
            hyp = refine_hypotheses(prior, st.M, interval, shape,
                                    fallback=depth_range, stage=s)
        results.append(run_stage(cfg, features, cams, hyp, ref_index))
    return results
