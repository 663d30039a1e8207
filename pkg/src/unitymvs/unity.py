"""Unity labels and depth decoding.

A unity column holds, for one pixel, at most one non-zero value: the
proximity ``1 - (D - d_o) / r`` of the depth ``D`` to the hypothesis ``d_o``
whose interval ``[d_o, d_o + r)`` contains it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DepthMap, HypothesisVolume


@dataclass
class UnityVolume:
    values: np.ndarray  # M x H x W, in [0, 1]
    mask: np.ndarray  # H x W
    role: str = "estimate"  # "label" or "estimate"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.role not in ("label", "estimate"):
            raise ValueError(f"unknown unity role {self.role!r}")
        if self.values.ndim != 3 or self.values.shape[1:] != self.mask.shape:
            raise ValueError("unity values must be M x H x W matching the mask")
        if not np.all((self.values >= 0) & (self.values <= 1)):
            raise ValueError("unity values must lie in [0, 1]")
        if self.role == "label" and np.any(np.count_nonzero(self.values, axis=0) > 1):
            raise ValueError("a unity label has at most one non-zero entry per pixel")

    @property
    def M(self) -> int:
        return self.values.shape[0]


def _check_shapes(depth: DepthMap, hyp: HypothesisVolume):
    if depth.shape != hyp.shape:
        raise ValueError(f"depth map {depth.shape} does not match hypotheses {hyp.shape}")


def forward_intervals(d: np.ndarray) -> np.ndarray:
    """Interval above each hypothesis; the last one reuses the previous interval."""
    r = np.empty_like(d)
    r[:-1] = d[1:] - d[:-1]
    r[-1] = r[-2]
    return r


def generate_unity(gt: DepthMap, hyp: HypothesisVolume) -> UnityVolume:
    """Ground-truth unity labels for ``gt`` under hypotheses ``hyp``.

    Ground truth outside every interval yields an all-zero (still valid) column.
    """
    _check_shapes(gt, hyp)
    d = hyp.depths
    r = forward_intervals(d)
    D = np.where(gt.mask, gt.values, -np.inf)[None]
    inside = (d <= D) & (d + r > D)
    with np.errstate(invalid="ignore"):
        values = np.where(inside, 1.0 - (D - d) / r, 0.0)
    return UnityVolume(values, gt.mask.copy(), role="label")


def _take(a: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return np.take_along_axis(a, idx[None], axis=0)[0]


def regress_unity(est: UnityVolume, hyp: HypothesisVolume) -> DepthMap:
    """Decode depth from estimated unity: ``d_o + (1 - U_o) r`` at the arg-max ``o``.

    Ties resolve to the smallest index; confidence is ``U_o``.
    """
    if est.values.shape != hyp.depths.shape:
        raise ValueError("unity and hypothesis volumes differ in shape")
    d = hyp.depths
    o = np.argmax(est.values, axis=0)
    u_o = _take(est.values, o)
    r = _take(forward_intervals(d), o)
    depth = _take(d, o) + (1.0 - u_o) * r
    return DepthMap(np.where(est.mask, depth, 0.0), est.mask.copy(), np.where(est.mask, u_o, 0.0))


def regress_softargmin(prob: UnityVolume, hyp: HypothesisVolume) -> DepthMap:
    """Probability-weighted mean of the hypotheses; confidence is the peak probability."""
    if prob.values.shape != hyp.depths.shape:
        raise ValueError("probability and hypothesis volumes differ in shape")
    depth = (prob.values * hyp.depths).sum(axis=0)
    conf = prob.values.max(axis=0)
    return DepthMap(np.where(prob.mask, depth, 0.0), prob.mask.copy(), np.where(prob.mask, conf, 0.0))


def regress_argmax(prob: UnityVolume, hyp: HypothesisVolume) -> DepthMap:
    """Depth of the most probable hypothesis (ties: smallest index)."""
    if prob.values.shape != hyp.depths.shape:
        raise ValueError("probability and hypothesis volumes differ in shape")
    o = np.argmax(prob.values, axis=0)
    depth = _take(hyp.depths, o)
    conf = _take(prob.values, o)
    return DepthMap(np.where(prob.mask, depth, 0.0), prob.mask.copy(), np.where(prob.mask, conf, 0.0))


def nearest_hypothesis(gt: DepthMap, hyp: HypothesisVolume) -> tuple[np.ndarray, np.ndarray]:
    """Index of the hypothesis closest to ``gt`` (ties: smaller index) and whether
    ``gt`` lies in that hypothesis' centred interval ``[d_n - r/2, d_n + r/2]``."""
    _check_shapes(gt, hyp)
    d = hyp.depths
    D = np.where(gt.mask, gt.values, 0.0)
    n = np.argmin(np.abs(d - D[None]), axis=0)
    r = _take(forward_intervals(d), n)
    dist = np.abs(D - _take(d, n))
    return n, gt.mask & (dist <= r / 2)


def generate_offset_labels(gt: DepthMap, hyp: HypothesisVolume) -> UnityVolume:
    """Offset-style labels: the nearest hypothesis carries ``|D - d_n| / (r / 2)``.

    Kept for comparison with proximity labels only; the value loses the sign of
    the offset and is zero when ``D`` coincides with a hypothesis.
    """
    n, inside = nearest_hypothesis(gt, hyp)
    d = hyp.depths
    r = _take(forward_intervals(d), n)
    D = np.where(gt.mask, gt.values, 0.0)
    offset = np.where(inside, np.abs(D - _take(d, n)) / (r / 2), 0.0)
    values = np.zeros_like(d)
    np.put_along_axis(values, n[None], offset[None], axis=0)
    return UnityVolume(values, gt.mask.copy(), role="label")


def positive_targets(labels: UnityVolume) -> np.ndarray:
    """Per-pixel positive target ``q+``; 1 for all-zero label columns."""
    top = labels.values.max(axis=0)
    return np.where(top > 0, top, 1.0)
