"""Focal-loss family for continuous unity targets, with analytic gradients.

All kernels are elementwise over numpy arrays (scalars work too).  ``u`` is
the estimated unity, ``q`` the target and ``q_pos`` the positive target of
the pixel the element belongs to.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS = 1e-7
SCALE_BINS = (0.0, 1.0, 2.0, 4.0, 8.0, np.inf)


@dataclass
class UflParams:
    alpha_pos: float = 1.0
    alpha_neg: tuple[float, ...] = (0.75, 0.5, 0.25)
    gamma: tuple[float, ...] = (2.0, 1.0, 0.0)
    base: float = 5.0
    pos_range: tuple[float, float] = (1.0, 3.0)
    neg_range: tuple[float, float] = (0.0, 1.0)
    stage_weights: tuple[float, ...] = (2.0, 1.0, 1.0)
    eps: float = EPS

    def __post_init__(self):
        self.alpha_neg = tuple(float(a) for a in self.alpha_neg)
        self.gamma = tuple(float(g) for g in self.gamma)
        self.stage_weights = tuple(float(w) for w in self.stage_weights)
        self.pos_range = tuple(float(v) for v in self.pos_range)
        self.neg_range = tuple(float(v) for v in self.neg_range)
        if self.alpha_pos < 0 or any(a < 0 for a in self.alpha_neg):
            raise ValueError("alpha must be non-negative")
        if any(g < 0 for g in self.gamma):
            raise ValueError("gamma must be non-negative")
        if self.base <= 1:
            raise ValueError("base must exceed 1")
        for lo, hi in (self.pos_range, self.neg_range):
            if not hi >= lo >= 0:
                raise ValueError("ranges need hi >= lo >= 0")
        if any(w < 0 for w in self.stage_weights):
            raise ValueError("stage weights must be non-negative")
        if not 0 < self.eps <= 1e-3:
            raise ValueError("eps must lie in (0, 1e-3]")
        if not len(self.alpha_neg) == len(self.gamma) == len(self.stage_weights):
            raise ValueError("per-stage parameters must have equal length")

    @property
    def stages(self) -> int:
        return len(self.gamma)


def _clip(u, eps):
    return np.clip(np.asarray(u, dtype=np.float64), eps, 1.0 - eps)


def bce(u, q, eps: float = EPS):
    u = _clip(u, eps)
    q = np.asarray(q, dtype=np.float64)
    return -q * np.log(u) - (1.0 - q) * np.log1p(-u)


def bce_grad(u, q, eps: float = EPS):
    u = _clip(u, eps)
    q = np.asarray(q, dtype=np.float64)
    return -q / u + (1.0 - q) / (1.0 - u)


def focal_loss(u, q, alpha, gamma, eps: float = EPS):
    """Binary focal loss; ``q`` must be 0 or 1."""
    u = _clip(u, eps)
    q = np.asarray(q, dtype=np.float64)
    pos = -alpha * (1.0 - u) ** gamma * np.log(u)
    neg = -(1.0 - alpha) * u**gamma * np.log1p(-u)
    return np.where(q == 1, pos, neg)


def gfl(u, q, alpha, gamma, eps: float = EPS):
    u = _clip(u, eps)
    q = np.asarray(q, dtype=np.float64)
    loss = bce(u, q, eps)
    return np.where(q > 0, alpha * np.abs(q - u) ** gamma * loss, (1.0 - alpha) * u**gamma * loss)


def ufl_naive(u, q, q_pos, alpha, gamma, eps: float = EPS):
    u = _clip(u, eps)
    q = np.asarray(q, dtype=np.float64)
    loss = bce(u, q, eps)
    pos = alpha * (np.abs(q - u) / q_pos) ** gamma * loss
    neg = (1.0 - alpha) * (u / q_pos) ** gamma * loss
    return np.where(q > 0, pos, neg)


def sigmoid_base(x, base):
    return 1.0 / (1.0 + np.power(float(base), -np.asarray(x, dtype=np.float64)))


def dedicated_S(x, base: float = 5.0, out_range=(1.0, 3.0)):
    """Sigmoid-like map of ``x >= 0`` onto ``[lo, hi)``: ``(hi - lo) 2 (S_b(x) - 1/2) + lo``."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("dedicated function is defined for x >= 0")
    lo, hi = out_range
    return (hi - lo) * 2.0 * (sigmoid_base(x, base) - 0.5) + lo


def dedicated_S_grad(x, base: float = 5.0, out_range=(1.0, 3.0)):
    x = np.asarray(x, dtype=np.float64)
    lo, hi = out_range
    p = np.power(float(base), -x)
    return (hi - lo) * 2.0 * np.log(base) * p / (1.0 + p) ** 2


def _stage_values(params: UflParams, stage: int):
    return params.alpha_neg[stage], params.gamma[stage]


def _check_q_pos(q_pos):
    q_pos = np.asarray(q_pos, dtype=np.float64)
    if np.any(q_pos <= 0):
        raise ValueError("positive target q+ must be positive")
    return q_pos


def ufl(u, q, q_pos, params: UflParams, stage: int = 0):
    """Unified focal loss with range-limited scaling factors."""
    q_pos = _check_q_pos(q_pos)
    u = _clip(u, params.eps)
    q = np.asarray(q, dtype=np.float64)
    alpha_neg, gamma = _stage_values(params, stage)
    loss = bce(u, q, params.eps)
    s_pos = dedicated_S(np.abs(q - u) / q_pos, params.base, params.pos_range)
    s_neg = dedicated_S(u / q_pos, params.base, params.neg_range)
    return np.where(q > 0, params.alpha_pos * s_pos**gamma * loss, alpha_neg * s_neg**gamma * loss)


def _modulated_grad(weight, factor, factor_du, gamma, loss, loss_du):
    """d/du of ``weight * factor(u)**gamma * loss(u)``."""
    if gamma == 0:
        return weight * loss_du
    with np.errstate(divide="ignore", invalid="ignore"):
        fpow = np.where(factor > 0, factor ** (gamma - 1.0), 1.0 if gamma == 1 else 0.0)
    return weight * (gamma * fpow * factor_du * loss + factor**gamma * loss_du)


def ufl_grad(u, q, q_pos, params: UflParams, stage: int = 0):
    """Analytic d(ufl)/du, including the dependence of the scaling factor on ``u``.

    At ``u == q`` the absolute value contributes its symmetric (zero) subgradient.
    """
    q_pos = _check_q_pos(q_pos)
    u = _clip(u, params.eps)
    q = np.asarray(q, dtype=np.float64)
    alpha_neg, gamma = _stage_values(params, stage)
    loss = bce(u, q, params.eps)
    dloss = bce_grad(u, q, params.eps)

    x_pos = np.abs(q - u) / q_pos
    f_pos = dedicated_S(x_pos, params.base, params.pos_range)
    df_pos = dedicated_S_grad(x_pos, params.base, params.pos_range) * (-np.sign(q - u) / q_pos)
    g_pos = _modulated_grad(params.alpha_pos, f_pos, df_pos, gamma, loss, dloss)

    x_neg = u / q_pos
    f_neg = dedicated_S(x_neg, params.base, params.neg_range)
    df_neg = dedicated_S_grad(x_neg, params.base, params.neg_range) / q_pos
    g_neg = _modulated_grad(alpha_neg, f_neg, df_neg, gamma, loss, dloss)
    return np.where(q > 0, g_pos, g_neg)


LOSS_KINDS = ("bce", "fl", "gfl", "ufl_naive", "ufl")


def pointwise_loss_and_grad(kind: str, u, q, q_pos, params: UflParams, stage: int = 0,
                            alpha: float = 0.5):
    """Loss value and d/du for any supported kind.

    ``fl`` expects binary targets.  ``alpha`` is the positive weight of the
    ``fl``/``gfl``/``ufl_naive`` baselines; their ``gamma`` comes from ``params``.
    """
    eps = params.eps
    u = _clip(u, eps)
    q = np.asarray(q, dtype=np.float64)
    gamma = params.gamma[stage]
    if kind == "ufl":
        return ufl(u, q, q_pos, params, stage), ufl_grad(u, q, q_pos, params, stage)
    loss = bce(u, q, eps)
    dloss = bce_grad(u, q, eps)
    if kind == "bce":
        return loss, dloss
    if kind == "fl":
        value = focal_loss(u, q, alpha, gamma, eps)
    elif kind == "gfl":
        value = gfl(u, q, alpha, gamma, eps)
    elif kind == "ufl_naive":
        value = ufl_naive(u, q, q_pos, alpha, gamma, eps)
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    scale = np.ones_like(u) if kind != "ufl_naive" else np.asarray(q_pos, dtype=np.float64) * np.ones_like(u)
    x_pos = np.abs(q - u) / scale
    g_pos = _modulated_grad(alpha, x_pos, -np.sign(q - u) / scale, gamma, loss, dloss)
    g_neg = _modulated_grad(1.0 - alpha, u / scale, 1.0 / scale, gamma, loss, dloss)
    return value, np.where(q > 0, g_pos, g_neg)


def stage_mean_loss(u, labels, mask, params: UflParams, stage: int, kind: str = "ufl",
                    alpha: float = 0.5) -> float:
    """Mean pointwise loss over the valid pixels (and all hypotheses) of one stage."""
    from .unity import positive_targets

    u = np.asarray(u, dtype=np.float64)
    q = labels.values
    q_pos = np.broadcast_to(positive_targets(labels), q.shape)
    value, _ = pointwise_loss_and_grad(kind, u, q, q_pos, params, stage, alpha)
    sel = np.broadcast_to(mask, q.shape)
    if not sel.any():
        return 0.0
    return float(np.sum(value[sel]) / np.count_nonzero(sel))


def total_loss(estimates, labels, params: UflParams, kind: str = "ufl") -> tuple[float, list[float]]:
    """Stage-weighted sum of per-stage mean losses; returns the total and the per-stage means.

    ``estimates`` and ``labels`` are sequences of unity volumes, coarsest stage first.
    """
    if len(estimates) != len(labels):
        raise ValueError("one estimate per label volume is required")
    if len(labels) > params.stages:
        raise ValueError("more stages than configured loss parameters")
    per_stage = []
    for i, (est, lab) in enumerate(zip(estimates, labels)):
        mask = lab.mask & est.mask
        per_stage.append(stage_mean_loss(est.values, lab, mask, params, i, kind))
    total = float(sum(w * v for w, v in zip(params.stage_weights, per_stage)))
    return total, per_stage


@dataclass
class ScalingStats:
    edges: tuple[float, ...]
    pos_counts: np.ndarray
    pos_sums: np.ndarray
    neg_counts: np.ndarray
    neg_sums: np.ndarray

    @property
    def counts(self) -> np.ndarray:
        return self.pos_counts + self.neg_counts

    @property
    def sums(self) -> np.ndarray:
        return self.pos_sums + self.neg_sums

    def labels(self) -> list[str]:
        out = []
        for lo, hi in zip(self.edges[:-1], self.edges[1:]):
            out.append(f"[{lo:g},{hi:g})" if np.isfinite(hi) else f"[{lo:g},inf)")
        return out


def scaling_factor_stats(u, labels, mask=None, edges=SCALE_BINS) -> ScalingStats:
    """Histogram (count and sum per bin) of the unbounded scaling factors
    ``|q - u| / q+`` (positives) and ``u / q+`` (negatives)."""
    from .unity import positive_targets

    u = np.asarray(u, dtype=np.float64)
    q = labels.values
    q_pos = np.broadcast_to(positive_targets(labels), q.shape)
    sel = np.broadcast_to(labels.mask if mask is None else mask, q.shape)
    pos = sel & (q > 0)
    neg = sel & (q == 0)
    x_pos = np.abs(q - u)[pos] / q_pos[pos]
    x_neg = u[neg] / q_pos[neg]
    edges = tuple(edges)

    def hist(x):
        idx = np.searchsorted(np.asarray(edges[1:-1]), x, side="right")
        n = len(edges) - 1
        return np.bincount(idx, minlength=n)[:n], np.bincount(idx, weights=x, minlength=n)[:n]

    pc, ps = hist(x_pos)
    nc, ns = hist(x_neg)
    return ScalingStats(edges, pc, ps, nc, ns)


def gradient_check(params: UflParams, n: int = 91, h: float = 1e-6, lo: float = 0.05, hi: float = 0.95,
                   floor: float = 1e-3) -> float:
    """Max relative error between ``ufl_grad`` and central differences of ``ufl``.

    Covers an ``n x n`` grid of (u, q) for every stage, both the positive
    branch (``q+ = q``) and the negative branch (``q = 0`` with ``q+`` from the
    grid).  The relative error uses ``max(|a|, |b|, floor)`` as denominator so
    gradients that vanish at ``u = q`` compare absolutely.
    """
    g = np.linspace(lo, hi, n)
    u, q = np.meshgrid(g, g, indexing="ij")
    worst = 0.0
    for stage in range(params.stages):
        for qq, qp in ((q, q), (np.zeros_like(q), q)):
            analytic = ufl_grad(u, qq, qp, params, stage)
            numeric = (ufl(u + h, qq, qp, params, stage) - ufl(u - h, qq, qp, params, stage)) / (2.0 * h)
            denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
            worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
    return worst
