"""Gradient-descent harness fitting free score volumes to unity labels."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import DepthMap, HypothesisVolume, sample_hypotheses_uniform
from .loss import LOSS_KINDS, UflParams, pointwise_loss_and_grad
from .unity import UnityVolume, generate_unity, positive_targets, regress_unity


def sigmoid(s):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(s, dtype=np.float64)))


@dataclass
class FitResult:
    scores: np.ndarray  # raw pre-sigmoid scores, M x H x W
    trace: list[tuple[int, float, float]] = field(default_factory=list)  # (iter, loss, mae)

    @property
    def unity(self) -> np.ndarray:
        return sigmoid(self.scores)

    @property
    def losses(self) -> np.ndarray:
        return np.array([row[1] for row in self.trace])


def depth_mae(unity: np.ndarray, mask: np.ndarray, hyp: HypothesisVolume, gt: DepthMap) -> float:
    est = regress_unity(UnityVolume(unity, mask), hyp)
    sel = mask & gt.mask
    if not sel.any():
        return float("nan")
    return float(np.mean(np.abs(est.values[sel] - gt.values[sel])))


def binarize(labels: UnityVolume) -> UnityVolume:
    return UnityVolume((labels.values > 0).astype(np.float64), labels.mask.copy(), role="label")


def fit_unity(labels: UnityVolume, params: UflParams, lr: float = 1.0, iters: int = 500,
              loss_kind: str = "ufl", stage: int = 0, alpha: float = 0.5,
              hyp: HypothesisVolume | None = None, gt: DepthMap | None = None,
              init: np.ndarray | None = None) -> FitResult:
    """Full-batch gradient descent on raw scores ``s`` with ``u = sigmoid(s)``.

    Each element moves by ``lr`` times its own pointwise gradient, i.e. the
    gradient of the mean loss rescaled by the element count, so ``lr`` does not
    depend on the volume size.  ``fl`` trains on binarised labels.  When
    ``hyp`` and ``gt`` are given the trace also records the depth MAE.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    if loss_kind == "fl":
        labels = binarize(labels)
    q = labels.values
    q_pos = np.broadcast_to(positive_targets(labels), q.shape)
    sel = np.broadcast_to(labels.mask, q.shape)
    n = np.count_nonzero(sel)
    if n == 0:
        raise ValueError("labels have no valid pixels")
    s = np.zeros_like(q) if init is None else np.array(init, dtype=np.float64)
    track = hyp is not None and gt is not None

    result = FitResult(s)
    for it in range(iters + 1):
        u = sigmoid(s)
        value, grad = pointwise_loss_and_grad(loss_kind, u, q, q_pos, params, stage, alpha)
        loss = float(np.sum(value[sel]) / n)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad[sel])):
            raise FloatingPointError(f"non-finite {loss_kind} loss at iteration {it}: {loss}")
        mae = depth_mae(u, labels.mask, hyp, gt) if track else float("nan")
        result.trace.append((it, loss, mae))
        if it == iters:
            break
        s = s - lr * np.where(sel, grad * u * (1.0 - u), 0.0)
    result.scores = s
    return result


def random_unity_problem(shape=(16, 16), M: int = 32, seed: int = 0, interval: float = 1.0,
                         d_min: float = 1.0, q_range: tuple[float, float] | None = None):
    """Uniform hypotheses, random in-range ground truth and its unity labels.

    With ``q_range`` the ground truth is placed so that its positive target
    lies inside that range (e.g. tiny targets just below the next hypothesis).
    """
    rng = np.random.default_rng(seed)
    hyp = sample_hypotheses_uniform(d_min, interval, M, shape)
    cell = rng.integers(0, M - 1, size=shape)
    if q_range is None:
        frac = rng.uniform(0.0, 1.0, size=shape)
    else:
        q = rng.uniform(q_range[0], q_range[1], size=shape)
        frac = 1.0 - q
    gt = DepthMap(d_min + (cell + frac) * interval)
    return hyp, gt, generate_unity(gt, hyp)


def compare_losses(labels: UnityVolume, hyp: HypothesisVolume, gt: DepthMap, params: UflParams,
                   iters: int = 500, lr: float = 1.0, kinds=("fl", "gfl", "ufl"), stage: int = 0,
                   alpha: float = 0.5, seed: int = 0, init_scale: float = 0.0) -> list[dict]:
    """Fit each loss kind under the same budget and initialisation; report depth MAE."""
    rng = np.random.default_rng(seed)
    init = init_scale * rng.standard_normal(labels.values.shape)
    rows = []
    for kind in kinds:
        fit = fit_unity(labels, params, lr=lr, iters=iters, loss_kind=kind, stage=stage,
                        alpha=alpha, hyp=hyp, gt=gt, init=init)
        _, loss, mae = fit.trace[-1]
        rows.append({"kind": kind, "mae": mae, "final_loss": loss, "initial_mae": fit.trace[0][2]})
    return rows


def scaling_experiment(samples: int = 100_000, M: int = 32, seed: int = 0):
    """Scaling-factor histogram for uniform random ``u`` against random
    one-positive-per-pixel unity labels (``samples`` label cells in total)."""
    from .loss import scaling_factor_stats

    n = max(samples // M, 1)
    _, _, labels = random_unity_problem((1, n), M, seed)
    u = np.random.default_rng([seed, 1]).uniform(0.0, 1.0, labels.values.shape)
    return scaling_factor_stats(u, labels)
