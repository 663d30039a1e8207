import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unitymvs.loss import (EPS, LOSS_KINDS, UflParams, bce, bce_grad, dedicated_S, focal_loss, gfl,
                           gradient_check, pointwise_loss_and_grad, scaling_factor_stats, total_loss,
                           ufl, ufl_grad, ufl_naive)
from unitymvs.unity import UnityVolume

LN2 = np.log(2.0)


def test_bce_examples():
    assert bce(1.0, 1.0) <= 2 * EPS
    assert bce(0.5, 1.0) == pytest.approx(LN2, rel=1e-12)
    assert bce(0.5, 0.5) == pytest.approx(LN2, rel=1e-12)
    u = np.linspace(0.01, 0.99, 99)
    assert np.argmin(bce(u, 0.3)) == np.argmin(np.abs(u - 0.3))


def test_focal_examples():
    assert focal_loss(0.5, 1, 1.0, 2.0) == pytest.approx(0.25 * LN2, rel=1e-12)
    assert focal_loss(1 - 1e-12, 1, 0.25, 2.0) < 1e-12
    u = np.linspace(0.05, 0.95, 19)
    np.testing.assert_allclose(focal_loss(u, 1, 1.0, 0.0), -np.log(u), rtol=1e-14)


def test_gfl_examples():
    assert gfl(0.4, 0.4, 0.25, 2.0) == 0.0
    assert gfl(0.5, 1.0, 1.0, 2.0) == pytest.approx(0.25 * LN2, rel=1e-12)
    assert gfl(0.0, 0.0, 0.25, 2.0) < 1e-12


def test_dedicated_examples():
    assert dedicated_S(0.0, 5, (1, 3)) == 1.0
    assert dedicated_S(0.0, 5, (0, 1)) == 0.0
    big = dedicated_S(50.0, 5, (1, 3))
    assert 3 - 1e-12 < big <= 3.0
    assert 1 - 1e-12 < dedicated_S(50.0, 5, (0, 1)) <= 1.0
    with pytest.raises(ValueError):
        dedicated_S(-0.1)
    # matches the two closed-form rescalings
    x = np.linspace(0, 4, 9)
    s = 1 / (1 + 5.0 ** -x)
    np.testing.assert_allclose(dedicated_S(x, 5, (1, 3)), 4 * (s - 0.5) + 1, rtol=1e-14)
    np.testing.assert_allclose(dedicated_S(x, 5, (0, 1)), 2 * (s - 0.5), rtol=1e-14, atol=1e-16)


def test_dedicated_monotone_in_base():
    x = np.linspace(0.01, 5, 50)
    prev = dedicated_S(x, 1.5, (0, 1))
    for b in (2.0, 5.0, 10.0):
        cur = dedicated_S(x, b, (0, 1))
        assert np.all(cur > prev)
        prev = cur


def test_ufl_naive_examples():
    expect = 0.5 * (-0.5 * np.log(0.25) - 0.5 * np.log(0.75))
    assert ufl_naive(0.25, 0.5, 0.5, 1.0, 1.0) == pytest.approx(expect, rel=1e-12)
    assert expect == pytest.approx(0.418494, abs=1e-6)
    assert ufl_naive(0.3, 0.3, 0.3, 0.5, 1.0) == 0.0


def test_ufl_examples():
    p = UflParams()
    expect = -0.75 * np.log(0.75) - 0.25 * np.log(0.25)
    assert ufl(0.75, 0.75, 0.75, p, 0) == pytest.approx(expect, rel=1e-12)
    assert expect == pytest.approx(0.562335, abs=1e-6)
    assert ufl(0.0, 0.0, 1.0, p, 0) < 1e-12
    with pytest.raises(ValueError):
        ufl(0.5, 0.5, 0.0, p, 0)


def test_ufl_positive_factor_bounded():
    p = UflParams(gamma=(1.0, 1.0, 1.0))
    u = np.linspace(0.001, 0.999, 500)
    for q_pos in (1e-4, 0.01, 0.5, 1.0):
        factor = ufl(u, q_pos, q_pos, p, 0) / bce(u, q_pos)
        # bounded; 3 itself is only reached once b**-x underflows
        assert np.all((factor >= 1 - 1e-12) & (factor <= 3 + 1e-12))


def test_params_validation():
    with pytest.raises(ValueError):
        UflParams(base=1.0)
    with pytest.raises(ValueError):
        UflParams(alpha_neg=(-0.1, 0.5, 0.25))
    with pytest.raises(ValueError):
        UflParams(eps=0.01)
    with pytest.raises(ValueError):
        UflParams(gamma=(2.0, 1.0))
    with pytest.raises(ValueError):
        UflParams(pos_range=(3.0, 1.0))


def test_gradient_matches_finite_differences():
    assert gradient_check(UflParams()) < 1e-4
    assert gradient_check(UflParams(base=2.0, pos_range=(0.5, 4.0), gamma=(3.0, 0.5, 1.5))) < 1e-4


def test_gradient_at_u_equals_q():
    p = UflParams()
    q = 0.6
    h = 1e-6
    for stage in range(3):
        fd = (ufl(q + h, q, q, p, stage) - ufl(q - h, q, q, p, stage)) / (2 * h)
        assert ufl_grad(q, q, q, p, stage) == pytest.approx(fd, rel=1e-4, abs=1e-6)


def test_gradient_gamma_zero_is_bce():
    p = UflParams()
    u = np.linspace(0.05, 0.95, 31)
    for q in (0.0, 0.3, 1.0):
        alpha = p.alpha_pos if q > 0 else p.alpha_neg[2]
        np.testing.assert_array_equal(ufl_grad(u, q, 0.3, p, 2), alpha * bce_grad(u, q))


def test_negative_gradient_nonnegative():
    p = UflParams()
    u = np.linspace(0.01, 0.99, 99)
    for stage in range(3):
        for q_pos in (0.01, 0.3, 1.0):
            assert np.all(ufl_grad(u, 0.0, q_pos, p, stage) >= 0)


def test_reduction_grid_exact():
    u = np.linspace(0.01, 0.99, 50)[:, None, None]
    alpha = np.linspace(0.0, 1.0, 5)[None, :, None]
    gamma = np.array([0.0, 1.0, 2.0])[None, None, :]
    for q in (0.0, 1.0):
        fl = focal_loss(u, q, alpha, gamma)
        assert np.max(np.abs(ufl_naive(u, q, 1.0, alpha, gamma) - fl)) <= 1e-12
        assert np.max(np.abs(gfl(u, q, alpha, gamma) - fl)) <= 1e-12


@settings(max_examples=300, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(1e-3, 1.0), st.integers(0, 2))
def test_losses_nonnegative(u, q, q_pos, stage):
    p = UflParams()
    for kind in LOSS_KINDS:
        qq = float(q > 0.5) if kind == "fl" else q
        value, grad = pointwise_loss_and_grad(kind, u, qq, q_pos, p, stage)
        assert value >= 0 and np.isfinite(grad)


def test_zero_at_binary_match():
    p = UflParams()
    for kind in LOSS_KINDS:
        for q in (0.0, 1.0):
            value, _ = pointwise_loss_and_grad(kind, q, q, 1.0, p, 0)
            assert value <= 2 * EPS


def test_positive_branch_minimum_at_target():
    p = UflParams()
    u = np.linspace(1e-4, 1 - 1e-4, 9999)
    for kind in ("bce", "gfl", "ufl_naive", "ufl"):
        for stage in range(3):
            for q in (0.05, 0.3, 0.5, 0.77, 0.95):
                value, _ = pointwise_loss_and_grad(kind, u, q, q, p, stage)
                assert abs(u[np.argmin(value)] - q) <= 1e-4


def test_total_loss():
    p = UflParams(stage_weights=(1.0, 0.0, 0.0))
    hot = np.zeros((3, 2, 2))
    hot[1] = 1.0
    lab = UnityVolume(hot, np.ones((2, 2), bool), role="label")
    total, per = total_loss([UnityVolume(hot, lab.mask)] * 3, [lab] * 3, UflParams(), "ufl")
    assert total <= 1e-5 and len(per) == 3
    rng = np.random.default_rng(0)
    ests = [UnityVolume(rng.uniform(0.1, 0.9, (3, 2, 2)), lab.mask) for _ in range(3)]
    total, per = total_loss(ests, [lab] * 3, p, "ufl")
    assert total == per[0]


def test_total_loss_mean_over_valid():
    # two valid pixels, single hypothesis, known pointwise losses
    p = UflParams(alpha_neg=(1.0,), gamma=(0.0,), stage_weights=(1.0,))
    u = np.array([[[np.exp(-0.2), 0.5, np.exp(-0.4)]]]).transpose(0, 1, 2)
    vals = np.array([[[1.0, 0.0, 1.0]]])
    mask = np.array([[True, False, True]])
    lab = UnityVolume(vals, mask, role="label")
    total, _ = total_loss([UnityVolume(u, mask)], [lab], p)
    assert total == pytest.approx(0.3, rel=1e-12)


class TestScalingStats:
    def lab(self, vals, mask=None):
        vals = np.asarray(vals, dtype=np.float64)
        return UnityVolume(vals, np.ones(vals.shape[1:], bool) if mask is None else mask, role="label")

    def test_exact_match(self):
        vals = np.zeros((4, 2, 2))
        vals[2] = 0.4
        stats = scaling_factor_stats(vals, self.lab(vals))
        assert stats.counts[0] == 16 and stats.counts[1:].sum() == 0
        assert np.all(stats.sums == 0)

    def test_large_factor(self):
        vals = np.zeros((2, 1, 1))
        vals[0] = 0.01
        u = np.array([0.01, 0.5]).reshape(2, 1, 1)
        stats = scaling_factor_stats(u, self.lab(vals))
        assert stats.neg_counts[4] == 1 and stats.neg_sums[4] == pytest.approx(50.0)
        assert stats.labels()[4] == "[8,inf)"
