import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfib.divergences import (
    DiagGaussian,
    DiscreteDist,
    FinitenessError,
    SupportError,
    quadrature_oracle_1d,
    renyi_discrete,
    renyi_gauss_diag,
)

ALPHA_GRID = [round(0.1 * k, 1) for k in range(21)]  # 0.0 .. 2.0


def test_discrete_dist_validation():
    with pytest.raises(ValueError):
        DiscreteDist(np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        DiscreteDist(np.array([-0.1, 1.1]))


def test_diag_gaussian_validation():
    with pytest.raises(ValueError):
        DiagGaussian([0.0], [0.0])
    with pytest.raises(ValueError):
        DiagGaussian([0.0, 1.0], [1.0])


def test_discrete_self_divergence_zero():
    p = DiscreteDist(np.array([0.5, 0.5]))
    assert abs(renyi_discrete(p, p, 0.8)) <= 1e-12


def test_discrete_order_two_fixture():
    # sum p^2/q = 0.25/0.25 + 0.25/0.75 = 4/3
    p = DiscreteDist(np.array([0.5, 0.5]))
    q = DiscreteDist(np.array([0.25, 0.75]))
    assert renyi_discrete(p, q, 2.0) == pytest.approx(np.log(4.0 / 3.0), abs=1e-12)


def test_discrete_order_zero_common_support():
    p = DiscreteDist(np.array([0.5, 0.5]))
    q = DiscreteDist(np.array([0.25, 0.75]))
    assert renyi_discrete(p, q, 0.0) == pytest.approx(0.0, abs=1e-15)


def test_discrete_order_zero_partial_support():
    # mass of q on the support of p is 0.25
    p = DiscreteDist(np.array([1.0, 0.0]))
    q = DiscreteDist(np.array([0.25, 0.75]))
    assert renyi_discrete(p, q, 0.0) == pytest.approx(-np.log(0.25), abs=1e-12)


def test_discrete_kl_zero_times_log_convention():
    p = DiscreteDist(np.array([0.0, 1.0]))
    q = DiscreteDist(np.array([0.5, 0.5]))
    assert renyi_discrete(p, q, 1.0) == pytest.approx(np.log(2.0), abs=1e-12)


def test_discrete_support_violation():
    p = DiscreteDist(np.array([0.5, 0.5]))
    q = DiscreteDist(np.array([1.0, 0.0]))
    with pytest.raises(SupportError):
        renyi_discrete(p, q, 0.5)


def test_negative_alpha_rejected():
    p = DiscreteDist(np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        renyi_discrete(p, p, -0.1)
    g = DiagGaussian([0.0], [1.0])
    with pytest.raises(ValueError):
        renyi_gauss_diag(g, g, -1.0)


def test_gauss_unit_shift_fixture():
    # alpha * mu^2 / 2 when both variances are 1
    p = DiagGaussian([1.0], [1.0])
    q = DiagGaussian([0.0], [1.0])
    assert renyi_gauss_diag(p, q, 0.8) == pytest.approx(0.4, abs=1e-12)
    assert quadrature_oracle_1d(p, q, 0.8) == pytest.approx(0.4, abs=1e-6)


def test_gauss_kl_fixture():
    p = DiagGaussian([0.0], [4.0])
    q = DiagGaussian([0.0], [1.0])
    expected = (4.0 - 1.0 - np.log(4.0)) / 2.0
    assert renyi_gauss_diag(p, q, 1.0) == pytest.approx(expected, abs=1e-12)
    assert quadrature_oracle_1d(p, q, 1.0) == pytest.approx(expected, abs=1e-8)


def test_gauss_finiteness_violation():
    p = DiagGaussian([0.0], [3.0])
    q = DiagGaussian([0.0], [1.0])
    with pytest.raises(FinitenessError):
        renyi_gauss_diag(p, q, 1.8)
    with pytest.raises(FinitenessError):
        quadrature_oracle_1d(p, q, 1.8)


def test_gauss_alpha_zero_is_zero():
    p = DiagGaussian([2.0, -1.0], [0.5, 3.0])
    q = DiagGaussian([0.0, 0.0], [1.0, 1.0])
    assert renyi_gauss_diag(p, q, 0.0) == 0.0


def test_guard_band_routes_to_kl():
    # orders within 1e-9 of 1 dispatch to the exact KL branch, dodging the
    # 1/(alpha-1) cancellation
    p = DiagGaussian([0.3], [1.7])
    q = DiagGaussian([-0.2], [0.9])
    kl = renyi_gauss_diag(p, q, 1.0)
    assert renyi_gauss_diag(p, q, 1.0 + 1e-10) == kl
    assert renyi_gauss_diag(p, q, 1.0 - 1e-10) == kl


def test_oracle_self_divergence():
    g = DiagGaussian([0.7], [2.3])
    assert abs(quadrature_oracle_1d(g, g, 0.6)) <= 1e-9


def test_closed_form_matches_oracle_random():
    rng = np.random.default_rng(123)
    checked = 0
    while checked < 40:
        mp, mq = rng.uniform(-3, 3, size=2)
        vp, vq = rng.uniform(0.1, 4.0, size=2)
        alpha = rng.choice([0.2, 0.5, 0.8, 1.2, 1.5, 1.8])
        if (1 - alpha) * vp + alpha * vq <= 1e-3:
            continue
        p = DiagGaussian([mp], [vp])
        q = DiagGaussian([mq], [vq])
        assert renyi_gauss_diag(p, q, alpha) == pytest.approx(
            quadrature_oracle_1d(p, q, alpha), abs=1e-6
        )
        checked += 1


def test_continuity_at_one():
    # The absolute 1e-3 budget covers slope*1e-4 plus dispatch error, so the
    # fixture sticks to moderate-divergence pairs (the slope at alpha=1 grows
    # with the divergence itself).
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 20:
        p = DiagGaussian(rng.uniform(-2, 2, 3), rng.uniform(0.3, 3.0, 3))
        q = DiagGaussian(rng.uniform(-2, 2, 3), rng.uniform(0.3, 3.0, 3))
        kl = renyi_gauss_diag(p, q, 1.0)
        if kl > 2.0:
            continue
        assert abs(renyi_gauss_diag(p, q, 1.0 + 1e-4) - kl) <= 1e-3
        assert abs(renyi_gauss_diag(p, q, 1.0 - 1e-4) - kl) <= 1e-3
        checked += 1


def test_monotone_in_alpha_gaussian():
    rng = np.random.default_rng(21)
    for _ in range(20):
        vq = rng.uniform(0.5, 3.0, 2)
        vp = vq * rng.uniform(0.3, 1.9, 2)  # keeps (1-2)vp + 2vq > 0 at alpha=2
        p = DiagGaussian(rng.uniform(-2, 2, 2), vp)
        q = DiagGaussian(rng.uniform(-2, 2, 2), vq)
        values = [renyi_gauss_diag(p, q, a) for a in ALPHA_GRID]
        diffs = np.diff(values)
        assert diffs.min() >= -1e-12


def test_monotone_in_alpha_discrete():
    rng = np.random.default_rng(22)
    for _ in range(20):
        p = rng.uniform(0.05, 1.0, 4)
        q = rng.uniform(0.05, 1.0, 4)
        p = DiscreteDist(p / p.sum())
        q = DiscreteDist(q / q.sum())
        values = [renyi_discrete(p, q, a) for a in ALPHA_GRID]
        assert np.diff(values).min() >= -1e-12


def test_additive_over_dimensions():
    rng = np.random.default_rng(33)
    mp, mq = rng.uniform(-2, 2, (2, 4))
    vp, vq = rng.uniform(0.3, 2.0, (2, 4))
    alpha = 0.7
    full = renyi_gauss_diag(DiagGaussian(mp, vp), DiagGaussian(mq, vq), alpha)
    parts = sum(
        renyi_gauss_diag(DiagGaussian([mp[i]], [vp[i]]), DiagGaussian([mq[i]], [vq[i]]), alpha)
        for i in range(4)
    )
    assert full == pytest.approx(parts, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(
    probs=st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6),
    qrobs=st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6),
    alpha=st.floats(0.0, 2.0),
)
def test_discrete_non_negative(probs, qrobs, alpha):
    size = min(len(probs), len(qrobs))
    p = np.array(probs[:size])
    q = np.array(qrobs[:size])
    p = DiscreteDist(p / p.sum())
    q = DiscreteDist(q / q.sum())
    assert renyi_discrete(p, q, alpha) >= -1e-12


@settings(max_examples=50, deadline=None)
@given(
    mu=st.floats(-3.0, 3.0),
    vp=st.floats(0.2, 3.0),
    vq=st.floats(0.2, 3.0),
    alpha=st.floats(0.0, 1.0),
)
def test_gaussian_non_negative(mu, vp, vq, alpha):
    p = DiagGaussian([mu], [vp])
    q = DiagGaussian([0.0], [vq])
    assert renyi_gauss_diag(p, q, alpha) >= -1e-12
