import logging

import numpy as np
import pytest

from rfib.autodiff import Tape, grad_check
from rfib.datagen import LabeledBatch
from rfib.divergences import DiagGaussian, renyi_gauss_diag
from rfib.model import init_encoder, init_head, lift
from rfib.objective import (
    RfibHyper,
    bernoulli_nll,
    compression_term,
    rfib_loss,
    rfib_loss_terms,
)


def small_setup(seed=0, n=8, p=5, d=4, head_hidden=16):
    rng = np.random.default_rng(seed)
    batch = LabeledBatch(
        rng.standard_normal((n, p)), rng.integers(0, 2, n), rng.integers(0, 2, n)
    )
    # regenerate until both label values appear
    while len(np.unique(batch.y)) < 2 or len(np.unique(batch.s)) < 2:
        batch = LabeledBatch(
            rng.standard_normal((n, p)), rng.integers(0, 2, n), rng.integers(0, 2, n)
        )
    enc = init_encoder(rng, p, [8], d)
    f = init_head(rng, d, head_hidden)
    g = init_head(rng, d, head_hidden, conditional=True)
    eps = rng.standard_normal((n, d))
    return batch, enc, f, g, eps


def lift_all(tape, enc, f, g):
    enc_l, _ = lift(tape, enc)
    f_l, _ = lift(tape, f)
    g_l, _ = lift(tape, g)
    return enc_l, f_l, g_l


def test_hyper_validation():
    with pytest.raises(ValueError):
        RfibHyper(-0.1, 1.0, 1.0)
    with pytest.raises(ValueError):
        RfibHyper(1.0, -1.0, 0.0)


def test_compression_zero_at_prior():
    for alpha in (0.0, 0.5, 1.0, 1.5):
        tape = Tape()
        mu = tape.leaf(np.zeros((4, 3)))
        sigma = tape.leaf(np.ones((4, 3)))
        assert float(compression_term(mu, sigma, alpha).value) == pytest.approx(
            0.0, abs=1e-14
        )


def test_compression_unit_shift_fixture():
    # same fixture the divergence oracle validates: D_0.8 = 0.4
    tape = Tape()
    mu = tape.leaf(np.ones((1, 1)))
    sigma = tape.leaf(np.ones((1, 1)))
    assert float(compression_term(mu, sigma, 0.8).value) == pytest.approx(0.4, abs=1e-12)


def test_compression_alpha_one_equals_gaussian_kl():
    rng = np.random.default_rng(1)
    mu0 = rng.normal(size=(6, 3))
    sig0 = rng.uniform(0.5, 1.5, size=(6, 3))
    tape = Tape()
    value = float(compression_term(tape.leaf(mu0), tape.leaf(sig0), 1.0).value)
    prior = DiagGaussian(np.zeros(3), np.ones(3))
    expected = np.mean(
        [
            renyi_gauss_diag(DiagGaussian(mu0[i], sig0[i] ** 2), prior, 1.0)
            for i in range(6)
        ]
    )
    assert value == pytest.approx(expected, abs=1e-12)


def test_compression_matches_closed_form_general_alpha():
    rng = np.random.default_rng(2)
    mu0 = rng.normal(size=(5, 2))
    sig0 = rng.uniform(0.5, 1.2, size=(5, 2))
    prior = DiagGaussian(np.zeros(2), np.ones(2))
    for alpha in (0.3, 0.8, 1.4):
        tape = Tape()
        value = float(compression_term(tape.leaf(mu0), tape.leaf(sig0), alpha).value)
        expected = np.mean(
            [
                renyi_gauss_diag(DiagGaussian(mu0[i], sig0[i] ** 2), prior, alpha)
                for i in range(5)
            ]
        )
        assert value == pytest.approx(expected, abs=1e-12)


def test_compression_clamps_above_finiteness_boundary(caplog):
    alpha = 1.5  # boundary at sigma^2 = 3, clamp at 2.85
    tape = Tape()
    mu = tape.leaf(np.zeros((1, 1)))
    sigma = tape.leaf(np.full((1, 1), 10.0))
    with caplog.at_level(logging.DEBUG, logger="rfib.objective"):
        node = compression_term(mu, sigma, alpha)
    assert np.isfinite(float(node.value))
    assert any("clamped" in rec.message for rec in caplog.records)
    # value equals the divergence at the clamped variance
    clamped = renyi_gauss_diag(
        DiagGaussian([0.0], [0.95 * alpha / (alpha - 1.0)]),
        DiagGaussian([0.0], [1.0]),
        alpha,
    )
    assert float(node.value) == pytest.approx(clamped, abs=1e-12)


def test_compression_differentiable():
    rng = np.random.default_rng(3)
    mu0 = rng.normal(size=(4, 2))
    sig0 = rng.uniform(0.6, 1.4, size=(4, 2))
    for alpha in (0.5, 1.0, 1.8):
        err = grad_check(
            lambda leaves: compression_term(leaves[0], leaves[1], alpha),
            [mu0, sig0],
            step=1e-5,
        )
        assert err <= 1e-6


def test_bernoulli_nll_fixtures():
    tape = Tape()
    p_half = tape.leaf(0.5 * np.ones((4, 1)))
    y = np.array([0, 1, 0, 1])
    assert float(bernoulli_nll(p_half, y).value) == pytest.approx(np.log(2), abs=1e-12)

    tape = Tape()
    p_exact = tape.leaf(np.array([[0.0], [1.0]]))
    val = float(bernoulli_nll(p_exact, np.array([0, 1])).value)
    assert 0.0 < val < 1e-6  # clamped perfect predictions, ~1e-7 scale

    tape = Tape()
    p = tape.leaf(np.array([[0.9]]))
    assert float(bernoulli_nll(p, np.array([1])).value) == pytest.approx(
        -np.log(0.9), abs=1e-12
    )


def test_bernoulli_nll_gradient():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(6, 1))
    y = rng.integers(0, 2, 6)

    def f(leaves):
        from rfib.autodiff import sigmoid

        return bernoulli_nll(sigmoid(leaves[0]), y)

    assert grad_check(f, [logits], step=1e-5) <= 1e-8


def test_loss_reductions_are_exact():
    batch, enc, f, g, eps = small_setup()
    beta = 30.0

    # alpha=1, beta2=0 versus an independently assembled bottleneck loss
    tape = Tape()
    enc_l, f_l, g_l = lift_all(tape, enc, f, g)
    full = rfib_loss(batch, enc_l, f_l, g_l, RfibHyper(1.0, beta, 0.0), eps)

    tape2 = Tape()
    enc_2, f_2, g_2 = lift_all(tape2, enc, f, g)
    from rfib.model import encode, head_forward, sample_z

    x = tape2.leaf(batch.x)
    mu, sigma = encode(enc_2, x)
    z = sample_z(mu, sigma, eps)
    ib = compression_term(mu, sigma, 1.0) + bernoulli_nll(head_forward(f_2, z), batch.y) * beta
    assert abs(float(full.value) - float(ib.value)) <= 1e-12

    # alpha=1, beta1=0 versus the conditional-only loss
    tape3 = Tape()
    enc_3, f_3, g_3 = lift_all(tape3, enc, f, g)
    full_cfb = rfib_loss(batch, enc_3, f_3, g_3, RfibHyper(1.0, 0.0, beta), eps)
    tape4 = Tape()
    enc_4, f_4, g_4 = lift_all(tape4, enc, f, g)
    mu4, sigma4 = encode(enc_4, tape4.leaf(batch.x))
    z4 = sample_z(mu4, sigma4, eps)
    cfb = compression_term(mu4, sigma4, 1.0) + bernoulli_nll(
        head_forward(g_4, z4, s=batch.s), batch.y
    ) * beta
    assert abs(float(full_cfb.value) - float(cfb.value)) <= 1e-12


def test_loss_degenerate_betas_equals_compression():
    batch, enc, f, g, eps = small_setup()
    tape = Tape()
    enc_l, f_l, g_l = lift_all(tape, enc, f, g)
    comp, _, _ = rfib_loss_terms(batch, enc_l, f_l, g_l, RfibHyper(0.7, 0.0, 0.0), eps)
    loss = rfib_loss(batch, enc_l, f_l, g_l, RfibHyper(0.7, 0.0, 0.0), eps)
    assert float(loss.value) == pytest.approx(float(comp.value), abs=0.0)


def test_loss_decomposes_into_terms():
    batch, enc, f, g, eps = small_setup(seed=6)
    hyper = RfibHyper(0.8, 12.0, 7.0)
    tape = Tape()
    enc_l, f_l, g_l = lift_all(tape, enc, f, g)
    comp, nll_f, nll_g = rfib_loss_terms(batch, enc_l, f_l, g_l, hyper, eps)
    tape2 = Tape()
    enc_2, f_2, g_2 = lift_all(tape2, enc, f, g)
    loss = rfib_loss(batch, enc_2, f_2, g_2, hyper, eps)
    assembled = (
        float(comp.value)
        + hyper.beta1 * float(nll_f.value)
        + hyper.beta2 * float(nll_g.value)
    )
    assert float(loss.value) == pytest.approx(assembled, abs=1e-12)


def test_loss_monotone_in_alpha():
    batch, enc, f, g, eps = small_setup(seed=7)
    values = []
    for alpha in (0.2, 0.5, 0.8, 1.0, 1.3, 1.6, 2.0):
        tape = Tape()
        enc_l, f_l, g_l = lift_all(tape, enc, f, g)
        values.append(
            float(rfib_loss(batch, enc_l, f_l, g_l, RfibHyper(alpha, 5.0, 5.0), eps).value)
        )
    assert np.diff(values).min() >= -1e-12


def test_loss_gradient_matches_finite_differences():
    batch, enc, f, g, eps = small_setup(seed=8)
    containers = (enc, f, g)
    counts = [len(c.named()) for c in containers]
    offsets = np.cumsum([0] + counts)
    flat = [t for c in containers for _, t in c.named()]

    def f_loss(leaves):
        lifted = [
            containers[i].with_tensors(leaves[offsets[i] : offsets[i + 1]])
            for i in range(3)
        ]
        return rfib_loss(batch, lifted[0], lifted[1], lifted[2], RfibHyper(0.8, 30.0, 30.0), eps)

    assert grad_check(f_loss, flat, step=1e-5) <= 1e-4
