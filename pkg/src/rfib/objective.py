"""The three-term training objective.

Per batch the loss is

    J = mean_i D_alpha(N(mu_i, sigma_i^2 I) || N(0, I))
        + beta1 * NLL(f(z_i), y_i)
        + beta2 * NLL(g(z_i, s_i), y_i)

with z the single reparameterized Monte Carlo sample per example. The
compression weight is fixed at 1; beta1 weights the plain utility head and
beta2 the sensitive-conditioned head. Setting alpha=1, beta2=0 recovers the
classic variational bottleneck; alpha=1, beta1=0 recovers its conditional
(fairness) variant.

Everything here is built from autodiff primitives so gradients flow to the
encoder and both heads.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import Node, exp, log, relu
from .divergences import KL_GUARD_BAND
from .model import encode, head_forward, sample_z

__all__ = [
    "RfibHyper",
    "compression_term",
    "bernoulli_nll",
    "rfib_loss_terms",
    "rfib_loss",
    "PROB_CLAMP",
    "VARIANCE_CLAMP_FRACTION",
]

logger = logging.getLogger(__name__)

# Head probabilities are clamped into [PROB_CLAMP, 1 - PROB_CLAMP] before log.
PROB_CLAMP = 1e-7

# For alpha > 1 the divergence is finite only while sigma^2 < alpha/(alpha-1);
# variances are clamped to this fraction of the boundary so a drifting encoder
# degrades smoothly instead of aborting mid-run.
VARIANCE_CLAMP_FRACTION = 0.95

_clamp_warned: set[float] = set()


@dataclass(frozen=True)
class RfibHyper:
    """Objective hyperparameters: divergence order and the two utility weights."""

    alpha: float
    beta1: float
    beta2: float

    def __post_init__(self):
        if not (self.alpha >= 0.0):
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.beta1 < 0.0 or self.beta2 < 0.0:
            raise ValueError("beta1 and beta2 must be >= 0")


def _clip_max(x: Node, cap: float) -> Node:
    # min(x, cap) composed from relu so it stays inside the primitive set
    return cap - relu(cap - x)


def _clip_min(x: Node, floor: float) -> Node:
    return floor + relu(x - floor)


def compression_term(mu: Node, sigma: Node, alpha: float) -> Node:
    """Batch-mean divergence of the per-example posterior from N(0, I).

    Differentiable w.r.t. ``mu`` and ``sigma``. For alpha > 1 the per-dimension
    variance is clamped below the finiteness boundary (logged when it bites);
    at alpha=1 this is exactly the diagonal-Gaussian KL term, at alpha=0 it is
    identically zero.
    """
    if not (alpha >= 0.0):
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if mu.value.shape != sigma.value.shape:
        raise ValueError(
            f"mu shape {mu.value.shape} != sigma shape {sigma.value.shape}"
        )
    n = mu.value.shape[0]
    if alpha == 0.0:
        return mu.tape.leaf(0.0)

    var = sigma.square()
    if abs(alpha - 1.0) < KL_GUARD_BAND:
        per_elem = 0.5 * (var + mu.square() - 1.0 - log(var))
        return per_elem.sum() * (1.0 / n)

    if alpha > 1.0:
        cap = VARIANCE_CLAMP_FRACTION * alpha / (alpha - 1.0)
        n_clamped = int(np.sum(var.value > cap))
        if n_clamped:
            level = (
                logging.WARNING if alpha not in _clamp_warned else logging.DEBUG
            )
            _clamp_warned.add(alpha)
            logger.log(
                level,
                "compression term clamped %d variance entries to %.4g (alpha=%g)",
                n_clamped,
                cap,
                alpha,
            )
        var = _clip_max(var, cap)

    mix = var * (1.0 - alpha) + alpha  # per-dim (1-a)*sigma^2 + a, prior var = 1
    quad = mu.square() * alpha * 0.5 * _reciprocal(mix)
    log_ratio = log(mix) - log(var) * (1.0 - alpha)  # prior log-var term is 0
    per_elem = quad - log_ratio * (1.0 / (2.0 * (alpha - 1.0)))
    return per_elem.sum() * (1.0 / n)


def _reciprocal(x: Node) -> Node:
    # 1/x for strictly positive x, composed as exp(-log x)
    return exp(-log(x))


def bernoulli_nll(probs: Node, y) -> Node:
    """Mean negative log-likelihood of binary labels under head probabilities.

    Probabilities are clamped into [1e-7, 1 - 1e-7] first, so saturated heads
    produce large-but-finite losses instead of infinities.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    if probs.value.shape != y.shape:
        raise ValueError(f"probs shape {probs.value.shape} != labels shape {y.shape}")
    n = y.shape[0]
    p = _clip_min(_clip_max(probs, 1.0 - PROB_CLAMP), PROB_CLAMP)
    ll = y * log(p) + (1.0 - y) * log(1.0 - p)
    return ll.sum() * (-1.0 / n)


def rfib_loss_terms(batch, encoder, head_f, head_g, hyper: RfibHyper, eps):
    """Forward the full model once; returns the three scalar term Nodes.

    ``encoder``/``head_f``/``head_g`` must be Node-valued parameter containers
    on one tape (see ``model.lift``); ``batch`` and ``eps`` are plain arrays,
    with ``eps`` the single standard-normal draw per example.
    """
    tape = _tape_of(encoder)
    x = tape.leaf(np.asarray(batch.x, dtype=np.float64))
    mu, sigma = encode(encoder, x)
    z = sample_z(mu, sigma, eps)
    comp = compression_term(mu, sigma, hyper.alpha)
    nll_f = bernoulli_nll(head_forward(head_f, z), batch.y)
    nll_g = bernoulli_nll(head_forward(head_g, z, s=batch.s), batch.y)
    return comp, nll_f, nll_g


def rfib_loss(batch, encoder, head_f, head_g, hyper: RfibHyper, eps) -> Node:
    """The scalar training objective; see module docstring."""
    comp, nll_f, nll_g = rfib_loss_terms(batch, encoder, head_f, head_g, hyper, eps)
    return comp + nll_f * hyper.beta1 + nll_g * hyper.beta2


def _tape_of(encoder):
    tensor = encoder.mu_w
    if not isinstance(tensor, Node):
        raise TypeError("rfib_loss needs Node-valued parameters; use model.lift")
    return tensor.tape
