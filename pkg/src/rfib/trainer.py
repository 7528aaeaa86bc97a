"""Seeded mini-batch training loop and the evaluation pipeline.

One ``numpy`` generator seeded from the config drives weight init, epoch
shuffling, and the per-batch noise draws, in that order, so a (seed, config,
data) triple fully determines the outcome. Evaluation re-encodes data and, by
default, uses the posterior mean as the representation so downstream metrics
are deterministic; ``z_source="sample"`` draws one reparameterized sample
instead.

The downstream classifier is fit on training-split representations and
applied to held-out data (two-stage pipeline).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import AutodiffError, Tape, backward
from .metrics import PredictionRecord
from .model import (
    LogisticParams,
    encode,
    init_encoder,
    init_head,
    lift,
    logistic_fit,
    logistic_predict,
)
from .objective import RfibHyper, rfib_loss_terms

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "TrainingError",
    "Adam",
    "Sgd",
    "train",
    "representations",
    "fit_downstream",
    "evaluate",
    "write_history_csv",
]

logger = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "sgd")
EVAL_MODES = ("mean", "sample")


class TrainingError(RuntimeError):
    """Training aborted; the message names the term that went non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    hyper: RfibHyper
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    eval_mode: str = "mean"
    hidden: tuple = (64, 64)
    latent_dim: int = 8
    head_hidden: int = 32

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.eval_mode not in EVAL_MODES:
            raise ValueError(f"eval_mode must be one of {EVAL_MODES}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if self.latent_dim < 1 or self.head_hidden < 1:
            raise ValueError("latent_dim and head_hidden must be positive")


@dataclass
class TrainHistory:
    """Per-epoch batch-size-weighted means of the loss and its three terms."""

    loss: list = field(default_factory=list)
    compression: list = field(default_factory=list)
    nll_f: list = field(default_factory=list)
    nll_g: list = field(default_factory=list)

    def __len__(self):
        return len(self.loss)


class Sgd:
    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, values, grads) -> None:
        for v, g in zip(values, grads):
            v -= self.learning_rate * g


class Adam:
    """Standard Adam; moment decay (0.9, 0.999), epsilon 1e-8."""

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, values, grads) -> None:
        if self.m is None:
            self.m = [np.zeros_like(v) for v in values]
            self.v = [np.zeros_like(v) for v in values]
        self.t += 1
        for i, (val, g) in enumerate(zip(values, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g**2
            m_hat = self.m[i] / (1.0 - self.beta1**self.t)
            v_hat = self.v[i] / (1.0 - self.beta2**self.t)
            val -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def _make_optimizer(config: TrainConfig):
    if config.optimizer == "adam":
        return Adam(config.learning_rate)
    return Sgd(config.learning_rate)


def train(config: TrainConfig, data):
    """Train encoder and both heads on ``data``; returns them plus the history.

    Deterministic per (seed, config, data). Aborts with ``TrainingError``
    naming the offending term if the loss goes non-finite.
    """
    n = data.x.shape[0]
    if config.batch_size > n:
        raise ValueError(f"batch_size {config.batch_size} exceeds dataset size {n}")
    if len(np.unique(data.y)) < 2:
        raise ValueError("training data must contain both label classes")

    rng = np.random.default_rng(config.seed)
    in_dim = data.x.shape[1]
    encoder = init_encoder(rng, in_dim, config.hidden, config.latent_dim)
    head_f = init_head(rng, config.latent_dim, config.head_hidden, conditional=False)
    head_g = init_head(rng, config.latent_dim, config.head_hidden, conditional=True)

    arrays = (
        [t for _, t in encoder.named()]
        + [t for _, t in head_f.named()]
        + [t for _, t in head_g.named()]
    )
    optimizer = _make_optimizer(config)
    history = TrainHistory()

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        sums = np.zeros(4)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = data.subset(idx)
            eps = rng.standard_normal((idx.size, config.latent_dim))

            tape = Tape()
            enc_l, enc_leaves = lift(tape, encoder)
            f_l, f_leaves = lift(tape, head_f)
            g_l, g_leaves = lift(tape, head_g)
            try:
                comp, nll_f, nll_g = rfib_loss_terms(
                    batch, enc_l, f_l, g_l, config.hyper, eps
                )
                loss = comp + nll_f * config.hyper.beta1 + nll_g * config.hyper.beta2
            except AutodiffError as err:
                raise TrainingError(
                    f"epoch {epoch}, batch at {start}: loss went non-finite ({err})"
                ) from err
            _check_terms(epoch, start, comp, nll_f, nll_g, loss)
            backward(loss)

            grads = [leaf.adjoint for leaf in enc_leaves + f_leaves + g_leaves]
            optimizer.step(arrays, grads)
            sums += idx.size * np.array(
                [
                    float(loss.value),
                    float(comp.value),
                    float(nll_f.value),
                    float(nll_g.value),
                ]
            )
        means = sums / n
        history.loss.append(float(means[0]))
        history.compression.append(float(means[1]))
        history.nll_f.append(float(means[2]))
        history.nll_g.append(float(means[3]))

    return encoder, head_f, head_g, history


def _check_terms(epoch, start, comp, nll_f, nll_g, loss) -> None:
    for name, node in (
        ("compression", comp),
        ("nll_f", nll_f),
        ("nll_g", nll_g),
        ("total loss", loss),
    ):
        if not np.isfinite(float(node.value)):
            raise TrainingError(
                f"epoch {epoch}, batch at {start}: {name} is non-finite"
            )


def representations(encoder, x, z_source: str = "mean", rng=None) -> np.ndarray:
    """Encode ``x`` and return the representation matrix as plain floats."""
    if z_source not in EVAL_MODES:
        raise ValueError(f"z_source must be one of {EVAL_MODES}")
    tape = Tape()
    enc_l, _ = lift(tape, encoder)
    mu, sigma = encode(enc_l, tape.leaf(np.asarray(x, dtype=np.float64)))
    if z_source == "mean":
        return mu.value.copy()
    if rng is None:
        raise ValueError("z_source='sample' needs a generator")
    return mu.value + sigma.value * rng.standard_normal(mu.value.shape)


def fit_downstream(encoder, data, z_source: str = "mean", rng=None) -> LogisticParams:
    """Fit the logistic classifier on this split's representations."""
    return logistic_fit(representations(encoder, data.x, z_source, rng), data.y)


def evaluate(encoder, classifier: LogisticParams, data, z_source: str = "mean", rng=None):
    """One prediction record per example: (yhat, phat, y, s)."""
    z = representations(encoder, data.x, z_source, rng)
    yhat, phat = logistic_predict(classifier, z)
    return [
        PredictionRecord(int(yh), float(ph), int(yv), int(sv))
        for yh, ph, yv, sv in zip(yhat, phat, data.y, data.s)
    ]


def write_history_csv(path, history: TrainHistory) -> None:
    """Epoch-indexed CSV of the loss and its terms; floats use repr for stability."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "compression", "nll_f", "nll_g"])
        rows = zip(history.loss, history.compression, history.nll_f, history.nll_g)
        for epoch, (lo, co, nf, ng) in enumerate(rows):
            writer.writerow([epoch, repr(lo), repr(co), repr(nf), repr(ng)])
