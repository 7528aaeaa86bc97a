"""Stochastic Gaussian encoder, Bernoulli heads, and the downstream classifier.

The encoder is an MLP with relu hidden layers and two linear output layers of
width ``d`` producing the posterior mean and log standard deviation; emitting
log-sigma keeps sigma strictly positive with no constraint handling. Heads are
two linear layers (relu between) followed by a sigmoid; the conditional head
additionally consumes the sensitive bit as one extra input column.

Parameter containers hold plain float64 arrays for storage and optimizer
updates; ``lift`` produces a same-shaped container of graph Nodes so the
forward functions can be written once against the autodiff API.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .autodiff import Node, Tape, broadcast, exp, relu, sigmoid

__all__ = [
    "EncoderParams",
    "HeadParams",
    "LogisticParams",
    "init_encoder",
    "init_head",
    "lift",
    "encode",
    "sample_z",
    "head_forward",
    "logistic_fit",
    "logistic_predict",
    "save_checkpoint",
    "load_checkpoint",
    "save_model",
    "load_model",
]

CHECKPOINT_FORMAT = "rfib.checkpoint"
CHECKPOINT_VERSION = 1

HEAD_HIDDEN_DEFAULT = 32


@dataclass
class EncoderParams:
    """MLP trunk plus two output layers of width d (mean and log-sigma)."""

    hidden_w: list
    hidden_b: list
    mu_w: object
    mu_b: object
    logsigma_w: object
    logsigma_b: object

    def named(self, prefix="encoder"):
        items = []
        for i, (w, b) in enumerate(zip(self.hidden_w, self.hidden_b)):
            items.append((f"{prefix}.hidden{i}.w", w))
            items.append((f"{prefix}.hidden{i}.b", b))
        items += [
            (f"{prefix}.mu.w", self.mu_w),
            (f"{prefix}.mu.b", self.mu_b),
            (f"{prefix}.logsigma.w", self.logsigma_w),
            (f"{prefix}.logsigma.b", self.logsigma_b),
        ]
        return items

    def with_tensors(self, tensors):
        n = len(self.hidden_w)
        return EncoderParams(
            hidden_w=list(tensors[0 : 2 * n : 2]),
            hidden_b=list(tensors[1 : 2 * n : 2]),
            mu_w=tensors[2 * n],
            mu_b=tensors[2 * n + 1],
            logsigma_w=tensors[2 * n + 2],
            logsigma_b=tensors[2 * n + 3],
        )

    @property
    def latent_dim(self) -> int:
        return _shape(self.mu_w)[1]


@dataclass
class HeadParams:
    """Two linear layers + sigmoid; ``w1_s`` present only on the conditional head."""

    w1: object
    w1_s: object
    b1: object
    w2: object
    b2: object

    @property
    def conditional(self) -> bool:
        return self.w1_s is not None

    def named(self, prefix="head"):
        items = [(f"{prefix}.l1.w", self.w1)]
        if self.w1_s is not None:
            items.append((f"{prefix}.l1.w_s", self.w1_s))
        items += [
            (f"{prefix}.l1.b", self.b1),
            (f"{prefix}.l2.w", self.w2),
            (f"{prefix}.l2.b", self.b2),
        ]
        return items

    def with_tensors(self, tensors):
        if self.conditional:
            w1, w1_s, b1, w2, b2 = tensors
        else:
            (w1, b1, w2, b2), w1_s = tensors, None
        return HeadParams(w1=w1, w1_s=w1_s, b1=b1, w2=w2, b2=b2)


@dataclass
class LogisticParams:
    weight: np.ndarray
    bias: float


def _shape(tensor):
    return tensor.value.shape if isinstance(tensor, Node) else tensor.shape


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_encoder(rng, in_dim: int, hidden, d: int) -> EncoderParams:
    """Glorot-uniform weights, zero biases, drawn in a fixed order from ``rng``."""
    hidden = list(hidden)
    sizes = [in_dim] + hidden
    hidden_w = [_glorot(rng, a, b) for a, b in zip(sizes[:-1], sizes[1:])]
    hidden_b = [np.zeros(b) for b in hidden]
    last = sizes[-1]
    return EncoderParams(
        hidden_w=hidden_w,
        hidden_b=hidden_b,
        mu_w=_glorot(rng, last, d),
        mu_b=np.zeros(d),
        logsigma_w=_glorot(rng, last, d),
        logsigma_b=np.zeros(d),
    )


def init_head(rng, d: int, hidden: int = HEAD_HIDDEN_DEFAULT, conditional: bool = False) -> HeadParams:
    """First layer sized for z (plus the s column when conditional)."""
    fan_in = d + 1 if conditional else d
    w1_full = _glorot(rng, fan_in, hidden)
    w1, w1_s = (w1_full[:d], w1_full[d:]) if conditional else (w1_full, None)
    return HeadParams(
        w1=w1,
        w1_s=w1_s,
        b1=np.zeros(hidden),
        w2=_glorot(rng, hidden, 1),
        b2=np.zeros(1),
    )


def lift(tape: Tape, params):
    """Rebuild a parameter container with its arrays replaced by tape leaves.

    Returns ``(lifted, leaves)`` where ``leaves`` follows ``params.named()``
    order, for pairing adjoints back with the stored arrays.
    """
    leaves = [tape.leaf(t) for _, t in params.named()]
    return params.with_tensors(leaves), leaves


def encode(params: EncoderParams, x: Node):
    """Forward the encoder; returns ``(mu, sigma)`` Nodes, sigma = exp(logsigma) > 0."""
    n = x.value.shape[0]
    h = x
    for w, b in zip(params.hidden_w, params.hidden_b):
        h = relu(h @ w + broadcast(b, n))
    mu = h @ params.mu_w + broadcast(params.mu_b, n)
    logsigma = h @ params.logsigma_w + broadcast(params.logsigma_b, n)
    return mu, exp(logsigma)


def sample_z(mu: Node, sigma: Node, eps) -> Node:
    """Reparameterized draw ``z = mu + sigma * eps``; eps is a constant."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != mu.value.shape or sigma.value.shape != mu.value.shape:
        raise ValueError(
            f"shape mismatch: mu {mu.value.shape}, sigma {sigma.value.shape}, "
            f"eps {eps.shape}"
        )
    return mu + sigma * eps


def head_forward(params: HeadParams, z: Node, s=None) -> Node:
    """Bernoulli probability per row, in (0, 1).

    The conditional head requires the sensitive labels ``s``; the plain head
    rejects them.
    """
    if params.conditional and s is None:
        raise ValueError("conditional head requires s")
    if not params.conditional and s is not None:
        raise ValueError("unconditional head does not take s")
    n = z.value.shape[0]
    pre = z @ params.w1
    if params.conditional:
        s_col = np.asarray(s, dtype=np.float64).reshape(n, 1)
        pre = pre + z.tape.leaf(s_col) @ params.w1_s
    h = relu(pre + broadcast(params.b1, n))
    return sigmoid(h @ params.w2 + broadcast(params.b2, n))


# -- downstream logistic-regression classifier (plain numpy) -----------------


def logistic_fit(
    z: np.ndarray,
    y: np.ndarray,
    l2: float = 1.0,
    learning_rate: float = 0.1,
    tol: float = 1e-4,
    max_iter: int = 1000,
) -> LogisticParams:
    """Full-batch gradient descent on mean cross-entropy + (l2/2)*||w||^2.

    The penalty applies to the averaged loss (so duplicating every row leaves
    the optimum unchanged) and excludes the bias. The step size halves whenever
    a step would increase the loss; convergence is sup-norm gradient <= tol.
    """
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if z.ndim != 2 or z.shape[0] != y.size:
        raise ValueError("z must be N x d with one label per row")
    n = y.size
    if n < 2 or len(np.unique(y)) < 2:
        raise ValueError("logistic fit needs at least two rows and both classes")

    w = np.zeros(z.shape[1])
    b = 0.0

    def loss(wv, bv):
        t = z @ wv + bv
        # log(1 + exp(t)) - y*t, stable for large |t|
        return float(np.mean(np.logaddexp(0.0, t) - y * t) + 0.5 * l2 * wv @ wv)

    current = loss(w, b)
    lr = learning_rate
    for _ in range(max_iter):
        p = expit(z @ w + b)
        gw = z.T @ (p - y) / n + l2 * w
        gb = float(np.mean(p - y))
        if max(np.max(np.abs(gw), initial=0.0), abs(gb)) <= tol:
            break
        while True:
            w_new = w - lr * gw
            b_new = b - lr * gb
            candidate = loss(w_new, b_new)
            if candidate <= current or lr < 1e-12:
                break
            lr *= 0.5
        if lr < 1e-12:
            break
        w, b, current = w_new, b_new, candidate
    return LogisticParams(weight=w, bias=b)


def logistic_predict(params: LogisticParams, z: np.ndarray):
    """Returns ``(yhat, phat)``; the 0.5 threshold resolves ties to class 1."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != params.weight.size:
        raise ValueError(f"z width {z.shape} does not match classifier weights")
    phat = expit(z @ params.weight + params.bias)
    yhat = (phat >= 0.5).astype(np.int64)
    return yhat, phat


# -- checkpoint container -----------------------------------------------------


def save_checkpoint(path, named_tensors, meta=None) -> None:
    """Write tensors to a versioned JSON container: name, shape, row-major data."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "tensors": [
            {
                "name": name,
                "shape": list(np.asarray(t).shape),
                "data": np.asarray(t, dtype=np.float64).ravel().tolist(),
            }
            for name, t in named_tensors
        ],
    }
    _atomic_write_text(path, json.dumps(doc))


def load_checkpoint(path):
    """Read a container written by ``save_checkpoint``; returns (tensors, meta)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a checkpoint file: {path}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    tensors = {
        entry["name"]: np.asarray(entry["data"], dtype=np.float64).reshape(
            entry["shape"]
        )
        for entry in doc["tensors"]
    }
    return tensors, doc.get("meta", {})


def save_model(path, encoder: EncoderParams, head_f: HeadParams, head_g: HeadParams, meta=None) -> None:
    named = (
        encoder.named("encoder") + head_f.named("head_f") + head_g.named("head_g")
    )
    full_meta = {"hidden": [int(_shape(w)[1]) for w in encoder.hidden_w]}
    full_meta.update(meta or {})
    save_checkpoint(path, named, full_meta)


def load_model(path):
    """Rebuild (encoder, head_f, head_g, meta) from a model checkpoint."""
    tensors, meta = load_checkpoint(path)
    hidden = meta["hidden"]
    enc = EncoderParams(
        hidden_w=[tensors[f"encoder.hidden{i}.w"] for i in range(len(hidden))],
        hidden_b=[tensors[f"encoder.hidden{i}.b"] for i in range(len(hidden))],
        mu_w=tensors["encoder.mu.w"],
        mu_b=tensors["encoder.mu.b"],
        logsigma_w=tensors["encoder.logsigma.w"],
        logsigma_b=tensors["encoder.logsigma.b"],
    )

    def head(prefix, conditional):
        return HeadParams(
            w1=tensors[f"{prefix}.l1.w"],
            w1_s=tensors[f"{prefix}.l1.w_s"] if conditional else None,
            b1=tensors[f"{prefix}.l1.b"],
            w2=tensors[f"{prefix}.l2.w"],
            b2=tensors[f"{prefix}.l2.b"],
        )

    return enc, head("head_f", False), head("head_g", True), meta


def _atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
