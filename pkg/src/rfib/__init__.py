"""Desk-scale lab for fair representation learning under a tunable-order
divergence bottleneck: a small autodiff engine, exact divergences with a
quadrature oracle, the three-term training objective, a seeded trainer,
fairness metrics, and synthetic bias generators."""

from .autodiff import Node, Tape, backward, forward_op, grad_check
from .datagen import LabeledBatch, SynthSpec, default_synth_spec, synth_generate
from .divergences import (
    DiagGaussian,
    DiscreteDist,
    quadrature_oracle_1d,
    renyi_discrete,
    renyi_gauss_diag,
)
from .metrics import (
    MetricsReport,
    PredictionRecord,
    accuracy_metrics,
    build_report,
    cai,
    dp_gap,
    eqodds_gap,
)
from .objective import RfibHyper, bernoulli_nll, compression_term, rfib_loss
from .trainer import TrainConfig, TrainHistory, evaluate, fit_downstream, train

__version__ = "0.1.0"
