"""Utility and fairness metrics over prediction records, plus report IO.

All rate computations work in fractions; ``MetricsReport`` converts to
percentages (the reporting convention throughout) and formats to two
decimals. Empty groups or empty (s, y) cells raise instead of silently
emitting NaN, so sweeps cannot accumulate corrupt rows.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EmptyGroupError",
    "PredictionRecord",
    "MetricsReport",
    "accuracy_metrics",
    "dp_gap",
    "eqodds_gap",
    "cai",
    "build_report",
    "read_records_csv",
    "write_records_csv",
    "report_to_json",
    "format_report_table",
]


class EmptyGroupError(ValueError):
    """A sensitive group or (group, label) cell has no records."""


@dataclass(frozen=True)
class PredictionRecord:
    """One evaluated example: prediction, score, true label, sensitive bit."""

    yhat: int
    phat: float
    y: int
    s: int

    def __post_init__(self):
        if self.yhat not in (0, 1) or self.y not in (0, 1) or self.s not in (0, 1):
            raise ValueError("yhat, y, s must all be binary")
        if not (0.0 <= self.phat <= 1.0):
            raise ValueError(f"phat must lie in [0, 1], got {self.phat}")


def _as_arrays(records):
    if not records:
        raise ValueError("no prediction records")
    yhat = np.array([r.yhat for r in records])
    y = np.array([r.y for r in records])
    s = np.array([r.s for r in records])
    return yhat, y, s


def accuracy_metrics(records):
    """Overall accuracy plus the subgroup gap and Rawlsian minimum.

    Returns ``(acc, acc_gap, acc_min, argmin_group)`` as fractions in [0, 1];
    ``argmin_group`` is the s value attaining the minimum (ties -> group 0).
    """
    yhat, y, s = _as_arrays(records)
    per_group = {}
    for group in (0, 1):
        mask = s == group
        if not mask.any():
            raise EmptyGroupError(f"no records with s={group}")
        per_group[group] = float(np.mean(yhat[mask] == y[mask]))
    acc = float(np.mean(yhat == y))
    gap = abs(per_group[0] - per_group[1])
    argmin_group = 0 if per_group[0] <= per_group[1] else 1
    return acc, gap, per_group[argmin_group], argmin_group


def dp_gap(records) -> float:
    """Demographic-parity gap: |P(yhat=1 | s=0) - P(yhat=1 | s=1)|."""
    yhat, _, s = _as_arrays(records)
    rates = []
    for group in (0, 1):
        mask = s == group
        if not mask.any():
            raise EmptyGroupError(f"no records with s={group}")
        rates.append(float(np.mean(yhat[mask])))
    return abs(rates[0] - rates[1])


def eqodds_gap(records) -> float:
    """Equalized-odds gap: worst label-conditional positive-rate difference.

    max over y of |P(yhat=1 | s=0, y) - P(yhat=1 | s=1, y)|; every one of the
    four (s, y) cells must be populated.
    """
    yhat, y, s = _as_arrays(records)
    gaps = []
    for label in (0, 1):
        rates = []
        for group in (0, 1):
            mask = (s == group) & (y == label)
            if not mask.any():
                raise EmptyGroupError(f"no records in cell (s={group}, y={label})")
            rates.append(float(np.mean(yhat[mask])))
        gaps.append(abs(rates[0] - rates[1]))
    return max(gaps)


def cai(lam: float, base, debiased) -> float:
    """Conjunctive accuracy improvement of ``debiased`` over ``base``.

    ``base`` and ``debiased`` are ``(accuracy, accuracy_gap)`` pairs in
    percentage points. Weighted sum of gap reduction (weight ``lam``) and
    accuracy gain (weight ``1 - lam``).
    """
    if not (0.0 <= lam <= 1.0):
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    acc_b, gap_b = base
    acc_d, gap_d = debiased
    return lam * (gap_b - gap_d) + (1.0 - lam) * (acc_d - acc_b)


@dataclass(frozen=True)
class MetricsReport:
    """All metrics in percentage points (two-decimal presentation)."""

    acc: float
    acc_gap: float
    acc_min: float
    acc_min_group: int
    dp_gap: float
    eqodds_gap: float


def build_report(records) -> MetricsReport:
    acc, gap, acc_min, argmin_group = accuracy_metrics(records)
    return MetricsReport(
        acc=100.0 * acc,
        acc_gap=100.0 * gap,
        acc_min=100.0 * acc_min,
        acc_min_group=argmin_group,
        dp_gap=100.0 * dp_gap(records),
        eqodds_gap=100.0 * eqodds_gap(records),
    )


def read_records_csv(path):
    """Load records from a CSV with header columns yhat, phat, y, s."""
    records = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"yhat", "phat", "y", "s"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"{path}: need columns {sorted(required)}")
        for row in reader:
            records.append(
                PredictionRecord(
                    yhat=int(row["yhat"]),
                    phat=float(row["phat"]),
                    y=int(row["y"]),
                    s=int(row["s"]),
                )
            )
    return records


def write_records_csv(path, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["yhat", "phat", "y", "s"])
        for r in records:
            writer.writerow([r.yhat, repr(r.phat), r.y, r.s])


def report_to_json(report: MetricsReport) -> str:
    doc = {
        "acc": report.acc,
        "acc_gap": report.acc_gap,
        "acc_min": report.acc_min,
        "acc_min_group": report.acc_min_group,
        "dp_gap": report.dp_gap,
        "eqodds_gap": report.eqodds_gap,
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def format_report_table(rows, title: str | None = None) -> str:
    """Aligned text table; ``rows`` maps a row label to a MetricsReport."""
    headers = ["method", "acc", "acc_gap", "acc_min (grp)", "dp_gap", "eqodds_gap"]
    body = []
    for label, rep in rows.items():
        body.append(
            [
                label,
                f"{rep.acc:.2f}",
                f"{rep.acc_gap:.2f}",
                f"{rep.acc_min:.2f} ({rep.acc_min_group})",
                f"{rep.dp_gap:.2f}",
                f"{rep.eqodds_gap:.2f}",
            ]
        )
    widths = [
        max(len(headers[i]), *(len(r[i]) for r in body)) if body else len(headers[i])
        for i in range(len(headers))
    ]
    lines = []
    if title:
        lines.append(title)
    lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)))
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(r[i].ljust(widths[i]) for i in range(len(headers))))
    return "\n".join(lines)
