"""End-to-end experiment orchestration: config files, runs, sweeps, audits.

Config files are flat ``key = value`` text (``#`` starts a comment); the full
schema is documented in the README. Every run writes a self-describing bundle
directory: the echoed config, training history, prediction records, model
checkpoint, and metrics, with the bundle index written last so a complete
index implies complete artifacts. Re-running from the echoed config
reproduces the bundle.
"""

from __future__ import annotations

import io
import itertools
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import metrics as fm
from .datagen import (
    SynthSpec,
    default_synth_spec,
    load_manifest,
    manifest_to_batch,
    synth_generate,
)
from .model import _atomic_write_text, save_model
from .objective import RfibHyper
from .trainer import TrainConfig, evaluate, fit_downstream, train, write_history_csv

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ResultBundle",
    "parse_config_file",
    "config_from_mapping",
    "config_echo",
    "method_tag",
    "run_experiment",
    "sweep",
    "audit",
    "SEED_ENV_VAR",
]

SEED_ENV_VAR = "RFIB_SEED"

SUMMARY_COLUMNS = (
    "alpha",
    "beta1",
    "beta2",
    "acc",
    "acc_gap",
    "acc_min",
    "dp_gap",
    "eqodds_gap",
)


class ConfigError(ValueError):
    """Bad config file: unknown key, bad value, or missing data source."""


_DEFAULTS = {
    "data": None,  # required: synthetic | manifest
    "synth.d_x": "10",
    "synth.y_signal": "3.0",
    "synth.s_signal": "1.0",
    "synth.noise_std": "1.0",
    "synth.train_per_cell": "150",
    "synth.empty_cell": "1,1",
    "synth.test_per_cell": "250",
    "manifest.path": None,
    "manifest.thumb": "8",
    "manifest.test_fraction": "0.25",
    "alpha": "1.0",
    "beta1": "30.0",
    "beta2": "0.0",
    "epochs": "50",
    "batch_size": "64",
    "learning_rate": "0.001",
    "optimizer": "adam",
    "seed": "0",
    "eval_mode": "mean",
    "hidden": "64,64",
    "latent_dim": "8",
    "head_hidden": "32",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a data source plus a training configuration."""

    data_kind: str
    train: TrainConfig
    synth: SynthSpec | None = None
    manifest_path: str | None = None
    manifest_thumb: int = 8
    manifest_test_fraction: float = 0.25


@dataclass(frozen=True)
class ResultBundle:
    """Index of one finished run's artifacts."""

    out_dir: str
    method: str
    seed: int
    report: fm.MetricsReport
    files: dict


def parse_config_file(path) -> dict:
    """Flat key = value lines into a string mapping; unknown keys rejected."""
    mapping = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in mapping:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        mapping[key] = value
    return mapping


def _get(mapping, key, cast):
    raw = mapping.get(key, _DEFAULTS[key])
    if raw is None:
        raise ConfigError(f"missing required key {key!r}")
    try:
        return cast(raw)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({err})") from err


def _int_tuple(raw: str):
    return tuple(int(v) for v in str(raw).split(",") if v.strip() != "")


def config_from_mapping(mapping, seed_override=None) -> ExperimentConfig:
    """Validate a parsed mapping and build the experiment config.

    ``seed_override`` (a CLI flag) wins over the file; the RFIB_SEED
    environment variable wins over both.
    """
    unknown = set(mapping) - set(_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    data_kind = _get(mapping, "data", str)
    if data_kind not in ("synthetic", "manifest"):
        raise ConfigError("data must be 'synthetic' or 'manifest'")

    seed = _get(mapping, "seed", int)
    if seed_override is not None:
        seed = int(seed_override)
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError as err:
            raise ConfigError(f"bad {SEED_ENV_VAR}: {env_seed!r}") from err

    try:
        hyper = RfibHyper(
            alpha=_get(mapping, "alpha", float),
            beta1=_get(mapping, "beta1", float),
            beta2=_get(mapping, "beta2", float),
        )
        train_cfg = TrainConfig(
            hyper=hyper,
            epochs=_get(mapping, "epochs", int),
            batch_size=_get(mapping, "batch_size", int),
            learning_rate=_get(mapping, "learning_rate", float),
            optimizer=_get(mapping, "optimizer", str),
            seed=seed,
            eval_mode=_get(mapping, "eval_mode", str),
            hidden=_get(mapping, "hidden", _int_tuple),
            latent_dim=_get(mapping, "latent_dim", int),
            head_hidden=_get(mapping, "head_hidden", int),
        )
    except ValueError as err:
        raise ConfigError(str(err)) from err

    synth = None
    manifest_path = None
    if data_kind == "synthetic":
        empty_raw = _get(mapping, "synth.empty_cell", str)
        empty_cell = None if empty_raw.lower() == "none" else _int_tuple(empty_raw)
        try:
            synth = default_synth_spec(
                d_x=_get(mapping, "synth.d_x", int),
                y_signal=_get(mapping, "synth.y_signal", float),
                s_signal=_get(mapping, "synth.s_signal", float),
                noise_std=_get(mapping, "synth.noise_std", float),
                train_per_cell=_get(mapping, "synth.train_per_cell", int),
                test_per_cell=_get(mapping, "synth.test_per_cell", int),
                empty_cell=empty_cell,
            )
        except ValueError as err:
            raise ConfigError(str(err)) from err
    else:
        manifest_path = _get(mapping, "manifest.path", str)

    return ExperimentConfig(
        data_kind=data_kind,
        train=train_cfg,
        synth=synth,
        manifest_path=manifest_path,
        manifest_thumb=_get(mapping, "manifest.thumb", int),
        manifest_test_fraction=_get(mapping, "manifest.test_fraction", float),
    )


def config_echo(cfg: ExperimentConfig) -> str:
    """Canonical flat-text rendering of a config (re-parsable)."""
    lines = [f"data = {cfg.data_kind}"]
    if cfg.data_kind == "synthetic":
        spec = cfg.synth
        empty = [
            cell for cell in sorted(spec.cell_counts) if spec.cell_counts[cell] == 0
        ]
        nonzero = [spec.cell_counts[c] for c in spec.cell_counts if spec.cell_counts[c]]
        lines += [
            f"synth.d_x = {spec.d_x}",
            f"synth.y_signal = {_mean_signal(spec, axis='y')!r}",
            f"synth.s_signal = {_mean_signal(spec, axis='s')!r}",
            f"synth.noise_std = {spec.noise_std!r}",
            f"synth.train_per_cell = {max(nonzero)}",
            "synth.empty_cell = "
            + (f"{empty[0][0]},{empty[0][1]}" if empty else "none"),
            f"synth.test_per_cell = {spec.balanced_test_count}",
        ]
    else:
        lines += [
            f"manifest.path = {cfg.manifest_path}",
            f"manifest.thumb = {cfg.manifest_thumb}",
            f"manifest.test_fraction = {cfg.manifest_test_fraction!r}",
        ]
    t = cfg.train
    lines += [
        f"alpha = {t.hyper.alpha!r}",
        f"beta1 = {t.hyper.beta1!r}",
        f"beta2 = {t.hyper.beta2!r}",
        f"epochs = {t.epochs}",
        f"batch_size = {t.batch_size}",
        f"learning_rate = {t.learning_rate!r}",
        f"optimizer = {t.optimizer}",
        f"seed = {t.seed}",
        f"eval_mode = {t.eval_mode}",
        "hidden = " + ",".join(str(h) for h in t.hidden),
        f"latent_dim = {t.latent_dim}",
        f"head_hidden = {t.head_hidden}",
    ]
    return "\n".join(lines) + "\n"


def _mean_signal(spec: SynthSpec, axis: str) -> float:
    # Recover the scalar signal magnitudes from the default layout.
    if axis == "y":
        return float(spec.means[(1, 0)][0])
    return float(spec.means[(0, 1)][spec.d_x - 1])


def method_tag(hyper: RfibHyper) -> str:
    """IB at (alpha=1, beta2=0), CFB at (alpha=1, beta1=0), else RFIB."""
    if hyper.alpha == 1.0 and hyper.beta2 == 0.0 and hyper.beta1 > 0.0:
        return "IB"
    if hyper.alpha == 1.0 and hyper.beta1 == 0.0 and hyper.beta2 > 0.0:
        return "CFB"
    return "RFIB"


def load_data(cfg: ExperimentConfig):
    """Materialize (train, test) batches for a config."""
    if cfg.data_kind == "synthetic":
        return synth_generate(cfg.synth, seed=cfg.train.seed)
    rows = load_manifest(cfg.manifest_path)
    batch = manifest_to_batch(rows, thumb_size=cfg.manifest_thumb)
    rng = np.random.default_rng(cfg.train.seed)
    order = rng.permutation(len(batch))
    n_test = max(1, int(round(cfg.manifest_test_fraction * len(batch))))
    test_idx, train_idx = order[:n_test], order[n_test:]
    if len(train_idx) < 2:
        raise ConfigError("manifest too small to split into train and test")
    return batch.subset(train_idx), batch.subset(test_idx)


def _atomic_via(path, write_fn) -> None:
    tmp = path + ".part"
    write_fn(tmp)
    os.replace(tmp, path)


def run_experiment(cfg: ExperimentConfig, out_dir) -> ResultBundle:
    """Train, fit the downstream classifier, evaluate, and write the bundle."""
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    train_data, test_data = load_data(cfg)

    encoder, head_f, head_g, history = train(cfg.train, train_data)

    eval_rng = np.random.default_rng(cfg.train.seed + 1)  # only used when sampling
    classifier = fit_downstream(encoder, train_data, cfg.train.eval_mode, eval_rng)
    records = evaluate(encoder, classifier, test_data, cfg.train.eval_mode, eval_rng)
    report = fm.build_report(records)

    files = {
        "config": os.path.join(out_dir, "config.txt"),
        "history": os.path.join(out_dir, "history.csv"),
        "predictions": os.path.join(out_dir, "predictions.csv"),
        "checkpoint": os.path.join(out_dir, "checkpoint.json"),
        "metrics": os.path.join(out_dir, "metrics.json"),
        "bundle": os.path.join(out_dir, "bundle.json"),
    }
    _atomic_write_text(files["config"], config_echo(cfg))
    _atomic_via(files["history"], lambda p: write_history_csv(p, history))
    _atomic_via(files["predictions"], lambda p: fm.write_records_csv(p, records))
    save_model(
        files["checkpoint"],
        encoder,
        head_f,
        head_g,
        meta={"seed": cfg.train.seed, "latent_dim": cfg.train.latent_dim},
    )
    _atomic_write_text(files["metrics"], fm.report_to_json(report) + "\n")

    tag = method_tag(cfg.train.hyper)
    bundle = ResultBundle(
        out_dir=out_dir, method=tag, seed=cfg.train.seed, report=report, files=files
    )
    _atomic_write_text(
        files["bundle"],
        json.dumps(
            {
                "method": tag,
                "seed": cfg.train.seed,
                "metrics": json.loads(fm.report_to_json(report)),
                "files": {k: os.path.basename(v) for k, v in files.items()},
            },
            indent=2,
            sort_keys=True,
        ),
    )
    return bundle


def _with_point(cfg: ExperimentConfig, alpha, beta1, beta2, seed) -> ExperimentConfig:
    hyper = RfibHyper(alpha=alpha, beta1=beta1, beta2=beta2)
    train_cfg = replace(cfg.train, hyper=hyper, seed=seed)
    return replace(cfg, train=train_cfg)


def _run_point(args):
    cfg, alpha, beta1, beta2, seed, out_dir = args
    return run_experiment(_with_point(cfg, alpha, beta1, beta2, seed), out_dir)


def sweep(cfg: ExperimentConfig, alphas, beta1s, beta2s, out_dir, jobs: int = 1):
    """One run per (alpha, beta1, beta2) grid point; partial failures recorded.

    Point i runs with seed base_seed + i (alpha varies slowest), in directory
    ``point_{i:03d}``, so any single point can be reproduced in isolation.
    Writes ``summary.csv`` with one row per successful point, in grid order,
    and ``failures.csv`` when anything broke.
    """
    grid = list(itertools.product(alphas, beta1s, beta2s))
    if not grid:
        raise ConfigError("sweep grid is empty")
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)

    tasks = []
    for i, (alpha, beta1, beta2) in enumerate(grid):
        tasks.append(
            (cfg, alpha, beta1, beta2, cfg.train.seed + i,
             os.path.join(out_dir, f"point_{i:03d}"))
        )

    results: list = [None] * len(grid)
    failures: list = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_point, t) for t in tasks]
            for i, fut in enumerate(futures):
                try:
                    results[i] = fut.result()
                except Exception as err:  # noqa: BLE001 - recorded per point
                    failures.append((i, grid[i], str(err)))
    else:
        for i, t in enumerate(tasks):
            try:
                results[i] = _run_point(t)
            except Exception as err:  # noqa: BLE001 - recorded per point
                failures.append((i, grid[i], str(err)))

    buf = io.StringIO()
    buf.write(",".join(SUMMARY_COLUMNS) + "\n")
    for (alpha, beta1, beta2), bundle in zip(grid, results):
        if bundle is None:
            continue
        rep = bundle.report
        row = [repr(float(alpha)), repr(float(beta1)), repr(float(beta2))]
        row += [
            repr(rep.acc),
            repr(rep.acc_gap),
            repr(rep.acc_min),
            repr(rep.dp_gap),
            repr(rep.eqodds_gap),
        ]
        buf.write(",".join(row) + "\n")
    _atomic_write_text(os.path.join(out_dir, "summary.csv"), buf.getvalue())

    if failures:
        fbuf = io.StringIO()
        fbuf.write("index,alpha,beta1,beta2,error\n")
        for i, (alpha, beta1, beta2), msg in failures:
            safe = msg.replace("\n", " ").replace(",", ";")
            fbuf.write(f"{i},{alpha!r},{beta1!r},{beta2!r},{safe}\n")
        _atomic_write_text(os.path.join(out_dir, "failures.csv"), fbuf.getvalue())

    return results, failures


def audit(predictions_csv, baseline_csv=None, lambdas=(0.5, 0.75)):
    """Metrics report for a prediction file, plus CAI rows against a baseline.

    Returns ``(text, doc)``: an aligned table for the terminal and a JSON-able
    dict. CAI is only computable against an explicit baseline file.
    """
    records = fm.read_records_csv(predictions_csv)
    report = fm.build_report(records)
    rows = {"predictions": report}
    doc = {"predictions": _report_dict(report)}
    if baseline_csv is not None:
        base_report = fm.build_report(fm.read_records_csv(baseline_csv))
        rows["baseline"] = base_report
        doc["baseline"] = _report_dict(base_report)
        doc["cai"] = {}
        for lam in lambdas:
            value = fm.cai(
                lam,
                (base_report.acc, base_report.acc_gap),
                (report.acc, report.acc_gap),
            )
            doc["cai"][f"{lam:g}"] = value
    text = fm.format_report_table(rows)
    if baseline_csv is not None:
        cai_bits = [f"CAI_{k} = {v:.4g}" for k, v in doc["cai"].items()]
        text += "\n" + "  ".join(cai_bits)
    return text, doc


def _report_dict(report: fm.MetricsReport) -> dict:
    return json.loads(fm.report_to_json(report))
