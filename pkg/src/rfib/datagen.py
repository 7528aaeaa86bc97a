"""Synthetic biased datasets and the skin-tone-angle labeling pipeline.

The synthetic generator draws Gaussian clusters per (label, group) cell with
exact, spec-level counts; zeroing one training cell reproduces the extreme
imbalance regime where an entire protected subgroup is unseen for one label,
while the test split stays balanced across all four cells.

For image folders, the sensitive bit is derived from the individual typology
angle ``(180/pi) * atan2(L - 50, b)`` in CIE-Lab space, with angle <= 19
degrees binarized as the dark-skin group.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LabeledBatch",
    "SynthSpec",
    "default_synth_spec",
    "synth_generate",
    "srgb_to_lab",
    "ita",
    "binarize_ita",
    "image_ita_label",
    "load_manifest",
    "manifest_to_batch",
    "write_batch_csv",
    "read_batch_csv",
]

ITA_DARK_THRESHOLD = 19.0
BACKGROUND_CUTOFF = 0.08

CELLS = ((0, 0), (0, 1), (1, 0), (1, 1))


@dataclass(frozen=True)
class LabeledBatch:
    """Feature matrix with parallel binary label and group vectors."""

    x: np.ndarray
    y: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64).ravel()
        s = np.asarray(self.s, dtype=np.int64).ravel()
        if x.ndim != 2 or x.shape[0] != y.size or y.size != s.size:
            raise ValueError("x must be N x p with one y and one s per row")
        if not (np.isin(y, (0, 1)).all() and np.isin(s, (0, 1)).all()):
            raise ValueError("y and s must be binary")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "s", s)

    def __len__(self):
        return self.y.size

    def subset(self, idx) -> "LabeledBatch":
        return LabeledBatch(self.x[idx], self.y[idx], self.s[idx])


@dataclass(frozen=True)
class SynthSpec:
    """Cluster layout for the synthetic generator.

    ``means`` maps each (y, s) cell to its feature-space center;
    ``cell_counts`` gives exact training counts per cell and
    ``balanced_test_count`` the shared per-cell test count.
    """

    d_x: int
    means: dict
    noise_std: float
    cell_counts: dict
    balanced_test_count: int

    def __post_init__(self):
        if self.d_x < 1:
            raise ValueError("d_x must be positive")
        if self.noise_std <= 0.0:
            raise ValueError("noise_std must be positive")
        if self.balanced_test_count < 1:
            raise ValueError("balanced_test_count must be positive")
        for cell in CELLS:
            if cell not in self.means or cell not in self.cell_counts:
                raise ValueError(f"missing cell {cell} in means or cell_counts")
            if np.asarray(self.means[cell]).shape != (self.d_x,):
                raise ValueError(f"mean for cell {cell} must have length {self.d_x}")
            if self.cell_counts[cell] < 0:
                raise ValueError("cell counts must be non-negative")
        labels_present = {y for (y, s) in CELLS if self.cell_counts[(y, s)] > 0}
        if labels_present != {0, 1}:
            raise ValueError("training cells must cover both label values")


def default_synth_spec(
    d_x: int = 10,
    y_signal: float = 3.0,
    s_signal: float = 1.0,
    noise_std: float = 1.0,
    train_per_cell: int = 150,
    test_per_cell: int = 250,
    empty_cell=(1, 1),
) -> SynthSpec:
    """Clusters with the label signal on dims 0-4 and the group signal on 4-9.

    The two signals share dimension 4, so predicting the label through the
    shared dimension leaks group information: utility and fairness genuinely
    compete. ``empty_cell`` (default: positives of group 1) gets zero training
    rows, reproducing the extreme-imbalance regime. The label separation is
    deliberately large: both trained variants should sit near their accuracy
    ceiling, so fairness differences reflect how errors distribute over the
    unseen cell rather than raw accuracy differences.
    """
    if d_x < 6:
        raise ValueError("default layout needs d_x >= 6")
    y_dims = np.arange(0, min(5, d_x))
    s_dims = np.arange(min(4, d_x - 1), d_x)
    means = {}
    for y, s in CELLS:
        center = np.zeros(d_x)
        center[y_dims] += y_signal * y
        center[s_dims] += s_signal * s
        means[(y, s)] = center
    counts = {cell: train_per_cell for cell in CELLS}
    if empty_cell is not None:
        counts[tuple(empty_cell)] = 0
    return SynthSpec(
        d_x=d_x,
        means=means,
        noise_std=noise_std,
        cell_counts=counts,
        balanced_test_count=test_per_cell,
    )


def synth_generate(spec: SynthSpec, seed: int):
    """Deterministic (train, test) LabeledBatch pair with exact cell counts."""
    rng = np.random.default_rng(seed)

    def draw(counts):
        xs, ys, ss = [], [], []
        for y, s in CELLS:  # fixed cell order keeps generation reproducible
            count = counts[(y, s)]
            if count == 0:
                continue
            xs.append(
                spec.means[(y, s)]
                + spec.noise_std * rng.standard_normal((count, spec.d_x))
            )
            ys.append(np.full(count, y))
            ss.append(np.full(count, s))
        return LabeledBatch(np.vstack(xs), np.concatenate(ys), np.concatenate(ss))

    train = draw(spec.cell_counts)
    test = draw({cell: spec.balanced_test_count for cell in CELLS})
    return train, test


# -- CIE-Lab and the typology angle ------------------------------------------

# sRGB -> XYZ (D65, 2 degree observer). The white point is taken as the image
# of sRGB white under this exact matrix so the gray axis maps to a = b = 0
# precisely, not just to matrix precision.
_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_WHITE_POINT = _SRGB_TO_XYZ.sum(axis=1)


def _srgb_linearize(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _lab_f(t: np.ndarray) -> np.ndarray:
    delta = 6.0 / 29.0
    return np.where(t > delta**3, np.cbrt(t), t / (3.0 * delta**2) + 4.0 / 29.0)


def srgb_to_lab(pixel):
    """Standard sRGB in [0,1]^3 to CIE-Lab (white (1,1,1) -> L=100, a=b=0).

    Accepts a single (r, g, b) triple or an (..., 3) array; returns the same
    leading shape with (L, a, b) on the last axis.
    """
    rgb = np.asarray(pixel, dtype=np.float64)
    if rgb.shape[-1] != 3:
        raise ValueError("last axis must hold (r, g, b)")
    if np.any(rgb < 0.0) or np.any(rgb > 1.0):
        raise ValueError("channel values must lie in [0, 1]")
    linear = _srgb_linearize(rgb)
    xyz = linear @ _SRGB_TO_XYZ.T
    f = _lab_f(xyz / _WHITE_POINT)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return tuple(lab) if lab.ndim == 1 else lab


def ita(lightness, yellowness):
    """Typology angle in degrees: (180/pi) * atan2(L - 50, b).

    The two-argument arctangent makes this total: b = 0 yields +/-90 degrees
    (0 when L = 50 as well) instead of a division error.
    """
    return np.degrees(np.arctan2(np.asarray(lightness) - 50.0, yellowness))


def binarize_ita(ita_degrees) -> int:
    """1 (dark) iff the angle is <= 19 degrees, else 0 (light)."""
    return int(np.asarray(ita_degrees) <= ITA_DARK_THRESHOLD)


def image_ita_label(image) -> int:
    """Group bit for one decoded RGB raster.

    Masks near-black background (all channels below 0.08), takes the median
    per-pixel angle over what remains, and binarizes. uint8 input is rescaled
    to [0, 1]. Raises if every pixel is masked.
    """
    raster = np.asarray(image)
    if raster.dtype == np.uint8:
        raster = raster.astype(np.float64) / 255.0
    raster = np.asarray(raster, dtype=np.float64)
    if raster.ndim != 3 or raster.shape[-1] != 3 or raster.size == 0:
        raise ValueError("image must be a non-empty H x W x 3 raster")
    pixels = raster.reshape(-1, 3)
    keep = ~np.all(pixels < BACKGROUND_CUTOFF, axis=1)
    if not keep.any():
        raise ValueError("image is entirely near-black background")
    lab = srgb_to_lab(pixels[keep])
    angles = ita(lab[:, 0], lab[:, 2])
    return binarize_ita(np.median(angles))


# -- image manifests -----------------------------------------------------------


def load_manifest(path):
    """Rows of (image path, binary label) from a CSV with header path, y.

    Paths are resolved relative to the manifest's directory and must exist.
    """
    import os

    base = os.path.dirname(os.fspath(path))
    rows = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"path", "y"}.issubset(reader.fieldnames):
            raise ValueError(f"{path}: need columns path, y")
        for row in reader:
            y = int(row["y"])
            if y not in (0, 1):
                raise ValueError(f"label must be binary, got {y}")
            img_path = os.path.join(base, row["path"])
            if not os.path.exists(img_path):
                raise FileNotFoundError(f"manifest references missing file {img_path}")
            rows.append((img_path, y))
    if not rows:
        raise ValueError(f"{path}: manifest is empty")
    return rows


def manifest_to_batch(manifest_rows, thumb_size: int = 8) -> LabeledBatch:
    """Decode each image, derive s from its typology angle, and featurize.

    Features are the flattened ``thumb_size x thumb_size`` RGB thumbnail in
    [0, 1] -- a deliberately simple desk-scale stand-in for a learned backbone.
    """
    from PIL import Image

    xs, ys, ss = [], [], []
    for path, y in manifest_rows:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            raster = np.asarray(rgb, dtype=np.float64) / 255.0
            thumb = np.asarray(
                rgb.resize((thumb_size, thumb_size), Image.BILINEAR),
                dtype=np.float64,
            )
        ss.append(image_ita_label(raster))
        ys.append(y)
        xs.append(thumb.ravel() / 255.0)
    return LabeledBatch(np.vstack(xs), np.array(ys), np.array(ss))


# -- CSV serialization ----------------------------------------------------------


def write_batch_csv(path, batch: LabeledBatch) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(batch.x.shape[1])] + ["y", "s"])
        for row, y, s in zip(batch.x, batch.y, batch.s):
            writer.writerow([repr(float(v)) for v in row] + [y, s])


def read_batch_csv(path) -> LabeledBatch:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[-2:] != ["y", "s"]:
            raise ValueError(f"{path}: last columns must be y, s")
        p = len(header) - 2
        xs, ys, ss = [], [], []
        for row in reader:
            xs.append([float(v) for v in row[:p]])
            ys.append(int(row[p]))
            ss.append(int(row[p + 1]))
    return LabeledBatch(np.array(xs), np.array(ys), np.array(ss))
