"""Dataset ingestion, normalization, splitting, and evaluation metrics.

CSV format: comma separated, '.'-decimal, optional single header row, no
quoting. Targets are z-score normalized for training; all reported metrics
are converted back to original units.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import DimensionMismatch, EmptyFile, ParseError, TooFewRows

logger = logging.getLogger(__name__)


class Table(NamedTuple):
    values: np.ndarray
    header: list | None


class NormStats(NamedTuple):
    mean: np.ndarray
    std: np.ndarray


@dataclass
class Dataset:
    """Normalized features/targets with the stats and split used to build them."""

    x: np.ndarray  # (n, d), z-scored with train-split statistics
    y: np.ndarray  # (n, p), z-scored with train-split statistics
    feature_stats: NormStats
    target_stats: NormStats
    train_indices: np.ndarray
    test_indices: np.ndarray
    n_dropped: int = 0

    def train_xy(self):
        return self.x[self.train_indices], self.y[self.train_indices]

    def test_xy(self):
        return self.x[self.test_indices], self.y[self.test_indices]


def load_csv(path, target_columns=None, has_header: bool = False) -> Table:
    """Parse a numeric CSV; malformed cells are reported with row/column.

    ``target_columns`` is validated against the table width here so that a
    bad run configuration fails before any other work happens.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in lines if ln.strip() != ""]
    header = None
    if has_header:
        if not lines:
            raise EmptyFile(f"{path} has no rows")
        header = [c.strip() for c in lines[0].split(",")]
        lines = lines[1:]
    if not lines:
        raise EmptyFile(f"{path} has no data rows")

    width = len(lines[0].split(","))
    values = np.empty((len(lines), width))
    for i, ln in enumerate(lines):
        cells = ln.split(",")
        if len(cells) != width:
            raise ParseError(i + 1, len(cells), f"expected {width} columns, got {len(cells)}")
        for j, cell in enumerate(cells):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise ParseError(i + 1, j + 1, cell) from None
    if target_columns is not None:
        for c in target_columns:
            if not -width <= c < width:
                raise ParseError(0, c, f"target column {c} out of range for width {width}")
    return Table(values=values, header=header)


def write_csv(path, values, header=None):
    """Write a numeric table with full float round-trip precision."""
    values = np.asarray(values)
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(",".join(str(h) for h in header) + "\n")
        for row in np.atleast_2d(values):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _fit_stats(values: np.ndarray) -> NormStats:
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    constant = std == 0.0
    if constant.any():
        logger.warning("%d constant column(s); using std 1 for them", int(constant.sum()))
        std = np.where(constant, 1.0, std)
    return NormStats(mean=mean, std=std)


def build_dataset(x_raw, y_raw, train_indices, test_indices) -> Dataset:
    """Normalize with train-split statistics only and assemble a Dataset."""
    x_raw = np.asarray(x_raw, dtype=np.float64)
    y_raw = np.asarray(y_raw, dtype=np.float64)
    fstats = _fit_stats(x_raw[train_indices])
    tstats = _fit_stats(y_raw[train_indices])
    return Dataset(
        x=(x_raw - fstats.mean) / fstats.std,
        y=(y_raw - tstats.mean) / tstats.std,
        feature_stats=fstats,
        target_stats=tstats,
        train_indices=np.asarray(train_indices),
        test_indices=np.asarray(test_indices),
    )


def normalize_split(table: Table, target_columns, test_fraction: float, seed: int) -> Dataset:
    """Deterministic shuffle-split plus train-fitted z-score normalization.

    Rows containing NaN are dropped (never imputed) with the count logged.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    values = np.asarray(table.values, dtype=np.float64)
    keep = ~np.isnan(values).any(axis=1)
    n_dropped = int((~keep).sum())
    if n_dropped:
        logger.warning("dropped %d row(s) containing NaN", n_dropped)
    values = values[keep]
    n, width = values.shape
    if n < 10:
        raise TooFewRows(f"need at least 10 rows after NaN filtering, got {n}")

    target_columns = [c % width for c in target_columns]
    feature_columns = [c for c in range(width) if c not in target_columns]
    if not target_columns or not feature_columns:
        raise ValueError("need at least one target and one feature column")

    perm = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(test_fraction * n)))
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])

    ds = build_dataset(values[:, feature_columns], values[:, target_columns], train_idx, test_idx)
    ds.n_dropped = n_dropped
    return ds


# ---------------------------------------------------------------------------
# metrics (always reported in original target units)
# ---------------------------------------------------------------------------


def rmse(pred, truth, stats: NormStats) -> float:
    """Root mean squared error after undoing the target normalization."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimensionMismatch(f"predictions {pred.shape} vs targets {truth.shape}")
    diff = (pred - truth) * stats.std
    return float(np.sqrt(np.mean(diff**2)))


def test_log_likelihood(log_density_evaluator, y_test, stats: NormStats) -> float:
    """Mean per-point predictive log density in original units.

    ``y_test`` is in normalized units (the Dataset's stored form); the
    change of variables subtracts log(std) per output dimension.
    """
    y_test = np.asarray(y_test)
    per_point = np.asarray(log_density_evaluator(y_test))
    return float(np.mean(per_point) - np.sum(np.log(stats.std)))


# ---------------------------------------------------------------------------
# synthetic problems
# ---------------------------------------------------------------------------


def make_contaminated_sine(
    n: int = 220,
    test_fraction: float = 0.45,
    outlier_fraction: float = 0.05,
    outlier_offset: float = 8.0,
    noise_std: float = 0.1,
    seed: int = 0,
) -> Dataset:
    """1-D sine regression whose training split carries gross outliers.

    Test rows stay clean, so test RMSE measures robustness of the fit to the
    contamination. Normalization statistics are fitted on the (contaminated)
    training split, as they would be in practice.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(-3.0, 3.0, size=(n, 1))
    y = np.sin(2.0 * x) + noise_std * rng.standard_normal((n, 1))
    n_test = int(round(test_fraction * n))
    perm = rng.permutation(n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    n_out = max(1, int(round(outlier_fraction * train_idx.size)))
    out_rows = rng.choice(train_idx, size=n_out, replace=False)
    y[out_rows, 0] += outlier_offset * rng.choice([-1.0, 1.0], size=n_out)
    return build_dataset(x, y, train_idx, test_idx)


def make_sine_table(n: int = 80, noise_std: float = 0.1, seed: int = 0) -> Table:
    """Small clean sine table (x, y) used as the bundled toy CSV."""
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(-3.0, 3.0, size=n))
    y = np.sin(2.0 * x) + noise_std * rng.standard_normal(n)
    return Table(values=np.column_stack([x, y]), header=["x", "y"])
