"""Hand-engineered per-channel features and fixed-window inputs for baselines."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .episodes import RegularGrid
from .errors import DataError

# Per-channel statistics, in output order.
STAT_NAMES = (
    "first",
    "last",
    "delta_per_hour",
    "mean",
    "std",
    "median",
    "q25",
    "q75",
    "min",
    "max",
    "slope",
)

WINDOW_HOURS = 6


@dataclass
class FeatureVector:
    episode_id: str
    values: np.ndarray  # length len(STAT_NAMES) * n_channels


@dataclass
class FixedWindow:
    episode_id: str
    values: np.ndarray  # length 2 * WINDOW_HOURS * n_channels


def ols_slope(series: np.ndarray) -> float:
    """Least-squares slope of value against hour index; 0 for a single point."""
    T = len(series)
    if T < 2:
        return 0.0
    t = np.arange(T, dtype=float)
    t_centered = t - t.mean()
    denom = np.dot(t_centered, t_centered)
    return float(np.dot(t_centered, series - series.mean()) / denom)


def channel_stats(series: np.ndarray) -> np.ndarray:
    """The 11 summary statistics for one channel, in STAT_NAMES order.

    Standard deviation is the population form (divide by T); percentiles use
    linear interpolation; the first/last difference is scaled by the episode
    length in hours.
    """
    T = len(series)
    first = series[0]
    last = series[-1]
    q25, median, q75 = np.percentile(series, [25, 50, 75])
    return np.array(
        [
            first,
            last,
            (last - first) / T,
            series.mean(),
            series.std(),  # population std
            median,
            q25,
            q75,
            series.min(),
            series.max(),
            ols_slope(series),
        ]
    )


def extract_features(grid: RegularGrid) -> FeatureVector:
    """Concatenate the per-channel statistics, channel-major."""
    if grid.n_hours < 1:
        raise DataError(f"grid {grid.episode_id!r} is empty")
    cols = [channel_stats(grid.values[:, c]) for c in range(grid.values.shape[1])]
    return FeatureVector(grid.episode_id, np.concatenate(cols))


def feature_names(channel_names: list[str]) -> list[str]:
    return [f"{ch}_{stat}" for ch in channel_names for stat in STAT_NAMES]


def first_last_window(grid: RegularGrid) -> FixedWindow:
    """First six and last six hourly rows, flattened row-major.

    Short episodes replicate edge rows: the first window clips row indices to
    the last available row, the last window clips to row 0, so the output size
    is fixed regardless of episode length.
    """
    T = grid.n_hours
    if T < 1:
        raise DataError(f"grid {grid.episode_id!r} is empty")
    head = np.minimum(np.arange(WINDOW_HOURS), T - 1)
    tail = np.maximum(np.arange(T - WINDOW_HOURS, T), 0)
    rows = grid.values[np.concatenate([head, tail])]
    return FixedWindow(grid.episode_id, rows.ravel())


def write_features_csv(
    path: str, vectors: list[FeatureVector], channel_names: list[str]
) -> None:
    names = feature_names(channel_names)
    if vectors and len(vectors[0].values) != len(names):
        raise DataError(
            f"feature length {len(vectors[0].values)} does not match "
            f"{len(names)} names"
        )
    tmp = path + ".tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode_id"] + names)
        for vec in vectors:
            writer.writerow([vec.episode_id] + [repr(float(v)) for v in vec.values])
    os.replace(tmp, path)


def read_features_csv(path: str) -> list[FeatureVector]:
    out = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "episode_id":
            raise DataError(f"{path}: not a feature CSV")
        for row in reader:
            out.append(FeatureVector(row[0], np.array([float(x) for x in row[1:]])))
    return out
