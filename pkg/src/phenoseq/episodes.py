"""Irregular multivariate episodes and the hourly preprocessing pipeline.

An episode is one patient-stay-like record: a handful of named channels, each
an irregularly sampled time series, plus a static binary label vector.  The
pipeline turns an episode into a dense hourly grid:

    resample_hourly -> impute (forward, then backward, then normal value)
                    -> rescale to [0, 1]

All operations are pure functions; missing cells are represented as NaN
between resampling and imputation.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .rng import STREAM_SHUFFLE, stream

# Substream key reserved for the train/validation/test split (epoch shuffles
# use keys >= 1).
SPLIT_SHUFFLE_KEY = 0

DEFAULT_MIN_DURATION_HOURS = 12


@dataclass
class ChannelSpec:
    """Per-channel imputation constant and rescaling range."""

    name: str
    normal_value: float
    range_lo: float
    range_hi: float

    def validate(self) -> None:
        if not (self.range_lo < self.range_hi):
            raise ConfigError(
                f"channel {self.name!r}: range_lo must be < range_hi "
                f"(got [{self.range_lo}, {self.range_hi}])"
            )
        if not (self.range_lo <= self.normal_value <= self.range_hi):
            raise ConfigError(
                f"channel {self.name!r}: normal_value {self.normal_value} outside "
                f"range [{self.range_lo}, {self.range_hi}]"
            )


@dataclass
class Channel:
    """One named channel: samples are (t_hours, value) pairs, time-sorted."""

    name: str
    samples: np.ndarray  # shape (n, 2); may be empty with shape (0, 2)

    @classmethod
    def from_pairs(cls, name: str, pairs) -> "Channel":
        arr = np.asarray(pairs, dtype=float)
        if arr.size == 0:
            arr = np.empty((0, 2), dtype=float)
        return cls(name=name, samples=arr)


@dataclass
class RawEpisode:
    """One episode: channels plus a static binary label vector."""

    episode_id: str
    channels: list[Channel]
    labels: np.ndarray  # binary vector
    meta: dict[str, str] = field(default_factory=dict)

    @property
    def max_sample_time(self) -> float:
        times = [c.samples[-1, 0] for c in self.channels if len(c.samples)]
        if not times:
            raise DataError(f"episode {self.episode_id!r}: all channels empty")
        return float(max(times))

    @property
    def duration_hours(self) -> int:
        """Number of hourly windows needed to cover the latest sample."""
        return int(math.floor(self.max_sample_time)) + 1

    def validate(self, min_duration_hours: int = DEFAULT_MIN_DURATION_HOURS) -> None:
        if not self.channels:
            raise DataError(f"episode {self.episode_id!r}: no channels")
        nonempty = 0
        for ch in self.channels:
            if ch.samples.ndim != 2 or (len(ch.samples) and ch.samples.shape[1] != 2):
                raise DataError(
                    f"episode {self.episode_id!r}: channel {ch.name!r} samples "
                    f"must be (t, value) pairs"
                )
            if len(ch.samples):
                nonempty += 1
                t = ch.samples[:, 0]
                if t[0] < 0:
                    raise DataError(
                        f"episode {self.episode_id!r}: channel {ch.name!r} has a "
                        f"negative sample time"
                    )
                if len(t) > 1 and not np.all(np.diff(t) > 0):
                    raise DataError(
                        f"episode {self.episode_id!r}: channel {ch.name!r} sample "
                        f"times are not strictly increasing"
                    )
                if not np.all(np.isfinite(ch.samples)):
                    raise DataError(
                        f"episode {self.episode_id!r}: channel {ch.name!r} has "
                        f"non-finite samples"
                    )
        if nonempty == 0:
            raise DataError(f"episode {self.episode_id!r}: all channels empty")
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or not np.all((labels == 0) | (labels == 1)):
            raise DataError(
                f"episode {self.episode_id!r}: labels must be a flat 0/1 vector"
            )
        if self.duration_hours < min_duration_hours:
            raise DataError(
                f"episode {self.episode_id!r}: duration {self.duration_hours} h "
                f"is below the {min_duration_hours} h minimum"
            )


@dataclass
class RegularGrid:
    """Hourly-resampled, imputed, rescaled values for one episode."""

    episode_id: str
    values: np.ndarray  # (T, n_channels), entries in [0, 1]
    observed_mask: np.ndarray  # (T, n_channels), 1 where a real sample landed

    @property
    def n_hours(self) -> int:
        return self.values.shape[0]


@dataclass
class DatasetSplit:
    train: list[str]
    validation: list[str]
    test: list[str]


def resample_hourly(episode: RawEpisode) -> tuple[np.ndarray, np.ndarray]:
    """Average samples into hourly bins; empty bins become NaN.

    Window convention is half-open [t, t+1), so a sample at an exact hour mark
    belongs to the window it starts.  Returns (values, observed_mask), both of
    shape (T, n_channels) where T covers the latest sample across channels.
    """
    episode.validate(min_duration_hours=0)
    n_ch = len(episode.channels)
    T = episode.duration_hours
    values = np.full((T, n_ch), np.nan)
    counts = np.zeros((T, n_ch))
    for c, ch in enumerate(episode.channels):
        if not len(ch.samples):
            continue
        idx = np.floor(ch.samples[:, 0]).astype(int)
        sums = np.bincount(idx, weights=ch.samples[:, 1], minlength=T)
        cnts = np.bincount(idx, minlength=T)
        hit = cnts > 0
        values[hit, c] = sums[hit] / cnts[hit]
        counts[:, c] = cnts
    mask = (counts > 0).astype(np.int8)
    return values, mask


def impute(values: np.ndarray, specs: list[ChannelSpec]) -> np.ndarray:
    """Fill NaNs per channel: forward fill, then back fill, then normal value."""
    if values.shape[1] != len(specs):
        raise DataError(
            f"grid has {values.shape[1]} channels but {len(specs)} specs given"
        )
    out = values.copy()
    T = out.shape[0]
    for c, spec in enumerate(specs):
        col = out[:, c]
        obs = np.flatnonzero(~np.isnan(col))
        if len(obs) == 0:
            out[:, c] = spec.normal_value
            continue
        # Forward fill: index of the nearest earlier observation.
        last_seen = np.maximum.accumulate(
            np.where(~np.isnan(col), np.arange(T), -1)
        )
        filled = np.where(last_seen >= 0, col[np.maximum(last_seen, 0)], np.nan)
        # Back fill the leading gap with the first observation.
        filled[: obs[0]] = col[obs[0]]
        out[:, c] = filled
    return out


def rescale(values: np.ndarray, specs: list[ChannelSpec]) -> np.ndarray:
    """Map each channel through its [range_lo, range_hi] window, clamped to [0, 1]."""
    if values.shape[1] != len(specs):
        raise DataError(
            f"grid has {values.shape[1]} channels but {len(specs)} specs given"
        )
    for spec in specs:
        spec.validate()
    lo = np.array([s.range_lo for s in specs])
    hi = np.array([s.range_hi for s in specs])
    return np.clip((values - lo) / (hi - lo), 0.0, 1.0)


def apply_demographic_correction(
    episode: RawEpisode, correction: dict[str, float] | None = None
) -> RawEpisode:
    """Optional per-episode correction hook (channel name -> additive offset).

    Population-table corrections are not shipped with the package; with no
    table this is the identity.
    """
    if not correction:
        return episode
    channels = []
    for ch in episode.channels:
        offset = correction.get(ch.name, 0.0)
        if offset and len(ch.samples):
            shifted = ch.samples.copy()
            shifted[:, 1] += offset
            channels.append(Channel(ch.name, shifted))
        else:
            channels.append(ch)
    return RawEpisode(episode.episode_id, channels, episode.labels, dict(episode.meta))


def preprocess_episode(
    episode: RawEpisode,
    specs: list[ChannelSpec],
    correction: dict[str, float] | None = None,
) -> RegularGrid:
    """Full pipeline: correction hook, hourly resample, impute, rescale."""
    if len(episode.channels) != len(specs):
        raise DataError(
            f"episode {episode.episode_id!r} has {len(episode.channels)} channels "
            f"but {len(specs)} specs given"
        )
    episode = apply_demographic_correction(episode, correction)
    values, mask = resample_hourly(episode)
    filled = impute(values, specs)
    scaled = rescale(filled, specs)
    return RegularGrid(episode.episode_id, scaled, mask)


def split_dataset(ids: list[str], seed: int) -> DatasetSplit:
    """Deterministic 80/10/10 split: shuffle by seed, then slice contiguously."""
    n = len(ids)
    if n < 10:
        raise DataError(f"need at least 10 episodes to split, got {n}")
    rng = stream(seed, STREAM_SHUFFLE, SPLIT_SHUFFLE_KEY)
    order = rng.permutation(n)
    shuffled = [ids[i] for i in order]
    n_val = n // 10
    n_test = n // 10
    n_train = n - n_val - n_test
    return DatasetSplit(
        train=shuffled[:n_train],
        validation=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val :],
    )


# ---------------------------------------------------------------------------
# JSON interchange
# ---------------------------------------------------------------------------


def episode_to_dict(episode: RawEpisode) -> dict:
    return {
        "episode_id": episode.episode_id,
        "channels": [
            {"name": ch.name, "samples": [[float(t), float(v)] for t, v in ch.samples]}
            for ch in episode.channels
        ],
        "labels": [int(x) for x in episode.labels],
        "meta": dict(episode.meta),
    }


def episode_from_dict(doc: dict) -> RawEpisode:
    try:
        channels = [
            Channel.from_pairs(ch["name"], ch["samples"]) for ch in doc["channels"]
        ]
        return RawEpisode(
            episode_id=doc["episode_id"],
            channels=channels,
            labels=np.asarray(doc["labels"], dtype=np.int8),
            meta=dict(doc.get("meta", {})),
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed episode record: {exc}") from exc


def grid_to_dict(grid: RegularGrid) -> dict:
    return {
        "episode_id": grid.episode_id,
        "T": int(grid.n_hours),
        "values": [[float(v) for v in row] for row in grid.values],
        "observed_mask": [[int(m) for m in row] for row in grid.observed_mask],
    }


def grid_from_dict(doc: dict) -> RegularGrid:
    try:
        grid = RegularGrid(
            episode_id=doc["episode_id"],
            values=np.asarray(doc["values"], dtype=float),
            observed_mask=np.asarray(doc["observed_mask"], dtype=np.int8),
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed grid record: {exc}") from exc
    if grid.values.shape != grid.observed_mask.shape or grid.values.shape[0] != doc["T"]:
        raise DataError(f"grid {grid.episode_id!r}: inconsistent shapes")
    return grid


def write_jsonl(path: str, docs) -> None:
    """Write one JSON document per line, atomically (temp file + rename)."""
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc, separators=(",", ":")))
            fh.write("\n")
    os.replace(tmp, path)


def read_jsonl(path: str) -> list[dict]:
    docs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                docs.append(json.loads(line))
    return docs


def write_episodes_jsonl(path: str, episodes: list[RawEpisode]) -> None:
    write_jsonl(path, (episode_to_dict(e) for e in episodes))


def read_episodes_jsonl(path: str) -> list[RawEpisode]:
    return [episode_from_dict(d) for d in read_jsonl(path)]


def write_grids_jsonl(path: str, grids: list[RegularGrid]) -> None:
    write_jsonl(path, (grid_to_dict(g) for g in grids))


def read_grids_jsonl(path: str) -> list[RegularGrid]:
    return [grid_from_dict(d) for d in read_jsonl(path)]


def load_channel_specs(path: str) -> list[ChannelSpec]:
    with open(path, "r", encoding="utf-8") as fh:
        docs = json.load(fh)
    if not isinstance(docs, list) or not docs:
        raise ConfigError(f"{path}: channel spec file must be a nonempty JSON array")
    specs = []
    for doc in docs:
        try:
            spec = ChannelSpec(
                name=doc["name"],
                normal_value=float(doc["normal_value"]),
                range_lo=float(doc["range_lo"]),
                range_hi=float(doc["range_hi"]),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"{path}: malformed channel spec: {exc}") from exc
        spec.validate()
        specs.append(spec)
    return specs


def save_channel_specs(path: str, specs: list[ChannelSpec]) -> None:
    docs = [
        {
            "name": s.name,
            "normal_value": s.normal_value,
            "range_lo": s.range_lo,
            "range_hi": s.range_hi,
        }
        for s in specs
    ]
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(docs, fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)
