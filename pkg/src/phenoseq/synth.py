"""Deterministic generator of synthetic multilabel episodes.

Each episode draws a binary label vector from long-tailed per-label base
rates; every active label contributes an additive signature (per-channel
offset plus linear trend) to latent channel trajectories, which are then
observed at irregular times with additive Gaussian noise.  Whole channels are
dropped with a configurable probability.  Generation is keyed per episode by
(seed, episode index), so output is identical regardless of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .episodes import Channel, ChannelSpec, RawEpisode
from .errors import ConfigError
from .rng import STREAM_SYNTH, stream

# Substream tags under the "synth" stream.
_EPISODE_KEY = 0
_SIGNATURE_KEY = 1

DEFAULT_CHANNEL_COUNT = 13


def default_channel_specs(n_channels: int = DEFAULT_CHANNEL_COUNT) -> list[ChannelSpec]:
    """Generic channels on a [0, 100] raw scale with a mid-range normal value."""
    return [
        ChannelSpec(name=f"ch{i:02d}", normal_value=50.0, range_lo=0.0, range_hi=100.0)
        for i in range(n_channels)
    ]


@dataclass
class SynthConfig:
    n_episodes: int
    n_primary_labels: int = 128
    n_aux_labels: int = 0
    channels: list[ChannelSpec] = field(default_factory=default_channel_specs)
    min_hours: int = 12
    max_hours: int = 96
    samples_per_hour: float = 1.0
    channel_drop_prob: float = 0.1
    noise_scale: float = 4.0  # raw units, same scale as channel ranges
    base_rate_max: float = 0.5
    base_rate_decay: float = 0.7
    signature_offset_scale: float = 8.0
    signature_trend_scale: float = 12.0
    signature_channel_frac: float = 0.4

    @property
    def n_labels_total(self) -> int:
        return self.n_primary_labels + self.n_aux_labels

    def validate(self) -> None:
        if self.n_episodes < 10:
            raise ConfigError(f"n_episodes must be >= 10, got {self.n_episodes}")
        if self.n_primary_labels < 2:
            raise ConfigError(
                f"n_primary_labels must be >= 2, got {self.n_primary_labels}"
            )
        if self.n_aux_labels < 0:
            raise ConfigError(f"n_aux_labels must be >= 0, got {self.n_aux_labels}")
        if not self.channels:
            raise ConfigError("at least one channel spec required")
        for spec in self.channels:
            spec.validate()
        if not (0 < self.min_hours <= self.max_hours):
            raise ConfigError(
                f"need 0 < min_hours <= max_hours, got [{self.min_hours}, {self.max_hours}]"
            )
        if self.samples_per_hour <= 0:
            raise ConfigError("samples_per_hour must be positive")
        if not (0.0 <= self.channel_drop_prob < 1.0):
            raise ConfigError("channel_drop_prob must be in [0, 1)")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be nonnegative")
        if not (0.0 < self.base_rate_max <= 1.0):
            raise ConfigError("base_rate_max must be in (0, 1]")
        if not (0.0 < self.base_rate_decay <= 1.0):
            raise ConfigError("base_rate_decay must be in (0, 1]")


def base_rates(config: SynthConfig) -> np.ndarray:
    """Long-tailed per-label positive rates, geometric within each block.

    Primary labels decay from base_rate_max; auxiliary labels restart the same
    profile so they stay frequent enough to matter as extra targets.
    """
    primary = config.base_rate_max * config.base_rate_decay ** np.arange(
        config.n_primary_labels
    )
    aux = config.base_rate_max * config.base_rate_decay ** np.arange(
        config.n_aux_labels
    )
    return np.concatenate([primary, aux])


def label_signature(
    seed: int, label_index: int, config: SynthConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Per-label additive signature: (offsets, trends), one entry per channel.

    Fixed by (seed, label_index); an inactive channel gets zeros.  Trends are
    expressed over the whole episode: the contribution at normalized time
    tau in [0, 1] is offset + trend * tau.
    """
    n_ch = len(config.channels)
    rng = stream(seed, STREAM_SYNTH, _SIGNATURE_KEY, label_index)
    active = rng.random(n_ch) < config.signature_channel_frac
    if not active.any():
        active[label_index % n_ch] = True
    offsets = rng.normal(0.0, config.signature_offset_scale, n_ch) * active
    trends = rng.normal(0.0, config.signature_trend_scale, n_ch) * active
    return offsets, trends


def latent_trajectory(
    times: np.ndarray,
    channel_index: int,
    duration: float,
    labels: np.ndarray,
    offsets: np.ndarray,
    trends: np.ndarray,
    config: SynthConfig,
) -> np.ndarray:
    """Noise-free channel value at the given times for one episode."""
    base = config.channels[channel_index].normal_value
    active = np.flatnonzero(labels)
    off = offsets[active, channel_index].sum()
    trend = trends[active, channel_index].sum()
    return base + off + trend * (times / duration)


def _generate_one(
    seed: int,
    index: int,
    config: SynthConfig,
    rates: np.ndarray,
    offsets: np.ndarray,
    trends: np.ndarray,
) -> RawEpisode:
    rng = stream(seed, STREAM_SYNTH, _EPISODE_KEY, index)
    n_ch = len(config.channels)
    duration = int(rng.integers(config.min_hours, config.max_hours + 1))
    labels = (rng.random(config.n_labels_total) < rates).astype(np.int8)
    keep = rng.random(n_ch) >= config.channel_drop_prob
    if not keep.any():
        keep[index % n_ch] = True
    first_kept = int(np.flatnonzero(keep)[0])
    # A sample in the last hour of the first kept channel pins the duration.
    anchor_time = duration - 1.0 + rng.random()

    channels = []
    for c in range(n_ch):
        name = config.channels[c].name
        if not keep[c]:
            channels.append(Channel(name, np.empty((0, 2))))
            continue
        n_samples = max(1, int(rng.poisson(config.samples_per_hour * duration)))
        times = rng.uniform(0.0, duration, n_samples)
        if c == first_kept:
            times = np.append(times, anchor_time)
        times = np.unique(times)  # sorted, strictly increasing
        values = latent_trajectory(
            times, c, duration, labels, offsets, trends, config
        )
        if config.noise_scale > 0:
            values = values + rng.normal(0.0, config.noise_scale, len(times))
        channels.append(Channel(name, np.column_stack([times, values])))

    return RawEpisode(
        episode_id=f"ep{index:05d}",
        channels=channels,
        labels=labels,
        meta={},
    )


def generate_synthetic(config: SynthConfig, seed: int) -> list[RawEpisode]:
    """Generate config.n_episodes episodes, deterministic in (config, seed)."""
    config.validate()
    rates = base_rates(config)
    sigs = [
        label_signature(seed, l, config) for l in range(config.n_labels_total)
    ]
    offsets = np.stack([s[0] for s in sigs])  # (L_total, n_channels)
    trends = np.stack([s[1] for s in sigs])
    return [
        _generate_one(seed, i, config, rates, offsets, trends)
        for i in range(config.n_episodes)
    ]
