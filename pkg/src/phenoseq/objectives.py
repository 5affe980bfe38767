"""Training objectives for per-step multilabel sequence classification.

Three modes over a T x L matrix of per-step probabilities:

  final_only          loss at the last step only
  target_replication  alpha * mean of per-step losses + (1 - alpha) * final loss
  linear_gain         per-step losses weighted linearly increasing in t,
                      normalized to sum to one

All losses are the label-averaged binary cross-entropy.  Probabilities are
clamped to [PROB_EPS, 1 - PROB_EPS] before the log, since a sigmoid can
saturate to exactly 0 or 1 in double precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

PROB_EPS = 1e-12

MODES = ("final_only", "target_replication", "linear_gain")


@dataclass
class ObjectiveConfig:
    mode: str = "final_only"
    alpha: float = 0.5
    primary_label_count: int = 128
    aux_label_count: int = 0

    @property
    def total_label_count(self) -> int:
        return self.primary_label_count + self.aux_label_count

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown objective mode {self.mode!r}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.primary_label_count < 1:
            raise ConfigError("primary_label_count must be positive")
        if self.aux_label_count < 0:
            raise ConfigError("aux_label_count must be nonnegative")


def log_loss(yhat: np.ndarray, y: np.ndarray) -> float:
    """Mean over labels of binary cross-entropy."""
    yhat = np.asarray(yhat, dtype=float)
    y = np.asarray(y, dtype=float)
    if yhat.shape != y.shape:
        raise DataError(f"shape mismatch: {yhat.shape} vs {y.shape}")
    yc = np.clip(yhat, PROB_EPS, 1.0 - PROB_EPS)
    return float(-np.mean(y * np.log(yc) + (1.0 - y) * np.log(1.0 - yc)))


def _log_loss_grad(yhat: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Elementwise d(log_loss)/d(yhat); zero where the clamp is active."""
    n = yhat.shape[-1]
    yc = np.clip(yhat, PROB_EPS, 1.0 - PROB_EPS)
    grad = (yc - y) / (yc * (1.0 - yc)) / n
    inside = (yhat > PROB_EPS) & (yhat < 1.0 - PROB_EPS)
    return np.where(inside, grad, 0.0)


def step_weights(n_steps: int, config: ObjectiveConfig) -> np.ndarray:
    """Per-step loss weights for the configured mode; always sum to 1."""
    if n_steps < 1:
        raise DataError("sequence must have at least one step")
    if config.mode == "final_only":
        w = np.zeros(n_steps)
        w[-1] = 1.0
    elif config.mode == "target_replication":
        w = np.full(n_steps, config.alpha / n_steps)
        w[-1] += 1.0 - config.alpha
    elif config.mode == "linear_gain":
        t = np.arange(1, n_steps + 1, dtype=float)
        w = t / t.sum()
    else:
        raise ConfigError(f"unknown objective mode {config.mode!r}")
    return w


def sequence_loss(
    yhat_steps: np.ndarray, y: np.ndarray, config: ObjectiveConfig
) -> tuple[float, np.ndarray]:
    """Weighted per-step loss and its exact gradient with respect to yhat_steps.

    yhat_steps is (T, L); y is the static length-L target, implicitly
    replicated at every step.
    """
    config.validate()
    yhat_steps = np.asarray(yhat_steps, dtype=float)
    y = np.asarray(y, dtype=float)
    if yhat_steps.ndim != 2 or yhat_steps.shape[1] != y.shape[0]:
        raise DataError(
            f"expected (T, {y.shape[0]}) predictions, got {yhat_steps.shape}"
        )
    T = yhat_steps.shape[0]
    w = step_weights(T, config)
    losses = np.array([log_loss(yhat_steps[t], y) for t in range(T)])
    grad = _log_loss_grad(yhat_steps, y[None, :]) * w[:, None]
    return float(np.dot(w, losses)), grad


def compose_targets(
    primary_labels: np.ndarray,
    aux_labels: np.ndarray | None,
    config: ObjectiveConfig,
) -> np.ndarray:
    """Training target vector: primary labels followed by auxiliary labels."""
    primary_labels = np.asarray(primary_labels)
    if primary_labels.shape[-1] != config.primary_label_count:
        raise DataError(
            f"expected {config.primary_label_count} primary labels, "
            f"got {primary_labels.shape[-1]}"
        )
    if config.aux_label_count == 0:
        return primary_labels
    if aux_labels is None or np.asarray(aux_labels).shape[-1] != config.aux_label_count:
        raise DataError(
            f"objective configured with {config.aux_label_count} auxiliary labels "
            f"but the data does not provide them"
        )
    return np.concatenate([primary_labels, np.asarray(aux_labels)], axis=-1)


def mask_predictions(yhat: np.ndarray, config: ObjectiveConfig) -> np.ndarray:
    """Restrict predictions to the primary labels (auxiliary units are
    training-only and dropped at inference)."""
    yhat = np.asarray(yhat)
    if yhat.shape[-1] != config.total_label_count:
        raise DataError(
            f"expected {config.total_label_count} output units, got {yhat.shape[-1]}"
        )
    return yhat[..., : config.primary_label_count]
