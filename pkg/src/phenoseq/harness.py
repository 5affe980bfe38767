"""Training harness: epoch loop with per-epoch train/validation metrics,
checkpointing with pruning, the 2-of-3 model-selection rule, prediction
helpers, and ensembling.

One loop drives both the LSTM (variable-length grids) and the MLP baseline
(fixed-size vectors): shuffle by (seed, epoch), accumulate gradients over
mini-batches, clip the global norm, and take an SGD-momentum step.  After each
epoch the model is evaluated with dropout disabled on the training and
validation splits (micro AUC, swept micro F1, precision@k) and checkpointed;
checkpoints are pruned so only the per-metric bests and the final epoch
remain.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .baselines import (
    MlpParams,
    init_mlp_params,
    mlp_backward,
    mlp_forward,
)
from .episodes import RawEpisode
from .errors import ConfigError, DataError, NumericError
from .lstm import (
    DropoutPlan,
    LstmParams,
    OptimizerState,
    backward_batch,
    clip_gradients,
    forward_batch,
    forward_sequence,
    init_lstm_params,
    sgd_momentum_step,
)
from .metrics import PredictionMatrix, micro_auc, precision_at_k, sweep_f1_threshold
from .objectives import (
    ObjectiveConfig,
    _log_loss_grad,
    compose_targets,
    log_loss,
    mask_predictions,
    sequence_loss,
)
from .rng import STREAM_DROPOUT, STREAM_SHUFFLE, stream

ARCH_KINDS = ("lstm", "mlp")
SELECTION_METRICS = ("micro_auc", "micro_f1", "precision_at_k")


@dataclass
class TrainConfig:
    arch_kind: str = "lstm"
    layers: list[int] = field(default_factory=lambda: [64, 64])
    dropout: float = 0.0
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-6
    clip_norm: float = 1.0
    batch_size: int = 16
    epochs: int = 100
    seed: int = 0
    k: int = 10
    truncate_last_hours: int | None = None

    def validate(self) -> None:
        if self.arch_kind not in ARCH_KINDS:
            raise ConfigError(f"unknown arch_kind {self.arch_kind!r}")
        if not self.layers or any(c < 1 for c in self.layers):
            raise ConfigError(f"layers must be positive, got {self.layers}")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        self.objective.validate()
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not (1 <= self.k <= self.objective.primary_label_count):
            raise ConfigError(
                f"k must be in [1, {self.objective.primary_label_count}], got {self.k}"
            )
        if self.truncate_last_hours is not None and self.truncate_last_hours < 1:
            raise ConfigError("truncate_last_hours must be >= 1 when set")
        OptimizerState(
            self.learning_rate, self.momentum, self.weight_decay, self.clip_norm
        ).validate()

    def to_dict(self) -> dict:
        return {
            "arch_kind": self.arch_kind,
            "layers": list(self.layers),
            "dropout": self.dropout,
            "objective": {
                "mode": self.objective.mode,
                "alpha": self.objective.alpha,
                "primary_label_count": self.objective.primary_label_count,
                "aux_label_count": self.objective.aux_label_count,
            },
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "clip_norm": self.clip_norm,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "k": self.k,
            "truncate_last_hours": self.truncate_last_hours,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        obj_doc = dict(doc.pop("objective", {}))
        _reject_unknown_keys(obj_doc, {
            "mode", "alpha", "primary_label_count", "aux_label_count",
        }, context="objective")
        objective = ObjectiveConfig(**obj_doc)
        allowed = {
            "arch_kind", "layers", "dropout", "learning_rate", "momentum",
            "weight_decay", "clip_norm", "batch_size", "epochs", "seed", "k",
            "truncate_last_hours",
        }
        _reject_unknown_keys(doc, allowed, context="train config")
        cfg = cls(objective=objective, **doc)
        cfg.validate()
        return cfg

    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _reject_unknown_keys(doc: dict, allowed: set[str], context: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown {context} keys: {sorted(unknown)}")


@dataclass
class EpochRecord:
    epoch: int
    train_micro_auc: float | None
    train_micro_f1: float | None
    train_precision_at_k: float | None
    val_micro_auc: float | None
    val_micro_f1: float | None
    val_precision_at_k: float | None
    checkpoint_path: str | None = None

    def value(self, metric: str, split: str = "val") -> float | None:
        return getattr(self, f"{split}_{metric}")


@dataclass
class RunHistory:
    records: list[EpochRecord]
    config_digest: str


@dataclass
class LabeledDataset:
    """One split's model inputs plus primary/auxiliary label matrices.

    inputs are (T, n_channels) grids for the LSTM or flat vectors for the MLP.
    """

    ids: list[str]
    inputs: list[np.ndarray]
    primary: np.ndarray
    aux: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.ids)


def dataset_from_episodes(
    ids: list[str],
    inputs_by_id: dict[str, np.ndarray],
    episodes_by_id: dict[str, RawEpisode],
    objective: ObjectiveConfig,
) -> LabeledDataset:
    """Assemble one split, slicing labels into primary and auxiliary blocks."""
    p, a = objective.primary_label_count, objective.aux_label_count
    primary, aux = [], []
    for eid in ids:
        labels = np.asarray(episodes_by_id[eid].labels)
        if labels.shape[0] < p + a:
            raise DataError(
                f"episode {eid!r} has {labels.shape[0]} labels; objective "
                f"needs {p} primary + {a} auxiliary"
            )
        primary.append(labels[:p])
        aux.append(labels[p : p + a])
    return LabeledDataset(
        ids=list(ids),
        inputs=[inputs_by_id[eid] for eid in ids],
        primary=np.asarray(primary, dtype=float),
        aux=np.asarray(aux, dtype=float) if a else None,
    )


def truncate_grid(values: np.ndarray, last_hours: int | None) -> np.ndarray:
    """Optional cap on sequence length: keep only the last N hourly rows."""
    if last_hours is None or values.shape[0] <= last_hours:
        return values
    return values[-last_hours:]


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

INFERENCE_CHUNK = 512


def predict_scores(arch_kind: str, params, inputs: list[np.ndarray]) -> np.ndarray:
    """Inference-mode scores for every example: (n, output_dim).

    LSTM predictions are the final-step outputs; sequences are grouped by
    length to keep padding small.
    """
    if arch_kind == "mlp":
        x = np.asarray(inputs, dtype=float)
        yhat, _ = mlp_forward(params, x)
        return yhat
    n = len(inputs)
    out = np.empty((n, params.output_dim))
    order = sorted(range(n), key=lambda j: inputs[j].shape[0])
    for c0 in range(0, n, INFERENCE_CHUNK):
        idx = order[c0 : c0 + INFERENCE_CHUNK]
        outputs, _ = forward_batch(params, [inputs[j] for j in idx])
        for j, traj in zip(idx, outputs):
            out[j] = traj[-1]
    return out


def predict_per_step(
    params: LstmParams, grid: np.ndarray, objective: ObjectiveConfig
) -> np.ndarray:
    """Per-step probability trajectory for one episode, primary labels only."""
    yhat, _ = forward_sequence(np.asarray(grid, dtype=float), params)
    return mask_predictions(yhat, objective)


def predict_episode(
    params: LstmParams, grid: np.ndarray, objective: ObjectiveConfig
) -> np.ndarray:
    """Whole-episode prediction: by definition the final step of the
    per-step trajectory."""
    return predict_per_step(params, grid, objective)[-1]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _split_metrics(
    scores: np.ndarray, primary: np.ndarray, objective: ObjectiveConfig, k: int
) -> tuple[float | None, float | None, float | None]:
    pm = PredictionMatrix(mask_predictions(scores, objective), primary)
    auc = micro_auc(pm)
    _, f1 = sweep_f1_threshold(pm.scores.ravel(), pm.labels.ravel())
    pak = precision_at_k(pm, k)
    return auc, f1, pak


def _init_params(config: TrainConfig, input_dim: int):
    out_dim = config.objective.total_label_count
    if config.arch_kind == "lstm":
        return init_lstm_params(input_dim, config.layers, out_dim, config.seed)
    return init_mlp_params(input_dim, config.layers, out_dim, config.seed)


def _params_doc(arch_kind: str, params) -> dict:
    if arch_kind == "lstm":
        return ckpt.lstm_params_to_dict(params)
    return {
        "hidden": [{"w": l.w, "b": l.b} for l in params.hidden],
        "out": {"w": params.out.w, "b": params.out.b},
    }


def params_from_checkpoint(doc: dict):
    if doc["arch_kind"] == "lstm":
        return ckpt.lstm_params_from_dict(doc["params"])
    from .baselines import DenseParams

    p = doc["params"]
    return MlpParams(
        hidden=[
            DenseParams(np.asarray(l["w"], dtype=float), np.asarray(l["b"], dtype=float))
            for l in p["hidden"]
        ],
        out=DenseParams(
            np.asarray(p["out"]["w"], dtype=float),
            np.asarray(p["out"]["b"], dtype=float),
        ),
    )


def _arch_doc(config: TrainConfig, input_dim: int) -> dict:
    return {
        "layers": list(config.layers),
        "input_dim": input_dim,
        "output_dim": config.objective.total_label_count,
        "dropout": config.dropout,
    }


def _train_epoch_lstm(
    params, train_set, targets, config: TrainConfig, opt, epoch: int
) -> None:
    order = stream(config.seed, STREAM_SHUFFLE, epoch).permutation(len(train_set))
    plan = DropoutPlan(p=config.dropout, train=True) if config.dropout > 0 else None
    for b0 in range(0, len(order), config.batch_size):
        batch_idx = order[b0 : b0 + config.batch_size]
        seqs = [train_set.inputs[j] for j in batch_idx]
        rngs = None
        if plan is not None:
            rngs = [
                stream(config.seed, STREAM_DROPOUT, epoch, int(j)) for j in batch_idx
            ]
        outputs, tape = forward_batch(params, seqs, plan, rngs)
        b = len(batch_idx)
        batch_loss = 0.0
        dys = []
        for out, j in zip(outputs, batch_idx):
            loss, dy = sequence_loss(out, targets[j], config.objective)
            batch_loss += loss / b
            dys.append(dy / b)
        if not np.isfinite(batch_loss):
            raise NumericError(
                f"non-finite loss at epoch {epoch}, batch {b0 // config.batch_size}"
            )
        grads = backward_batch(tape, dys)
        clip_gradients(grads, config.clip_norm)
        sgd_momentum_step(params, grads, opt)


def _train_epoch_mlp(
    params, x_train: np.ndarray, targets: np.ndarray, config: TrainConfig, opt,
    epoch: int,
) -> None:
    order = stream(config.seed, STREAM_SHUFFLE, epoch).permutation(x_train.shape[0])
    use_dropout = config.dropout > 0
    for counter, b0 in enumerate(range(0, len(order), config.batch_size)):
        batch_idx = order[b0 : b0 + config.batch_size]
        x = x_train[batch_idx]
        y = targets[batch_idx]
        plan = None
        if use_dropout:
            plan = DropoutPlan(
                p=config.dropout,
                train=True,
                rng=stream(config.seed, STREAM_DROPOUT, epoch, counter),
            )
        yhat, tape = mlp_forward(params, x, plan)
        b = x.shape[0]
        batch_loss = float(np.mean([log_loss(yhat[j], y[j]) for j in range(b)]))
        if not np.isfinite(batch_loss):
            raise NumericError(f"non-finite loss at epoch {epoch}, batch {counter}")
        grads = mlp_backward(params, tape, _log_loss_grad(yhat, y) / b)
        clip_gradients(grads, config.clip_norm)
        sgd_momentum_step(params, grads, opt)


def train(
    config: TrainConfig,
    train_set: LabeledDataset,
    val_set: LabeledDataset,
    out_dir: str | None = None,
) -> tuple[RunHistory, object]:
    """Run the full training loop; returns (history, final params).

    When out_dir is given, per-epoch checkpoints are written under
    out_dir/checkpoints and pruned as they are superseded, ending with the
    per-metric best epochs plus the final one.
    """
    config.validate()
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataError("train and validation splits must be nonempty")
    input_dim = (
        train_set.inputs[0].shape[1]
        if config.arch_kind == "lstm"
        else train_set.inputs[0].shape[0]
    )
    params = _init_params(config, input_dim)
    opt = OptimizerState(
        learning_rate=config.learning_rate,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
        clip_norm=config.clip_norm,
    )
    targets = compose_targets(train_set.primary, train_set.aux, config.objective)
    x_train = (
        np.asarray(train_set.inputs, dtype=float)
        if config.arch_kind == "mlp"
        else None
    )

    digest = config.digest()
    ckpt_dir = None
    if out_dir is not None:
        ckpt_dir = os.path.join(out_dir, "checkpoints")
        os.makedirs(ckpt_dir, exist_ok=True)
    arch = _arch_doc(config, input_dim)

    records: list[EpochRecord] = []
    best_value = {m: -np.inf for m in SELECTION_METRICS}
    best_epoch = {m: None for m in SELECTION_METRICS}
    for epoch in range(1, config.epochs + 1):
        if config.arch_kind == "lstm":
            _train_epoch_lstm(params, train_set, targets, config, opt, epoch)
        else:
            _train_epoch_mlp(params, x_train, targets, config, opt, epoch)

        train_scores = predict_scores(config.arch_kind, params, train_set.inputs)
        val_scores = predict_scores(config.arch_kind, params, val_set.inputs)
        t_auc, t_f1, t_pak = _split_metrics(
            train_scores, train_set.primary, config.objective, config.k
        )
        v_auc, v_f1, v_pak = _split_metrics(
            val_scores, val_set.primary, config.objective, config.k
        )
        record = EpochRecord(epoch, t_auc, t_f1, t_pak, v_auc, v_f1, v_pak)

        if ckpt_dir is not None:
            path = os.path.join(ckpt_dir, f"epoch_{epoch:04d}.json")
            ckpt.save_checkpoint(
                path,
                config.arch_kind,
                epoch,
                digest,
                arch,
                _params_doc(config.arch_kind, params),
                opt,
                extra={"train_config": config.to_dict()},
            )
            record.checkpoint_path = path
        records.append(record)

        for m in SELECTION_METRICS:
            v = record.value(m)
            v = -np.inf if v is None else v
            if v > best_value[m]:
                best_value[m] = v
                best_epoch[m] = epoch
        if ckpt_dir is not None:
            _prune_checkpoints(records, set(best_epoch.values()) | {epoch})

    return RunHistory(records, digest), params


def _prune_checkpoints(records: list[EpochRecord], keep_epochs: set) -> None:
    for rec in records:
        if rec.checkpoint_path and rec.epoch not in keep_epochs:
            if os.path.exists(rec.checkpoint_path):
                os.remove(rec.checkpoint_path)
            rec.checkpoint_path = None


def select_model(history: RunHistory) -> int:
    """The epoch that is best on >= 2 of the 3 validation metrics.

    Per-metric ties go to the earlier epoch; if the three metrics disagree
    entirely, fall back to the micro-AUC best.
    """
    if not history.records:
        raise DataError("empty run history")
    bests = []
    for metric in SELECTION_METRICS:
        best_epoch, best_val = None, -np.inf
        for rec in history.records:
            v = rec.value(metric)
            v = -np.inf if v is None else v
            if v > best_val:
                best_val, best_epoch = v, rec.epoch
        bests.append(best_epoch)
    counts: dict[int, int] = {}
    for e in bests:
        counts[e] = counts.get(e, 0) + 1
    majority = sorted(e for e, c in counts.items() if c >= 2)
    if majority:
        return majority[0]
    return bests[0]


def ensemble(
    preds_a: PredictionMatrix, preds_b: PredictionMatrix, mode: str
) -> PredictionMatrix:
    """Elementwise mean or max of two score matrices over identical labels."""
    if mode not in ("mean", "max"):
        raise ConfigError(f"ensemble mode must be 'mean' or 'max', got {mode!r}")
    if preds_a.scores.shape != preds_b.scores.shape:
        raise DataError(
            f"score shapes differ: {preds_a.scores.shape} vs {preds_b.scores.shape}"
        )
    if not np.array_equal(preds_a.labels, preds_b.labels):
        raise DataError("ensemble constituents disagree on ground-truth labels")
    if mode == "mean":
        scores = (preds_a.scores + preds_b.scores) / 2.0
    else:
        scores = np.maximum(preds_a.scores, preds_b.scores)
    return PredictionMatrix(scores, preds_a.labels.copy())


# ---------------------------------------------------------------------------
# History serialization
# ---------------------------------------------------------------------------


def write_history_csv(path: str, history: RunHistory, k: int) -> None:
    """Learning-curve data: one row per (epoch, split)."""
    tmp = path + ".tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "split", "micro_auc", "micro_f1", f"precision_at_{k}"])
        for rec in history.records:
            for split in ("train", "validation"):
                prefix = "train" if split == "train" else "val"
                row = [rec.epoch, split]
                for m in SELECTION_METRICS:
                    v = getattr(rec, f"{prefix}_{m}")
                    row.append("" if v is None else repr(float(v)))
                writer.writerow(row)
    os.replace(tmp, path)


def read_history_csv(path: str) -> RunHistory:
    by_epoch: dict[int, dict] = {}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            epoch, split = int(row[0]), row[1]
            prefix = "train" if split == "train" else "val"
            rec = by_epoch.setdefault(epoch, {"epoch": epoch})
            for name, raw in zip(SELECTION_METRICS, row[2:]):
                rec[f"{prefix}_{name}"] = float(raw) if raw else None
    records = [
        EpochRecord(
            epoch=doc["epoch"],
            train_micro_auc=doc.get("train_micro_auc"),
            train_micro_f1=doc.get("train_micro_f1"),
            train_precision_at_k=doc.get("train_precision_at_k"),
            val_micro_auc=doc.get("val_micro_auc"),
            val_micro_f1=doc.get("val_micro_f1"),
            val_precision_at_k=doc.get("val_precision_at_k"),
        )
        for doc in sorted(by_epoch.values(), key=lambda d: d["epoch"])
    ]
    return RunHistory(records, config_digest="")
