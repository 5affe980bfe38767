"""Model checkpoints: a single JSON document with decimal parameter arrays.

Floats are written with 17 significant digits, enough to round-trip any IEEE
double exactly, so save -> load reproduces bitwise-identical predictions.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

from .errors import ConfigError, DataError
from .lstm import GATES, LstmLayerParams, LstmParams, OptimizerState

FORMAT_VERSION = 1


def _format_float(x: float) -> str:
    if not math.isfinite(x):
        raise DataError(f"cannot serialize non-finite value {x!r}")
    return format(float(x), ".17g")


def _dump(obj, out: list[str]) -> None:
    """Minimal JSON writer with fixed float formatting and insertion order."""
    if isinstance(obj, dict):
        out.append("{")
        for j, (key, val) in enumerate(obj.items()):
            if j:
                out.append(",")
            out.append(json.dumps(key))
            out.append(":")
            _dump(val, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for j, val in enumerate(obj):
            if j:
                out.append(",")
            _dump(val, out)
        out.append("]")
    elif isinstance(obj, bool) or obj is None:
        out.append(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_format_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, np.ndarray):
        _dump(obj.tolist(), out)
    else:
        raise DataError(f"cannot serialize {type(obj).__name__} in a checkpoint")


def dumps(obj) -> str:
    parts: list[str] = []
    _dump(obj, parts)
    return "".join(parts)


def _layer_to_dict(layer: LstmLayerParams) -> dict:
    doc = {}
    for gate in GATES:
        doc[f"w_{gate}x"] = layer.gate_block(gate, "x")
        doc[f"w_{gate}h"] = layer.gate_block(gate, "h")
        doc[f"b_{gate}"] = layer.gate_block(gate, "b")
    return doc


def _layer_from_dict(doc: dict) -> LstmLayerParams:
    wx = np.concatenate([np.asarray(doc[f"w_{g}x"], dtype=float) for g in GATES])
    wh = np.concatenate([np.asarray(doc[f"w_{g}h"], dtype=float) for g in GATES])
    b = np.concatenate([np.asarray(doc[f"b_{g}"], dtype=float) for g in GATES])
    return LstmLayerParams(wx, wh, b)


def lstm_params_to_dict(params: LstmParams) -> dict:
    return {
        "layers": [_layer_to_dict(layer) for layer in params.layers],
        "w_out": params.w_out,
        "b_out": params.b_out,
    }


def lstm_params_from_dict(doc: dict) -> LstmParams:
    return LstmParams(
        layers=[_layer_from_dict(d) for d in doc["layers"]],
        w_out=np.asarray(doc["w_out"], dtype=float),
        b_out=np.asarray(doc["b_out"], dtype=float),
    )


def save_checkpoint(
    path: str,
    arch_kind: str,
    epoch: int,
    config_digest: str,
    arch: dict,
    params_doc: dict,
    optimizer: OptimizerState | None,
    extra: dict | None = None,
) -> None:
    """Write a checkpoint atomically.  params_doc is the nested array document
    produced by the model's to_dict helper."""
    opt_doc = None
    if optimizer is not None:
        opt_doc = {
            "learning_rate": optimizer.learning_rate,
            "momentum": optimizer.momentum,
            "weight_decay": optimizer.weight_decay,
            "clip_norm": optimizer.clip_norm,
            "velocity": {k: v for k, v in sorted(optimizer.velocity.items())},
        }
    doc = {
        "format_version": FORMAT_VERSION,
        "arch_kind": arch_kind,
        "epoch": epoch,
        "config_digest": config_digest,
        "arch": arch,
        "params": params_doc,
        "optimizer": opt_doc,
    }
    if extra:
        doc.update(extra)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(dumps(doc))
        fh.write("\n")
    os.replace(tmp, path)


def load_checkpoint(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ConfigError(
            f"{path}: unsupported checkpoint format {doc.get('format_version')!r}"
        )
    for key in ("arch_kind", "epoch", "config_digest", "arch", "params"):
        if key not in doc:
            raise ConfigError(f"{path}: checkpoint missing {key!r}")
    return doc


def optimizer_from_doc(doc: dict | None) -> OptimizerState:
    if doc is None:
        return OptimizerState()
    opt = OptimizerState(
        learning_rate=float(doc["learning_rate"]),
        momentum=float(doc["momentum"]),
        weight_decay=float(doc["weight_decay"]),
        clip_norm=float(doc["clip_norm"]),
    )
    opt.velocity = {
        k: np.asarray(v, dtype=float) for k, v in (doc.get("velocity") or {}).items()
    }
    return opt
