"""Comparison models: base-rate classifier, per-label logistic regression
with a shared l2 penalty, and a ReLU MLP with dropout.

The logistic fits use deterministic full-batch gradient descent with a step
size derived from a Lipschitz bound, so the weakest baseline carries no seed
sensitivity.  All labels share one penalty strength, selected on validation
micro AUC.  The MLP is built from the dense primitives in the LSTM module and
trains through the same SGD-momentum/clipping/decay loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .lstm import DropoutPlan, dense_backward, dense_forward, sigmoid
from .objectives import PROB_EPS, log_loss, _log_loss_grad
from .rng import STREAM_INIT, stream

DEFAULT_L2_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)


# ---------------------------------------------------------------------------
# Base rate
# ---------------------------------------------------------------------------


@dataclass
class BaseRateModel:
    rates: np.ndarray  # per-label training-set positive frequency


def fit_base_rate(labels: np.ndarray) -> BaseRateModel:
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.shape[0] == 0:
        raise DataError("base-rate fit needs a nonempty (n, L) label matrix")
    return BaseRateModel(rates=labels.mean(axis=0))


def predict_base_rate(model: BaseRateModel, n_examples: int) -> np.ndarray:
    return np.tile(model.rates, (n_examples, 1))


# ---------------------------------------------------------------------------
# Logistic regression
# ---------------------------------------------------------------------------


@dataclass
class LogisticModel:
    weights: np.ndarray  # (L, D)
    bias: np.ndarray  # (L,)
    l2: float


def predict_logistic(model: LogisticModel, x: np.ndarray) -> np.ndarray:
    return sigmoid(x @ model.weights.T + model.bias)


def _fit_logistic_single_l2(
    x: np.ndarray,
    y: np.ndarray,
    l2: float,
    max_iter: int = 500,
    tol: float = 1e-8,
) -> tuple[np.ndarray, np.ndarray]:
    """All per-label classifiers at one penalty, fit jointly but independently.

    Columns update independently (shared design matrix), and a column freezes
    once its own gradient norm passes the tolerance, so this is exactly the
    per-label fit.  Degenerate labels (single-class in train) get the constant
    base-rate predictor: zero weights and a logit-of-rate bias.
    """
    n, d = x.shape
    n_labels = y.shape[1]
    xb = np.hstack([x, np.ones((n, 1))])
    # Smoothness bound for mean BCE: ||X||^2 / (4n) + l2.
    lam_max = float(np.linalg.eigvalsh(xb.T @ xb)[-1])
    lr = 1.0 / (lam_max / (4.0 * n) + l2) if lam_max > 0 else 1.0

    rates = y.mean(axis=0)
    degenerate = (rates == 0.0) | (rates == 1.0)
    w = np.zeros((d + 1, n_labels))
    active = ~degenerate
    for _ in range(max_iter):
        if not active.any():
            break
        cols = np.flatnonzero(active)
        p = sigmoid(xb @ w[:, cols])
        g = xb.T @ (p - y[:, cols]) / n
        g[:d] += l2 * w[:d, cols]
        norms = np.sqrt(np.sum(g * g, axis=0))
        done = norms <= tol
        w[:, cols[~done]] -= lr * g[:, ~done]
        active[cols[done]] = False

    safe_rates = np.clip(rates, PROB_EPS, 1.0 - PROB_EPS)
    w[:d, degenerate] = 0.0
    w[d, degenerate] = np.log(safe_rates[degenerate] / (1.0 - safe_rates[degenerate]))
    return w[:d].T, w[d]


def fit_logistic(
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray,
    y_val: np.ndarray,
    l2_grid=DEFAULT_L2_GRID,
    max_iter: int = 500,
    tol: float = 1e-8,
) -> LogisticModel:
    """Fit at every penalty in the grid; keep the best validation micro AUC."""
    from .metrics import PredictionMatrix, micro_auc

    if x_train.shape[0] != y_train.shape[0]:
        raise DataError("feature/label row mismatch")
    best = None
    best_score = -np.inf
    for l2 in l2_grid:
        weights, bias = _fit_logistic_single_l2(x_train, y_train, l2, max_iter, tol)
        model = LogisticModel(weights, bias, l2)
        scores = predict_logistic(model, x_val)
        auc = micro_auc(PredictionMatrix(scores, np.asarray(y_val)))
        score = -1.0 if auc is None else auc
        if score > best_score:
            best, best_score = model, score
    return best


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------


@dataclass
class DenseParams:
    w: np.ndarray  # (units, fan_in)
    b: np.ndarray


@dataclass
class MlpParams:
    hidden: list[DenseParams]  # ReLU layers
    out: DenseParams  # sigmoid head

    @property
    def input_dim(self) -> int:
        return self.hidden[0].w.shape[1] if self.hidden else self.out.w.shape[1]

    @property
    def output_dim(self) -> int:
        return self.out.b.shape[0]

    @property
    def hidden_widths(self) -> list[int]:
        return [layer.w.shape[0] for layer in self.hidden]

    def items(self) -> list[tuple[str, np.ndarray, bool]]:
        out = []
        for l, layer in enumerate(self.hidden):
            out.append((f"hidden[{l}].w", layer.w, False))
            out.append((f"hidden[{l}].b", layer.b, True))
        out.append(("out.w", self.out.w, False))
        out.append(("out.b", self.out.b, True))
        return out

    def zeros_like(self) -> "MlpParams":
        return MlpParams(
            hidden=[
                DenseParams(np.zeros_like(l.w), np.zeros_like(l.b))
                for l in self.hidden
            ],
            out=DenseParams(np.zeros_like(self.out.w), np.zeros_like(self.out.b)),
        )


def init_mlp_params(
    input_dim: int, hidden_widths: list[int], output_dim: int, seed: int
) -> MlpParams:
    rng = stream(seed, STREAM_INIT)
    hidden = []
    fan = input_dim
    for width in hidden_widths:
        bound = 1.0 / np.sqrt(fan)
        hidden.append(
            DenseParams(rng.uniform(-bound, bound, (width, fan)), np.zeros(width))
        )
        fan = width
    bound = 1.0 / np.sqrt(fan)
    out = DenseParams(rng.uniform(-bound, bound, (output_dim, fan)), np.zeros(output_dim))
    return MlpParams(hidden, out)


@dataclass
class MlpTape:
    caches: list[dict]
    masks: list[np.ndarray] | None
    out_cache: dict


def mlp_forward(
    params: MlpParams, x: np.ndarray, dropout: DropoutPlan | None = None
) -> tuple[np.ndarray, MlpTape]:
    """Hidden ReLU layers with dropout on their activations, sigmoid head."""
    dropout = dropout or DropoutPlan()
    dropout.validate()
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise DataError(f"expected (n, {params.input_dim}) inputs, got {x.shape}")
    masks = None
    if dropout.active:
        if dropout.rng is None:
            raise ConfigError("training with dropout requires an rng")
        scale = 1.0 / (1.0 - dropout.p)
        masks = []
    caches = []
    h = x
    for layer in params.hidden:
        h, cache = dense_forward(h, layer.w, layer.b, "relu")
        caches.append(cache)
        if masks is not None:
            mask = (dropout.rng.random(h.shape) >= dropout.p).astype(float) * scale
            masks.append(mask)
            h = h * mask
    yhat, out_cache = dense_forward(h, params.out.w, params.out.b, "sigmoid")
    return yhat, MlpTape(caches, masks, out_cache)


def mlp_backward(params: MlpParams, tape: MlpTape, dyhat: np.ndarray) -> MlpParams:
    """Exact gradients; scaling of dyhat is the caller's responsibility."""
    grads = params.zeros_like()
    dx, dw, db = dense_backward(dyhat, tape.out_cache, params.out.w)
    grads.out.w += dw
    grads.out.b += db
    for l in range(len(params.hidden) - 1, -1, -1):
        if tape.masks is not None:
            dx = dx * tape.masks[l]
        dx, dw, db = dense_backward(dx, tape.caches[l], params.hidden[l].w)
        grads.hidden[l].w += dw
        grads.hidden[l].b += db
    return grads


def mlp_objective(
    params: MlpParams,
    x: np.ndarray,
    y: np.ndarray,
    weight_decay: float = 0.0,
) -> tuple[float, MlpParams]:
    """Mean multilabel log loss over the batch (dropout off) plus decay term."""
    yhat, tape = mlp_forward(params, x)
    n = x.shape[0]
    total = float(np.mean([log_loss(yhat[j], y[j]) for j in range(n)]))
    dyhat = _log_loss_grad(yhat, y) / n
    grads = mlp_backward(params, tape, dyhat)
    if weight_decay:
        grad_map = {name: arr for name, arr, _ in grads.items()}
        for name, theta, is_bias in params.items():
            if not is_bias:
                total += 0.5 * weight_decay * float(np.sum(theta * theta))
                grad_map[name] += weight_decay * theta
    return total, grads


def grad_check_mlp(
    params: MlpParams,
    x: np.ndarray,
    y: np.ndarray,
    eps: float = 1e-5,
    weight_decay: float = 0.0,
) -> float:
    """Max relative error of MLP gradients vs central differences."""
    from .lstm import _central_difference_max_err

    _, analytic = mlp_objective(params, x, y, weight_decay)

    def value():
        loss, _ = mlp_objective(params, x, y, weight_decay)
        return loss

    return _central_difference_max_err(params, value, analytic, eps)
