"""Stacked LSTM with forget gates, manual backpropagation through time,
dropout on non-recurrent connections, gradient clipping, SGD with momentum,
and finite-difference gradient checking.

Cell update, with sigmoid gates i/f/o and tanh on the input node g and the
internal state s:

    g = tanh(Wgx x + Wgh h_prev + bg)
    i = sig (Wix x + Wih h_prev + bi)
    f = sig (Wfx x + Wfh h_prev + bf)
    o = sig (Wox x + Woh h_prev + bo)
    s = g * i + s_prev * f
    h = tanh(s) * o

The four gate blocks are stored fused, rows ordered [g, i, f, o], so a step
costs one input projection and one recurrent matmul.  Batches of
variable-length sequences are zero-padded internally; steps beyond a
sequence's length receive zero loss gradient and therefore contribute exactly
nothing to parameter gradients, so the result equals processing each sequence
independently.

Dropout masks (inverted scaling, resampled per layer and per step) apply to a
layer's output sequence before it feeds the next layer and before the output
head; the recurrent path is never masked.

Also provides the dense-layer primitives reused by the MLP baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .objectives import sequence_loss
from .rng import STREAM_INIT, stream


def sigmoid(x: np.ndarray) -> np.ndarray:
    # exp overflow for very negative x still yields the correct limit 0.
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

GATES = ("g", "i", "f", "o")


@dataclass
class LstmLayerParams:
    """One layer's fused gate matrices: wx (4C, fan_in), wh (4C, C), b (4C,)."""

    wx: np.ndarray
    wh: np.ndarray
    b: np.ndarray

    @property
    def cells(self) -> int:
        return self.wh.shape[1]

    @property
    def fan_in(self) -> int:
        return self.wx.shape[1]

    def gate_block(self, gate: str, which: str) -> np.ndarray:
        """View of one gate's slice of wx / wh / b (gate in GATES)."""
        k = GATES.index(gate)
        c = self.cells
        arr = {"x": self.wx, "h": self.wh, "b": self.b}[which]
        return arr[k * c : (k + 1) * c]


@dataclass
class LstmParams:
    layers: list[LstmLayerParams]
    w_out: np.ndarray  # (L_out, top cells)
    b_out: np.ndarray  # (L_out,)

    @property
    def input_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def output_dim(self) -> int:
        return self.b_out.shape[0]

    @property
    def layer_cells(self) -> list[int]:
        return [layer.cells for layer in self.layers]

    def items(self) -> list[tuple[str, np.ndarray, bool]]:
        """(name, array, is_bias) triples in a fixed order."""
        out = []
        for l, layer in enumerate(self.layers):
            out.append((f"layers[{l}].wx", layer.wx, False))
            out.append((f"layers[{l}].wh", layer.wh, False))
            out.append((f"layers[{l}].b", layer.b, True))
        out.append(("w_out", self.w_out, False))
        out.append(("b_out", self.b_out, True))
        return out

    def zeros_like(self) -> "LstmParams":
        return LstmParams(
            layers=[
                LstmLayerParams(
                    np.zeros_like(l.wx), np.zeros_like(l.wh), np.zeros_like(l.b)
                )
                for l in self.layers
            ],
            w_out=np.zeros_like(self.w_out),
            b_out=np.zeros_like(self.b_out),
        )


def init_lstm_params(
    input_dim: int,
    layer_cells: list[int],
    output_dim: int,
    seed: int,
    forget_bias: float = 1.0,
) -> LstmParams:
    """Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights; forget bias 1.0."""
    if not layer_cells:
        raise ConfigError("need at least one LSTM layer")
    rng = stream(seed, STREAM_INIT)
    layers = []
    fan = input_dim
    for cells in layer_cells:
        bx = 1.0 / np.sqrt(fan)
        bh = 1.0 / np.sqrt(cells)
        wx = rng.uniform(-bx, bx, (4 * cells, fan))
        wh = rng.uniform(-bh, bh, (4 * cells, cells))
        b = np.zeros(4 * cells)
        b[2 * cells : 3 * cells] = forget_bias  # forget gate block
        layers.append(LstmLayerParams(wx, wh, b))
        fan = cells
    bo = 1.0 / np.sqrt(fan)
    w_out = rng.uniform(-bo, bo, (output_dim, fan))
    b_out = np.zeros(output_dim)
    return LstmParams(layers, w_out, b_out)


# ---------------------------------------------------------------------------
# Dropout
# ---------------------------------------------------------------------------


@dataclass
class DropoutPlan:
    """Dropout setting for one forward pass.

    p is the drop probability on non-recurrent connections; rng supplies the
    masks when training with p > 0.  At inference the plan is the identity.
    """

    p: float = 0.0
    train: bool = False
    rng: np.random.Generator | None = None

    def validate(self) -> None:
        if not (0.0 <= self.p < 1.0):
            raise ConfigError(f"dropout p must be in [0, 1), got {self.p}")
        if self.train and self.p > 0.0 and self.rng is None:
            raise ConfigError("training with dropout requires an rng")

    @property
    def active(self) -> bool:
        return self.train and self.p > 0.0


def _draw_masks(
    rng: np.random.Generator, n_steps: int, layer_cells: list[int], p: float
) -> list[np.ndarray]:
    """Scaled keep-masks, one (n_steps, cells) array per layer."""
    scale = 1.0 / (1.0 - p)
    return [
        (rng.random((n_steps, c)) >= p).astype(float) * scale for c in layer_cells
    ]


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


@dataclass
class BatchTape:
    """Activations cached by forward_batch for the backward pass."""

    params: LstmParams
    lengths: list[int]
    inputs: list[np.ndarray]  # per layer: (T, B, fan), post-dropout of below
    gates: list[np.ndarray]  # per layer: (T, B, 4C), activated [g, i, f, o]
    states: list[np.ndarray]  # per layer: (T, B, C)
    tanh_states: list[np.ndarray]  # per layer: (T, B, C)
    hidden: list[np.ndarray]  # per layer: (T, B, C), pre-dropout
    masks: list[np.ndarray] | None  # per layer: (T, B, C), scaled, or None
    yhat: np.ndarray  # (T, B, L_out)


def lstm_cell_forward(
    x_in: np.ndarray,
    h_prev: np.ndarray,
    s_prev: np.ndarray,
    layer: LstmLayerParams,
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Single-step cell update; returns (h, s, gate_cache)."""
    c = layer.cells
    z = layer.wx @ x_in + layer.wh @ h_prev + layer.b
    g = np.tanh(z[:c])
    i = sigmoid(z[c : 2 * c])
    f = sigmoid(z[2 * c : 3 * c])
    o = sigmoid(z[3 * c :])
    s = g * i + s_prev * f
    h = np.tanh(s) * o
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(s))):
        raise NumericError("non-finite cell state in lstm_cell_forward")
    return h, s, {"g": g, "i": i, "f": f, "o": o, "s": s}


def forward_batch(
    params: LstmParams,
    seqs: list[np.ndarray],
    dropout: DropoutPlan | None = None,
    mask_rngs: list[np.random.Generator] | None = None,
) -> tuple[list[np.ndarray], BatchTape]:
    """Run the stacked LSTM over a batch of (T_i, input_dim) sequences.

    Returns per-sequence probability trajectories [(T_i, L_out), ...] plus the
    tape for backward_batch.  When dropout is active, masks come from
    mask_rngs (one generator per sequence) or from dropout.rng for a
    single-sequence batch.
    """
    dropout = dropout or DropoutPlan()
    dropout.validate()
    if not seqs:
        raise DataError("empty batch")
    lengths = []
    for k, seq in enumerate(seqs):
        if seq.ndim != 2 or seq.shape[1] != params.input_dim:
            raise DataError(
                f"sequence {k}: expected (T, {params.input_dim}), got {seq.shape}"
            )
        if seq.shape[0] < 1:
            raise DataError(f"sequence {k}: zero-length sequence")
        lengths.append(seq.shape[0])
    B = len(seqs)
    T = max(lengths)
    cells = params.layer_cells

    x = np.zeros((T, B, params.input_dim))
    for k, seq in enumerate(seqs):
        x[: lengths[k], k, :] = seq

    masks = None
    if dropout.active:
        rngs = mask_rngs
        if rngs is None:
            if B != 1:
                raise ConfigError("batched dropout requires one rng per sequence")
            rngs = [dropout.rng]
        if len(rngs) != B:
            raise ConfigError(f"expected {B} mask rngs, got {len(rngs)}")
        masks = [np.ones((T, B, c)) for c in cells]
        for k, rng in enumerate(rngs):
            per_layer = _draw_masks(rng, lengths[k], cells, dropout.p)
            for l in range(len(cells)):
                masks[l][: lengths[k], k, :] = per_layer[l]

    inputs, gate_seq, state_seq, tanh_seq, hidden_seq = [], [], [], [], []
    layer_in = x
    with np.errstate(over="ignore"):
        for l, layer in enumerate(params.layers):
            c = layer.cells
            xproj = (
                layer_in.reshape(T * B, -1) @ layer.wx.T + layer.b
            ).reshape(T, B, 4 * c)
            gates = np.empty((T, B, 4 * c))
            states = np.empty((T, B, c))
            tanhs = np.empty((T, B, c))
            hidden = np.empty((T, B, c))
            h = np.zeros((B, c))
            s = np.zeros((B, c))
            wh_t = layer.wh.T
            for t in range(T):
                zt = gates[t]
                np.matmul(h, wh_t, out=zt)
                zt += xproj[t]
                # One tanh for the input node, one sigmoid for the 3 gates.
                np.tanh(zt[:, :c], out=zt[:, :c])
                zt[:, c:] = sigmoid(zt[:, c:])
                st = states[t]
                np.multiply(zt[:, :c], zt[:, c : 2 * c], out=st)
                st += s * zt[:, 2 * c : 3 * c]
                s = st
                ts = np.tanh(st, out=tanhs[t])
                h = np.multiply(ts, zt[:, 3 * c :], out=hidden[t])
            if not np.all(np.isfinite(states)):
                bad = int(np.argwhere(~np.isfinite(states).all(axis=(1, 2)))[0][0])
                raise NumericError(f"non-finite state at layer {l}, step {bad}")
            inputs.append(layer_in)
            gate_seq.append(gates)
            state_seq.append(states)
            tanh_seq.append(tanhs)
            hidden_seq.append(hidden)
            layer_in = hidden * masks[l] if masks is not None else hidden

        logits = layer_in.reshape(T * B, -1) @ params.w_out.T + params.b_out
        yhat = sigmoid(logits).reshape(T, B, params.output_dim)

    tape = BatchTape(
        params=params,
        lengths=lengths,
        inputs=inputs,
        gates=gate_seq,
        states=state_seq,
        tanh_states=tanh_seq,
        hidden=hidden_seq,
        masks=masks,
        yhat=yhat,
    )
    outputs = [yhat[: lengths[k], k, :] for k in range(B)]
    return outputs, tape


def backward_batch(tape: BatchTape, dyhat: list[np.ndarray]) -> LstmParams:
    """Exact parameter gradients given per-sequence loss gradients on yhat.

    dyhat entries are (T_i, L_out); scaling (per-step weights, batch
    averaging) is the caller's responsibility.  Returns the sum over the batch
    of per-sequence gradients.
    """
    params = tape.params
    B = len(tape.lengths)
    T = max(tape.lengths)
    if len(dyhat) != B:
        raise DataError(f"expected {B} loss-gradient matrices, got {len(dyhat)}")
    dy = np.zeros((T, B, params.output_dim))
    for k, d in enumerate(dyhat):
        if d.shape != (tape.lengths[k], params.output_dim):
            raise DataError(
                f"sequence {k}: loss gradient shape {d.shape} does not match "
                f"({tape.lengths[k]}, {params.output_dim})"
            )
        dy[: tape.lengths[k], k, :] = d

    grads = params.zeros_like()
    top = tape.hidden[-1]
    top_dropped = top * tape.masks[-1] if tape.masks is not None else top

    # Output head: yhat = sigmoid(w_out h + b_out).
    dz_out = dy * tape.yhat * (1.0 - tape.yhat)
    flat = dz_out.reshape(T * B, -1)
    grads.w_out += flat.T @ top_dropped.reshape(T * B, -1)
    grads.b_out += flat.sum(axis=0)
    d_dropped = (flat @ params.w_out).reshape(T, B, -1)

    for l in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[l]
        c = layer.cells
        gates = tape.gates[l]
        states = tape.states[l]
        tanhs = tape.tanh_states[l]
        # Gradient at the layer's pre-dropout output.
        dh_seq = d_dropped * tape.masks[l] if tape.masks is not None else d_dropped

        dz = np.empty((T, B, 4 * c))
        dh_rec = np.zeros((B, c))
        ds_rec = np.zeros((B, c))
        for t in range(T - 1, -1, -1):
            zt = gates[t]
            g = zt[:, :c]
            i = zt[:, c : 2 * c]
            f = zt[:, 2 * c : 3 * c]
            o = zt[:, 3 * c :]
            ts = tanhs[t]
            dzt = dz[t]
            dh = dh_seq[t] + dh_rec
            ds = dh * o * (1.0 - ts * ts) + ds_rec
            np.multiply(ds, i, out=dzt[:, :c])  # input node
            np.multiply(ds, g, out=dzt[:, c : 2 * c])  # input gate
            if t > 0:
                np.multiply(ds, states[t - 1], out=dzt[:, 2 * c : 3 * c])
            else:
                dzt[:, 2 * c : 3 * c] = 0.0  # initial state is zero
            np.multiply(dh, ts, out=dzt[:, 3 * c :])  # output gate
            ds_rec = ds * f
            # Activation derivatives: tanh' on the g block, sigmoid' on i/f/o.
            dzt[:, :c] *= 1.0 - g * g
            sig = zt[:, c:]
            dzt[:, c:] *= sig * (1.0 - sig)
            dh_rec = dzt @ layer.wh

        h_prev = np.concatenate(
            [np.zeros((1, B, c)), tape.hidden[l][:-1]], axis=0
        )
        flat_dz = dz.reshape(T * B, -1)
        grads.layers[l].wh += flat_dz.T @ h_prev.reshape(T * B, -1)
        grads.layers[l].wx += flat_dz.T @ tape.inputs[l].reshape(T * B, -1)
        grads.layers[l].b += flat_dz.sum(axis=0)
        d_dropped = (flat_dz @ layer.wx).reshape(T, B, -1)

    return grads


def forward_sequence(
    inputs: np.ndarray, params: LstmParams, dropout: DropoutPlan | None = None
) -> tuple[np.ndarray, BatchTape]:
    """Single-sequence forward: (T, input_dim) -> per-step probabilities (T, L_out)."""
    outputs, tape = forward_batch(params, [np.asarray(inputs, dtype=float)], dropout)
    return outputs[0], tape


def backward_sequence(tape: BatchTape, dyhat: np.ndarray) -> LstmParams:
    return backward_batch(tape, [np.asarray(dyhat, dtype=float)])


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-6
    clip_norm: float = 1.0
    velocity: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be nonnegative")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")


def global_grad_norm(grads) -> float:
    total = 0.0
    for _, arr, _ in grads.items():
        total += float(np.sum(arr * arr))
    return float(np.sqrt(total))


def clip_gradients(grads, clip_norm: float):
    """Scale all gradients by clip_norm / norm when the global norm exceeds it."""
    norm = global_grad_norm(grads)
    if norm > clip_norm:
        scale = clip_norm / norm
        for _, arr, _ in grads.items():
            arr *= scale
    return grads


def sgd_momentum_step(params, grads, opt: OptimizerState) -> None:
    """In-place update: v <- mu v - lr (g + decay * theta); theta <- theta + v.

    Weight decay applies to weight matrices only, never biases.
    """
    grad_map = {name: arr for name, arr, _ in grads.items()}
    for name, theta, is_bias in params.items():
        g = grad_map[name]
        if opt.weight_decay and not is_bias:
            g = g + opt.weight_decay * theta
        v = opt.velocity.get(name)
        if v is None:
            v = np.zeros_like(theta)
        v = opt.momentum * v - opt.learning_rate * g
        opt.velocity[name] = v
        theta += v


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def _central_difference_max_err(params, value_fn, analytic, eps: float) -> float:
    """Max relative error of analytic gradients vs central differences."""
    if eps <= 0:
        raise ConfigError(f"finite-difference step must be positive, got {eps}")
    analytic_map = {name: arr for name, arr, _ in analytic.items()}
    worst = 0.0
    for name, theta, _ in params.items():
        a = analytic_map[name]
        flat = theta.reshape(-1)
        aflat = a.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            hi = value_fn()
            flat[j] = orig - eps
            lo = value_fn()
            flat[j] = orig
            numeric = (hi - lo) / (2.0 * eps)
            denom = max(abs(aflat[j]), abs(numeric), 1e-8)
            worst = max(worst, abs(aflat[j] - numeric) / denom)
    return worst


def lstm_objective(
    params: LstmParams,
    batch: list[tuple[np.ndarray, np.ndarray]],
    objective_config,
    weight_decay: float = 0.0,
) -> tuple[float, LstmParams]:
    """Mean sequence loss over a batch (dropout off) plus the decay term,
    with its exact gradient.  Shared by training and gradient checking."""
    seqs = [np.asarray(x, dtype=float) for x, _ in batch]
    outputs, tape = forward_batch(params, seqs)
    total = 0.0
    dys = []
    B = len(batch)
    for out, (_, y) in zip(outputs, batch):
        loss, dy = sequence_loss(out, y, objective_config)
        total += loss / B
        dys.append(dy / B)
    grads = backward_batch(tape, dys)
    if weight_decay:
        grad_map = {name: arr for name, arr, _ in grads.items()}
        for name, theta, is_bias in params.items():
            if not is_bias:
                total += 0.5 * weight_decay * float(np.sum(theta * theta))
                grad_map[name] += weight_decay * theta
    return total, grads


def grad_check(
    params: LstmParams,
    batch: list[tuple[np.ndarray, np.ndarray]],
    objective_config,
    eps: float = 1e-5,
    weight_decay: float = 0.0,
) -> float:
    """Max relative error between BPTT gradients and central differences."""
    _, analytic = lstm_objective(params, batch, objective_config, weight_decay)

    def value():
        loss, _ = lstm_objective(params, batch, objective_config, weight_decay)
        return loss

    return _central_difference_max_err(params, value, analytic, eps)


# ---------------------------------------------------------------------------
# Dense primitives (MLP building blocks)
# ---------------------------------------------------------------------------

ACTIVATIONS = ("relu", "sigmoid", "identity")


def dense_forward(
    x: np.ndarray, weight: np.ndarray, bias: np.ndarray, activation: str
) -> tuple[np.ndarray, dict]:
    """Affine map plus activation; cache holds what backward needs."""
    if activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}")
    pre = x @ weight.T + bias
    if activation == "relu":
        out = np.maximum(pre, 0.0)
    elif activation == "sigmoid":
        out = sigmoid(pre)
    else:
        out = pre
    return out, {"x": x, "pre": pre, "out": out, "activation": activation}


def dense_backward(
    dout: np.ndarray, cache: dict, weight: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx, dweight, dbias) for the cached forward pass."""
    act = cache["activation"]
    if act == "relu":
        dpre = dout * (cache["pre"] > 0.0)
    elif act == "sigmoid":
        out = cache["out"]
        dpre = dout * out * (1.0 - out)
    else:
        dpre = dout
    dw = dpre.T @ cache["x"]
    db = dpre.sum(axis=0)
    dx = dpre @ weight
    return dx, dw, db
