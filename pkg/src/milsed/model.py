"""Frame-scoring network with exact analytic gradients.

The model maps a bag of T frame feature vectors to a T x C matrix of
per-frame class probabilities:

    dense stack (relu or glu, per frame)
      -> gated recurrent layer (optionally bidirectional, directions summed)
      -> time-distributed dense head with sigmoid activation

The recurrent cell is a minimal gated unit with an update gate and a
tanh candidate:

    z_t = sigmoid(x_t Wz + h_{t-1} Uz + bz)
    c_t = tanh   (x_t Wc + h_{t-1} Uc + bc)
    h_t = (1 - z_t) * h_{t-1} + z_t * c_t

Everything is plain numpy in double precision; backpropagation is written
out by hand and validated against central finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .losses import LossConfig, evaluate_loss

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DEFAULT_LEARNING_RATE = 1e-3

CHECKPOINT_FORMAT = "milsed-checkpoint"
CHECKPOINT_VERSION = 1

# Relative-error denominators are floored here so that finite-difference
# roundoff on near-zero gradients does not register as mismatch.
GRAD_CHECK_FLOOR = 1e-6


@dataclass(frozen=True)
class FrameFeatures:
    """A bag of per-frame feature vectors (T, F) plus the frame hop."""

    values: np.ndarray
    frame_hop_s: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DataError(f"features must be (T>=1, F>=1), got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("features contain non-finite values")
        if not self.frame_hop_s > 0:
            raise DataError(f"frame_hop_s must be > 0, got {self.frame_hop_s!r}")
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ScoreMatrix:
    """Per-frame class probabilities (T, C), entries in [0, 1]."""

    scores: np.ndarray
    frame_hop_s: float

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        if scores.ndim != 2:
            raise DataError(f"scores must be 2-d, got shape {scores.shape}")
        if not np.all(np.isfinite(scores)):
            raise DataError("scores contain non-finite values")
        if scores.size and (scores.min() < 0.0 or scores.max() > 1.0):
            raise DataError("scores must lie in [0, 1]")
        if not self.frame_hop_s > 0:
            raise DataError(f"frame_hop_s must be > 0, got {self.frame_hop_s!r}")
        object.__setattr__(self, "scores", scores)

    @property
    def n_frames(self) -> int:
        return self.scores.shape[0]

    @property
    def n_classes(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters."""

    n_features: int
    n_classes: int
    dense_widths: tuple = (16,)
    activation: str = "relu"
    recurrent_units: int = 16
    bidirectional: bool = True
    dropout: float = 0.0
    recurrent_dropout: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "dense_widths", tuple(self.dense_widths))
        if self.n_features < 1 or self.n_classes < 1:
            raise ConfigError("n_features and n_classes must be >= 1")
        if not self.dense_widths or any(w < 1 for w in self.dense_widths):
            raise ConfigError(f"dense_widths must be positive, got {self.dense_widths}")
        if self.activation not in ("relu", "glu"):
            raise ConfigError(
                f"activation must be 'relu' or 'glu', got {self.activation!r}"
            )
        if self.recurrent_units < 1:
            raise ConfigError("recurrent_units must be >= 1")
        for name in ("dropout", "recurrent_dropout"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {rate!r}")


@dataclass(frozen=True)
class ModelParams:
    """Architecture plus the parameter arrays, keyed by layer name."""

    config: ModelConfig
    seed: int
    arrays: dict = field(repr=False)

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays.values())


def _param_shapes(config: ModelConfig):
    """Ordered mapping of parameter name -> shape for the architecture."""
    shapes = {}
    fan_in = config.n_features
    for i, width in enumerate(config.dense_widths):
        if config.activation == "glu":
            shapes[f"dense{i}.Wl"] = (fan_in, width)
            shapes[f"dense{i}.bl"] = (width,)
            shapes[f"dense{i}.Wg"] = (fan_in, width)
            shapes[f"dense{i}.bg"] = (width,)
        else:
            shapes[f"dense{i}.W"] = (fan_in, width)
            shapes[f"dense{i}.b"] = (width,)
        fan_in = width
    units = config.recurrent_units
    directions = ("fwd", "bwd") if config.bidirectional else ("fwd",)
    for d in directions:
        shapes[f"rnn_{d}.Wz"] = (fan_in, units)
        shapes[f"rnn_{d}.Uz"] = (units, units)
        shapes[f"rnn_{d}.bz"] = (units,)
        shapes[f"rnn_{d}.Wc"] = (fan_in, units)
        shapes[f"rnn_{d}.Uc"] = (units, units)
        shapes[f"rnn_{d}.bc"] = (units,)
    shapes["out.W"] = (units, config.n_classes)
    shapes["out.b"] = (config.n_classes,)
    return shapes


def init_params(config: ModelConfig, seed=0) -> ModelParams:
    """Seeded uniform initialization in [-1/sqrt(fan_in), +1/sqrt(fan_in)].

    Biases use the fan-in of their layer's weight matrix. ``seed`` may be
    an int or a ``numpy.random.SeedSequence``.
    """
    rng = np.random.default_rng(seed)
    shapes = _param_shapes(config)
    arrays = {}
    last_fan_in = 1
    for name, shape in shapes.items():
        if len(shape) == 2:
            last_fan_in = shape[0]
        bound = 1.0 / np.sqrt(last_fan_in)
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    seed_int = int(seed) if np.isscalar(seed) else 0
    return ModelParams(config=config, seed=seed_int, arrays=arrays)


def zero_params(config: ModelConfig) -> ModelParams:
    """All-zero parameters (sigmoid head then outputs 0.5 everywhere)."""
    arrays = {name: np.zeros(shape) for name, shape in _param_shapes(config).items()}
    return ModelParams(config=config, seed=0, arrays=arrays)


def _sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    neg = ~pos
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[neg])
    out[neg] = ez / (1.0 + ez)
    return out


def glu_activation(linear_branch, gate_branch):
    """Gated linear unit: linear branch times sigmoid of the gate branch."""
    linear_branch = np.asarray(linear_branch, dtype=float)
    gate_branch = np.asarray(gate_branch, dtype=float)
    if linear_branch.shape != gate_branch.shape:
        raise ConfigError(
            f"glu branch shapes differ: {linear_branch.shape} vs {gate_branch.shape}"
        )
    return linear_branch * _sigmoid(gate_branch)


def _check_finite(array, where: str):
    if not np.all(np.isfinite(array)):
        raise NumericError(f"non-finite values after {where}")


def _rnn_forward(x, Wz, Uz, bz, Wc, Uc, bc, state_mask=None):
    """Run the gated cell over time. x: (B, T, D) -> h_seq: (B, T, H).

    ``state_mask`` (B, H) is the variational recurrent-dropout mask: the
    gates read the masked previous state, the convex state update itself
    stays unmasked.
    """
    n_batch, n_frames, _ = x.shape
    units = Wz.shape[1]
    pre_z_x = x @ Wz + bz
    pre_c_x = x @ Wc + bc
    h = np.zeros((n_batch, units))
    h_seq = np.empty((n_batch, n_frames, units))
    z_seq = np.empty((n_batch, n_frames, units))
    c_seq = np.empty((n_batch, n_frames, units))
    for t in range(n_frames):
        h_read = h if state_mask is None else h * state_mask
        z = _sigmoid(pre_z_x[:, t] + h_read @ Uz)
        c = np.tanh(pre_c_x[:, t] + h_read @ Uc)
        h = (1.0 - z) * h + z * c
        z_seq[:, t] = z
        c_seq[:, t] = c
        h_seq[:, t] = h
    return h_seq, z_seq, c_seq


def _rnn_backward(x, h_seq, z_seq, c_seq, d_h_seq, Wz, Uz, Wc, Uc,
                  state_mask=None):
    """Backpropagation through time for the gated cell."""
    n_batch, n_frames, _ = x.shape
    units = h_seq.shape[2]
    dWz = np.zeros_like(Wz)
    dUz = np.zeros_like(Uz)
    dbz = np.zeros(units)
    dWc = np.zeros_like(Wc)
    dUc = np.zeros_like(Uc)
    dbc = np.zeros(units)
    dx = np.zeros_like(x)
    dh_carry = np.zeros((n_batch, units))
    for t in range(n_frames - 1, -1, -1):
        h_prev = h_seq[:, t - 1] if t > 0 else np.zeros((n_batch, units))
        h_read = h_prev if state_mask is None else h_prev * state_mask
        z = z_seq[:, t]
        c = c_seq[:, t]
        dh = d_h_seq[:, t] + dh_carry
        dz = dh * (c - h_prev)
        dc = dh * z
        dh_prev = dh * (1.0 - z)

        dpre_c = dc * (1.0 - c * c)
        dWc += x[:, t].T @ dpre_c
        dUc += h_read.T @ dpre_c
        dbc += dpre_c.sum(axis=0)
        dx[:, t] += dpre_c @ Wc.T
        dh_read = dpre_c @ Uc.T

        dpre_z = dz * z * (1.0 - z)
        dWz += x[:, t].T @ dpre_z
        dUz += h_read.T @ dpre_z
        dbz += dpre_z.sum(axis=0)
        dx[:, t] += dpre_z @ Wz.T
        dh_read += dpre_z @ Uz.T

        if state_mask is not None:
            dh_read = dh_read * state_mask
        dh_carry = dh_prev + dh_read
    return dx, dWz, dUz, dbz, dWc, dUc, dbc


def _draw_masks(cfg: ModelConfig, rng, n_batch, n_frames, dense_out):
    """Training-time dropout masks, drawn in a fixed order."""
    masks = {"input": None, "head": None, "rnn_fwd": None, "rnn_bwd": None}
    if cfg.dropout > 0.0:
        keep = 1.0 - cfg.dropout
        masks["input"] = (rng.random((n_batch, n_frames, dense_out)) < keep) / keep
    if cfg.recurrent_dropout > 0.0:
        keep = 1.0 - cfg.recurrent_dropout
        directions = ("fwd", "bwd") if cfg.bidirectional else ("fwd",)
        for d in directions:
            masks[f"rnn_{d}"] = (
                rng.random((n_batch, cfg.recurrent_units)) < keep) / keep
    if cfg.dropout > 0.0:
        keep = 1.0 - cfg.dropout
        masks["head"] = (
            rng.random((n_batch, n_frames, cfg.recurrent_units)) < keep) / keep
    return masks


def _forward(params: ModelParams, x, training=False, rng=None, need_cache=True,
             dropout_masks=None):
    """Batched forward pass. x: (B, T, F) -> scores (B, T, C) plus cache."""
    cfg = params.config
    a = params.arrays
    if x.ndim != 3:
        raise ConfigError(f"expected batched input (B, T, F), got shape {x.shape}")
    if x.shape[2] != cfg.n_features:
        raise ConfigError(
            f"bag has {x.shape[2]} features but model expects {cfg.n_features}"
        )

    cache = {"x": x, "dense": []} if need_cache else None
    h = x
    for i in range(len(cfg.dense_widths)):
        if cfg.activation == "glu":
            lin = h @ a[f"dense{i}.Wl"] + a[f"dense{i}.bl"]
            gate_sig = _sigmoid(h @ a[f"dense{i}.Wg"] + a[f"dense{i}.bg"])
            out = lin * gate_sig
            if need_cache:
                cache["dense"].append({"input": h, "lin": lin, "gate_sig": gate_sig})
        else:
            pre = h @ a[f"dense{i}.W"] + a[f"dense{i}.b"]
            out = np.maximum(pre, 0.0)
            if need_cache:
                cache["dense"].append({"input": h, "pre": pre})
        _check_finite(out, f"dense layer {i}")
        h = out

    if dropout_masks is None:
        if training and (cfg.dropout > 0.0 or cfg.recurrent_dropout > 0.0):
            dropout_masks = _draw_masks(cfg, rng, x.shape[0], x.shape[1],
                                        h.shape[2])
        else:
            dropout_masks = {"input": None, "head": None,
                             "rnn_fwd": None, "rnn_bwd": None}
    if dropout_masks["input"] is not None:
        h = h * dropout_masks["input"]
    if need_cache:
        cache["masks"] = dropout_masks
        cache["rnn_input"] = h

    directions = ("fwd", "bwd") if cfg.bidirectional else ("fwd",)
    r = None
    for d in directions:
        xd = h[:, ::-1] if d == "bwd" else h
        h_seq, z_seq, c_seq = _rnn_forward(
            xd, a[f"rnn_{d}.Wz"], a[f"rnn_{d}.Uz"], a[f"rnn_{d}.bz"],
            a[f"rnn_{d}.Wc"], a[f"rnn_{d}.Uc"], a[f"rnn_{d}.bc"],
            state_mask=dropout_masks[f"rnn_{d}"])
        out = h_seq[:, ::-1] if d == "bwd" else h_seq
        if need_cache:
            cache[f"rnn_{d}"] = (xd, h_seq, z_seq, c_seq)
        r = out if r is None else r + out
    _check_finite(r, "recurrent layer")

    if dropout_masks["head"] is not None:
        r = r * dropout_masks["head"]
    if need_cache:
        cache["head_input"] = r

    scores = _sigmoid(r @ a["out.W"] + a["out.b"])
    _check_finite(scores, "output layer")
    if need_cache:
        cache["scores"] = scores
    return scores, cache


def _backward(params: ModelParams, cache, d_scores):
    """Parameter gradients given d(loss)/d(scores) for a cached forward."""
    cfg = params.config
    a = params.arrays
    scores = cache["scores"]
    grads = {name: np.zeros_like(arr) for name, arr in a.items()}

    dz_out = d_scores * scores * (1.0 - scores)
    head_in = cache["head_input"]
    grads["out.W"] = np.einsum("btu,btc->uc", head_in, dz_out)
    grads["out.b"] = dz_out.sum(axis=(0, 1))
    dr = dz_out @ a["out.W"].T
    if cache["masks"]["head"] is not None:
        dr = dr * cache["masks"]["head"]

    directions = ("fwd", "bwd") if cfg.bidirectional else ("fwd",)
    dh_dense = np.zeros_like(cache["rnn_input"])
    for d in directions:
        xd, h_seq, z_seq, c_seq = cache[f"rnn_{d}"]
        d_h_seq = dr[:, ::-1] if d == "bwd" else dr
        dx, dWz, dUz, dbz, dWc, dUc, dbc = _rnn_backward(
            xd, h_seq, z_seq, c_seq, d_h_seq,
            a[f"rnn_{d}.Wz"], a[f"rnn_{d}.Uz"],
            a[f"rnn_{d}.Wc"], a[f"rnn_{d}.Uc"],
            state_mask=cache["masks"][f"rnn_{d}"])
        grads[f"rnn_{d}.Wz"] = dWz
        grads[f"rnn_{d}.Uz"] = dUz
        grads[f"rnn_{d}.bz"] = dbz
        grads[f"rnn_{d}.Wc"] = dWc
        grads[f"rnn_{d}.Uc"] = dUc
        grads[f"rnn_{d}.bc"] = dbc
        dh_dense += dx[:, ::-1] if d == "bwd" else dx

    if cache["masks"]["input"] is not None:
        dh_dense = dh_dense * cache["masks"]["input"]

    da = dh_dense
    for i in range(len(cfg.dense_widths) - 1, -1, -1):
        layer = cache["dense"][i]
        h_in = layer["input"]
        if cfg.activation == "glu":
            lin, gate_sig = layer["lin"], layer["gate_sig"]
            dlin = da * gate_sig
            dgate = da * lin * gate_sig * (1.0 - gate_sig)
            grads[f"dense{i}.Wl"] = np.einsum("bti,btj->ij", h_in, dlin)
            grads[f"dense{i}.bl"] = dlin.sum(axis=(0, 1))
            grads[f"dense{i}.Wg"] = np.einsum("bti,btj->ij", h_in, dgate)
            grads[f"dense{i}.bg"] = dgate.sum(axis=(0, 1))
            da = dlin @ a[f"dense{i}.Wl"].T + dgate @ a[f"dense{i}.Wg"].T
        else:
            dpre = da * (layer["pre"] > 0.0)
            grads[f"dense{i}.W"] = np.einsum("bti,btj->ij", h_in, dpre)
            grads[f"dense{i}.b"] = dpre.sum(axis=(0, 1))
            da = dpre @ a[f"dense{i}.W"].T
    return grads


def forward(params: ModelParams, bag) -> ScoreMatrix:
    """Score a single bag (inference mode, dropout off)."""
    if isinstance(bag, FrameFeatures):
        values, hop = bag.values, bag.frame_hop_s
    else:
        values, hop = np.asarray(bag, dtype=float), 1.0
    if not np.all(np.isfinite(values)):
        raise DataError("bag contains non-finite values")
    scores, _ = _forward(params, values[None], need_cache=False)
    return ScoreMatrix(scores=scores[0], frame_hop_s=hop)


def backward(params: ModelParams, bag, loss_grad):
    """Parameter gradients of the forward map composed with ``loss_grad``.

    ``loss_grad`` is d(loss)/d(scores), shape (T, C).
    """
    values = bag.values if isinstance(bag, FrameFeatures) else np.asarray(bag, float)
    loss_grad = np.asarray(loss_grad, dtype=float)
    if loss_grad.shape != (values.shape[0], params.config.n_classes):
        raise ConfigError(
            f"loss_grad shape {loss_grad.shape} does not match "
            f"(T={values.shape[0]}, C={params.config.n_classes})"
        )
    if not np.all(np.isfinite(loss_grad)):
        raise NumericError("loss gradient contains non-finite values")
    _, cache = _forward(params, values[None], need_cache=True)
    return _backward(params, cache, loss_grad[None])


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0


def init_adam_state(params: ModelParams) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(a) for k, a in params.arrays.items()},
        v={k: np.zeros_like(a) for k, a in params.arrays.items()},
        step=0,
    )


def adam_step(params: ModelParams, grads, state: AdamState,
              lr: float = DEFAULT_LEARNING_RATE):
    """One Adam update with the standard defaults; returns new params/state."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    t = state.step + 1
    new_arrays, new_m, new_v = {}, {}, {}
    bias1 = 1.0 - ADAM_BETA1 ** t
    bias2 = 1.0 - ADAM_BETA2 ** t
    for name, value in params.arrays.items():
        g = grads[name]
        m = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * g * g
        new_arrays[name] = value - lr * (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)
        new_m[name] = m
        new_v[name] = v
    return replace(params, arrays=new_arrays), AdamState(m=new_m, v=new_v, step=t)


@dataclass(frozen=True)
class EarlyStopping:
    """Stop when the epoch loss has not improved by min_delta for patience epochs."""

    patience: int = 15
    min_delta: float = 1e-4


@dataclass
class TrainResult:
    params: ModelParams
    loss_trace: list
    stopped_early: bool = False


def _as_pairs(dataset):
    pairs = []
    for item in dataset:
        if hasattr(item, "features") and hasattr(item, "weak"):
            bag, labels = item.features, item.weak
        else:
            bag, labels = item
        values = bag.values if isinstance(bag, FrameFeatures) else np.asarray(bag, float)
        pairs.append((values, np.asarray(labels, dtype=float)))
    return pairs


def _batch_gradients(params, pairs, loss_config, dropout_rng):
    """Mean loss and mean parameter gradients over one mini-batch."""
    n_total = len(pairs)
    grads_total = {k: np.zeros_like(a) for k, a in params.arrays.items()}
    loss_total = 0.0
    # group bags of equal length so the recurrence can run batched
    groups = {}
    for idx, (x, y) in enumerate(pairs):
        groups.setdefault(x.shape[0], []).append(idx)
    training = (params.config.dropout > 0.0
                or params.config.recurrent_dropout > 0.0)
    for n_frames in sorted(groups):
        idxs = groups[n_frames]
        xb = np.stack([pairs[i][0] for i in idxs])
        scores, cache = _forward(params, xb, training=training, rng=dropout_rng)
        d_scores = np.empty_like(scores)
        for row, i in enumerate(idxs):
            value, grad = evaluate_loss(loss_config, scores[row], pairs[i][1])
            loss_total += value
            d_scores[row] = grad / n_total
        grads = _backward(params, cache, d_scores)
        for name in grads_total:
            grads_total[name] += grads[name]
    return loss_total / n_total, grads_total


def train(dataset, loss_config: LossConfig, model_config: ModelConfig, *,
          epochs: int, seed: int, batch_size: int = 20,
          learning_rate: float = DEFAULT_LEARNING_RATE,
          early_stopping: EarlyStopping | None = None) -> TrainResult:
    """Train a model on weakly-labeled bags.

    Deterministic given ``seed``: the same seed yields bit-identical
    parameter trajectories and loss traces. The per-epoch loss trace has
    one entry per epoch actually run (early stopping may cut it short).
    """
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    pairs = _as_pairs(dataset)
    if not pairs:
        raise DataError("training dataset is empty")

    root = np.random.SeedSequence(seed)
    init_ss, shuffle_ss, dropout_ss = root.spawn(3)
    params = init_params(model_config, seed=init_ss)
    params = replace(params, seed=int(seed))
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss)
    state = init_adam_state(params)

    trace = []
    best = np.inf
    since_improved = 0
    stopped = False
    n_bags = len(pairs)
    for epoch in range(epochs):
        order = shuffle_rng.permutation(n_bags)
        epoch_loss = 0.0
        for start in range(0, n_bags, batch_size):
            batch = [pairs[i] for i in order[start:start + batch_size]]
            try:
                loss, grads = _batch_gradients(params, batch, loss_config,
                                               dropout_rng)
                if not np.isfinite(loss):
                    raise NumericError("loss diverged (non-finite)")
                params, state = adam_step(params, grads, state, lr=learning_rate)
            except NumericError as exc:
                raise NumericError(f"{exc} at epoch {epoch}") from exc
            epoch_loss += loss * len(batch)
        epoch_loss /= n_bags
        trace.append(float(epoch_loss))
        if early_stopping is not None:
            if best - epoch_loss >= early_stopping.min_delta:
                best = epoch_loss
                since_improved = 0
            else:
                since_improved += 1
                if since_improved >= early_stopping.patience:
                    stopped = True
                    break
    return TrainResult(params=params, loss_trace=trace, stopped_early=stopped)


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients to finite differences.

    ``rel_errors`` and ``unstable`` align with the flattened parameter
    vector; a parameter is flagged unstable when perturbing it flipped a
    MIL argmax (or MMM argmin), i.e. the loss is not differentiable there.
    """

    rel_errors: np.ndarray
    unstable: np.ndarray
    param_names: list
    max_rel_error: float
    n_unstable: int
    passed: bool
    tolerance: float
    step: float

    def per_array_max(self):
        out = {}
        offset = 0
        for name, size in self.param_names:
            stable = ~self.unstable[offset:offset + size]
            block = self.rel_errors[offset:offset + size][stable]
            out[name] = float(block.max()) if block.size else 0.0
            offset += size
        return out


def _loss_and_extrema(params, x, y, loss_spec):
    scores, _ = _forward(params, x, need_cache=False)
    if callable(loss_spec):
        value, _ = loss_spec(scores[0])
        variant = None
    else:
        value, _ = evaluate_loss(loss_spec, scores[0], y)
        variant = loss_spec.variant
    extrema = None
    if variant in ("mil_max", "mil_max_cos"):
        extrema = (tuple(scores[0].argmax(axis=0)),)
    elif variant == "mil_mmm":
        extrema = (tuple(scores[0].argmax(axis=0)), tuple(scores[0].argmin(axis=0)))
    return value, extrema


def grad_check(params: ModelParams, bag, y, loss_spec, *, step: float = 1e-5,
               tolerance: float = 1e-4) -> GradCheckReport:
    """Compare analytic full-pipeline gradients to central finite differences.

    ``loss_spec`` is either a :class:`LossConfig` or a callable
    ``scores -> (value, grad)``. Runs in inference mode (dropout off).
    Parameters whose perturbation flips a per-class argmax/argmin are
    reported as unstable rather than failed.
    """
    values = bag.values if isinstance(bag, FrameFeatures) else np.asarray(bag, float)
    x = values[None]
    scores, cache = _forward(params, x, need_cache=True)
    if callable(loss_spec):
        _, d_scores = loss_spec(scores[0])
    else:
        _, d_scores = evaluate_loss(loss_spec, scores[0], np.asarray(y, dtype=float))
    analytic = _backward(params, cache, d_scores[None])

    _, base_extrema = _loss_and_extrema(params, x, y, loss_spec)
    work = ModelParams(config=params.config, seed=params.seed,
                       arrays={k: a.copy() for k, a in params.arrays.items()})
    names = [(k, a.size) for k, a in work.arrays.items()]
    n_total = sum(size for _, size in names)
    rel_errors = np.zeros(n_total)
    unstable = np.zeros(n_total, dtype=bool)
    flat_analytic = np.concatenate([analytic[k].ravel() for k, _ in names])

    offset = 0
    for name, size in names:
        arr = work.arrays[name]
        flat = arr.reshape(-1)
        for j in range(size):
            original = flat[j]
            flat[j] = original + step
            up, ex_up = _loss_and_extrema(work, x, y, loss_spec)
            flat[j] = original - step
            down, ex_down = _loss_and_extrema(work, x, y, loss_spec)
            flat[j] = original
            fd = (up - down) / (2.0 * step)
            ga = flat_analytic[offset + j]
            rel_errors[offset + j] = abs(ga - fd) / max(abs(ga), abs(fd),
                                                        GRAD_CHECK_FLOOR)
            if base_extrema is not None and (ex_up != base_extrema
                                             or ex_down != base_extrema):
                unstable[offset + j] = True
        offset += size

    stable_errors = rel_errors[~unstable]
    max_err = float(stable_errors.max()) if stable_errors.size else 0.0
    return GradCheckReport(
        rel_errors=rel_errors,
        unstable=unstable,
        param_names=names,
        max_rel_error=max_err,
        n_unstable=int(unstable.sum()),
        passed=max_err < tolerance,
        tolerance=tolerance,
        step=step,
    )


def save_checkpoint(params: ModelParams, path):
    """Write a self-describing JSON checkpoint (atomic)."""
    from ._util import atomic_write_text

    cfg = params.config
    payload = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "config": {
            "n_features": cfg.n_features,
            "n_classes": cfg.n_classes,
            "dense_widths": list(cfg.dense_widths),
            "activation": cfg.activation,
            "recurrent_units": cfg.recurrent_units,
            "bidirectional": cfg.bidirectional,
            "dropout": cfg.dropout,
            "recurrent_dropout": cfg.recurrent_dropout,
        },
        "seed": params.seed,
        "arrays": {
            name: {"shape": list(a.shape), "values": a.ravel().tolist()}
            for name, a in params.arrays.items()
        },
    }
    atomic_write_text(path, json.dumps(payload))


def load_checkpoint(path) -> ModelParams:
    """Load a checkpoint written by :func:`save_checkpoint`."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed checkpoint {path}: {exc}")
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path} is not a model checkpoint")
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(
            f"unsupported checkpoint version {payload.get('format_version')!r}"
        )
    cfg_d = dict(payload["config"])
    cfg_d["dense_widths"] = tuple(cfg_d["dense_widths"])
    config = ModelConfig(**cfg_d)
    expected = _param_shapes(config)
    arrays = {}
    for name, shape in expected.items():
        if name not in payload["arrays"]:
            raise DataError(f"checkpoint missing parameter {name!r}")
        entry = payload["arrays"][name]
        arr = np.asarray(entry["values"], dtype=float).reshape(entry["shape"])
        if arr.shape != shape:
            raise DataError(
                f"checkpoint parameter {name!r} has shape {arr.shape}, "
                f"expected {shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise DataError(f"checkpoint parameter {name!r} is non-finite")
        arrays[name] = arr
    return ModelParams(config=config, seed=int(payload["seed"]), arrays=arrays)
