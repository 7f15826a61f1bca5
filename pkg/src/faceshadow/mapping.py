"""Second-stage mapping: intermediate face image -> actuator control values.

A small fully-connected regressor (tanh feature extractor, sigmoid head)
trained from scratch with a Huber regression loss plus a feature-adaptation
term that pulls clean-image features toward the (gradient-stopped) features
of their domain-shifted counterparts.  Backprop and AdamW are implemented
directly in numpy so gradients can be audited against finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DimensionError,
    NumericError,
    TrainingDivergedError,
    ValidationError,
)
from .motion import IntermediateRepr

CONTROL_DIM = 30

CHECKPOINT_MAGIC = b"VFMN"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIIIIIIQ")


@dataclass(frozen=True)
class ControlVector:
    """Normalized actuator commands with stream bookkeeping."""

    values: np.ndarray       # length 30, each in [0, 1]
    seq: int = 0
    capture_ts: int = 0      # microseconds since epoch
    send_ts: int = 0

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.shape != (CONTROL_DIM,):
            raise DimensionError(f"control vector must be length {CONTROL_DIM}, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise NumericError("control values contain non-finite entries")
        if vals.min() < 0.0 or vals.max() > 1.0:
            raise ValidationError("control values must lie in [0, 1]")
        object.__setattr__(self, "values", vals)
        self.values.setflags(write=False)

    def stamped(self, send_ts: int) -> "ControlVector":
        return replace(self, send_ts=send_ts)


@dataclass(frozen=True)
class ModelDims:
    input_h: int
    input_w: int
    hidden: int = 64
    feature: int = 32
    out: int = CONTROL_DIM

    @property
    def input_size(self) -> int:
        return self.input_h * self.input_w

    @property
    def param_count(self) -> int:
        return (
            self.input_size * self.hidden + self.hidden
            + self.hidden * self.feature + self.feature
            + self.feature * self.out + self.out
        )


class RegressorModel:
    """Flat-parameter MLP: input -> tanh hidden -> tanh feature -> sigmoid out."""

    def __init__(self, dims: ModelDims, params: np.ndarray):
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (dims.param_count,):
            raise DimensionError(
                f"parameter vector must be length {dims.param_count}, got {params.shape}"
            )
        self.dims = dims
        self.params = params

    @classmethod
    def init(cls, dims: ModelDims, seed: int = 0) -> "RegressorModel":
        """Gaussian fan-in init for weights, zero biases."""
        rng = np.random.default_rng(seed)
        chunks = []
        for fan_in, fan_out in (
            (dims.input_size, dims.hidden),
            (dims.hidden, dims.feature),
            (dims.feature, dims.out),
        ):
            chunks.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=fan_in * fan_out))
            chunks.append(np.zeros(fan_out))
        return cls(dims, np.concatenate(chunks))

    def unpack(self):
        """Views into the flat vector: (W1, b1, W2, b2, W3, b3)."""
        d = self.dims
        sizes = [
            d.input_size * d.hidden, d.hidden,
            d.hidden * d.feature, d.feature,
            d.feature * d.out, d.out,
        ]
        offsets = np.cumsum([0] + sizes)
        p = self.params
        w1 = p[offsets[0]:offsets[1]].reshape(d.input_size, d.hidden)
        b1 = p[offsets[1]:offsets[2]]
        w2 = p[offsets[2]:offsets[3]].reshape(d.hidden, d.feature)
        b2 = p[offsets[3]:offsets[4]]
        w3 = p[offsets[4]:offsets[5]].reshape(d.feature, d.out)
        b3 = p[offsets[5]:offsets[6]]
        return w1, b1, w2, b2, w3, b3

    def copy(self) -> "RegressorModel":
        return RegressorModel(self.dims, self.params.copy())


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def forward_batch(model: RegressorModel, x: np.ndarray):
    """Forward pass on (B, input_size) rows; returns (features, predictions)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.dims.input_size:
        raise DimensionError(
            f"batch must be (B, {model.dims.input_size}), got {x.shape}"
        )
    w1, b1, w2, b2, w3, b3 = model.unpack()
    h1 = np.tanh(x @ w1 + b1)
    f = np.tanh(h1 @ w2 + b2)
    y = _sigmoid(f @ w3 + b3)
    return f, y


def forward(model: RegressorModel, img: IntermediateRepr):
    """Forward pass on one intermediate image; returns (feature, prediction)."""
    d = model.dims
    if img.grid.shape != (d.input_h, d.input_w):
        raise DimensionError(
            f"image {img.grid.shape} does not match model input "
            f"({d.input_h}, {d.input_w})"
        )
    f, y = forward_batch(model, img.grid.reshape(1, -1))
    return f[0], y[0]


# ---------------------------------------------------------------------------
# losses

def huber_loss(y: np.ndarray, y_hat: np.ndarray, delta: float) -> float:
    """Mean piecewise quadratic/linear loss over control components.

    Quadratic 0.5*r^2 inside |r| <= delta, linear delta*|r| - 0.5*delta^2
    outside; averaged over every component (and over the batch for 2D input).
    """
    if delta <= 0:
        raise ValidationError(f"delta must be positive, got {delta}")
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise DimensionError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    r = np.abs(y - y_hat)
    quad = 0.5 * r * r
    lin = delta * r - 0.5 * delta * delta
    return float(np.mean(np.where(r <= delta, quad, lin)))


def huber_grad(y: np.ndarray, y_hat: np.ndarray, delta: float) -> np.ndarray:
    """d huber / d y_hat, elementwise, including the 1/(B*C) averaging."""
    r = y - y_hat
    core = np.where(np.abs(r) <= delta, -r, -delta * np.sign(r))
    return core / r.size


def feature_adaptation_loss(f: np.ndarray, f_target: np.ndarray) -> float:
    """Squared L2 distance to a gradient-free target feature.

    1D inputs give the plain squared norm; 2D batches average the per-row
    squared norms.  The target never receives gradient.
    """
    f = np.asarray(f, dtype=np.float64)
    f_target = np.asarray(f_target, dtype=np.float64)
    if f.shape != f_target.shape:
        raise DimensionError(f"feature shapes differ: {f.shape} vs {f_target.shape}")
    gap = f - f_target
    if f.ndim == 1:
        return float(np.sum(gap * gap))
    return float(np.mean(np.sum(gap * gap, axis=1)))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    batch: int = 128
    epochs: int = 100
    delta: float = 0.01
    lambda_fa: float = 5e-4
    warmup_frac: float = 0.05
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.batch <= 0 or self.epochs <= 0 or self.delta <= 0:
            raise ConfigError("lr, batch, epochs, delta must all be positive")
        if self.lambda_fa < 0:
            raise ConfigError("lambda_fa must be non-negative")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise ConfigError("warmup_frac must lie in [0, 1]")


@dataclass
class Batch:
    """Aligned training arrays: clean images, counterparts, target controls."""

    images: np.ndarray        # (B, input_size)
    counterparts: np.ndarray  # (B, input_size)
    targets: np.ndarray       # (B, CONTROL_DIM)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.counterparts = np.asarray(self.counterparts, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.images.ndim != 2 or self.images.shape[0] == 0:
            raise ValidationError("batch must contain at least one sample")
        if self.counterparts.shape != self.images.shape:
            raise DimensionError("counterpart batch shape differs from image batch")
        if self.targets.ndim != 2 or self.targets.shape[0] != self.images.shape[0]:
            raise DimensionError(
                f"targets must be (B, out), got {self.targets.shape} for B={self.images.shape[0]}"
            )


def total_loss(batch: Batch, model: RegressorModel, cfg: TrainConfig) -> float:
    """Huber regression term plus lambda_fa times the feature-adaptation term.

    The counterpart features are produced by the same weights in the same
    pass but contribute no gradient; here only the value is computed.
    """
    f_clean, y_hat = forward_batch(model, batch.images)
    loss = huber_loss(batch.targets, y_hat, cfg.delta)
    if cfg.lambda_fa != 0.0:
        f_counter, _ = forward_batch(model, batch.counterparts)
        loss += cfg.lambda_fa * feature_adaptation_loss(f_clean, f_counter)
    return loss


def loss_and_grad(batch: Batch, model: RegressorModel, cfg: TrainConfig):
    """Total loss plus its analytic gradient as a flat vector.

    Backprop runs only through the clean-image branch; the counterpart
    features enter as constants, which realizes the gradient-stop contract.
    """
    x = batch.images
    b = x.shape[0]
    w1, b1, w2, b2, w3, b3 = model.unpack()

    h1 = np.tanh(x @ w1 + b1)
    f = np.tanh(h1 @ w2 + b2)
    y_hat = _sigmoid(f @ w3 + b3)

    loss = huber_loss(batch.targets, y_hat, cfg.delta)
    dy = huber_grad(batch.targets, y_hat, cfg.delta)

    if cfg.lambda_fa != 0.0:
        f_counter, _ = forward_batch(model, batch.counterparts)  # constant branch
        gap = f - f_counter
        loss += cfg.lambda_fa * float(np.mean(np.sum(gap * gap, axis=1)))
        df_fa = cfg.lambda_fa * 2.0 * gap / b
    else:
        df_fa = 0.0

    dz3 = dy * y_hat * (1.0 - y_hat)
    dw3 = f.T @ dz3
    db3 = dz3.sum(axis=0)
    df = dz3 @ w3.T + df_fa
    dz2 = df * (1.0 - f * f)
    dw2 = h1.T @ dz2
    db2 = dz2.sum(axis=0)
    dh1 = dz2 @ w2.T
    dz1 = dh1 * (1.0 - h1 * h1)
    dw1 = x.T @ dz1
    db1 = dz1.sum(axis=0)

    grad = np.concatenate(
        [dw1.ravel(), db1, dw2.ravel(), db2, dw3.ravel(), db3]
    )
    return loss, grad


# ---------------------------------------------------------------------------
# optimizer and schedule

@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def init(cls, param_count: int) -> "AdamWState":
        return cls(m=np.zeros(param_count), v=np.zeros(param_count), step=0)


def adamw_step(
    params: np.ndarray,
    grad: np.ndarray,
    state: AdamWState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> np.ndarray:
    """One decoupled-weight-decay adaptive-moment update; returns new params."""
    if not np.all(np.isfinite(grad)):
        bad = int(np.count_nonzero(~np.isfinite(grad)))
        raise TrainingDivergedError(
            f"non-finite gradient ({bad} entries) at optimizer step {state.step + 1}"
        )
    b1, b2 = betas
    state.step += 1
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = state.m / (1.0 - b1 ** state.step)
    v_hat = state.v / (1.0 - b2 ** state.step)
    out = params * (1.0 - lr * weight_decay)          # decay decoupled from moments
    out -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return out


def backward_and_step(
    model: RegressorModel,
    batch: Batch,
    cfg: TrainConfig,
    state: AdamWState,
    lr: float | None = None,
) -> tuple[RegressorModel, float]:
    """Apply one optimization step; returns (updated model, batch loss)."""
    loss, grad = loss_and_grad(batch, model, cfg)
    new_params = adamw_step(
        model.params, grad, state,
        lr=cfg.lr if lr is None else lr,
        betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay,
    )
    return RegressorModel(model.dims, new_params), loss


def cosine_warmup_lr(
    step: int, total_steps: int, base_lr: float, warmup_steps: int
) -> float:
    """Linear ramp to base_lr over the warmup, then cosine decay to zero."""
    if warmup_steps > total_steps:
        raise ConfigError(
            f"warmup_steps {warmup_steps} exceeds total_steps {total_steps}"
        )
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    if step == total_steps:
        return 0.0
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + float(np.cos(np.pi * progress)))


# ---------------------------------------------------------------------------
# training driver

@dataclass
class TrainHistory:
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)


def train(
    model: RegressorModel,
    images: np.ndarray,
    counterparts: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig,
) -> tuple[RegressorModel, TrainHistory]:
    """Full training run with seeded shuffling and the warmup-cosine schedule."""
    n = images.shape[0]
    if n == 0:
        raise ValidationError("training set is empty")
    flat = images.reshape(n, -1)
    flat_counter = counterparts.reshape(n, -1)
    steps_per_epoch = (n + cfg.batch - 1) // cfg.batch
    total_steps = cfg.epochs * steps_per_epoch
    warmup_steps = int(round(cfg.warmup_frac * total_steps))
    rng = np.random.default_rng(cfg.seed)
    state = AdamWState.init(model.dims.param_count)
    history = TrainHistory()
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch):
            idx = order[start : start + cfg.batch]
            batch = Batch(flat[idx], flat_counter[idx], targets[idx])
            lr = cosine_warmup_lr(step, total_steps, cfg.lr, warmup_steps)
            model, loss = backward_and_step(model, batch, cfg, state, lr=lr)
            history.losses.append(loss)
            history.lrs.append(lr)
            step += 1
    return model, history


def predict(model: RegressorModel, images: np.ndarray) -> np.ndarray:
    """Predicted controls for (N, H, W) or (N, input_size) images."""
    flat = images.reshape(images.shape[0], -1)
    _, y = forward_batch(model, flat)
    return y


def feature_distance(
    model: RegressorModel, images: np.ndarray, counterparts: np.ndarray
) -> float:
    """Mean L2 distance between clean and counterpart features."""
    fa, _ = forward_batch(model, images.reshape(images.shape[0], -1))
    fb, _ = forward_batch(model, counterparts.reshape(counterparts.shape[0], -1))
    return float(np.mean(np.linalg.norm(fa - fb, axis=1)))


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(model: RegressorModel, path: str | Path) -> None:
    """Write magic, version, architecture dims and little-endian f32 parameters."""
    d = model.dims
    header = _CKPT_HEADER.pack(
        CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
        d.input_h, d.input_w, d.hidden, d.feature, d.out,
        model.params.size,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(model.params.astype("<f4").tobytes())


def load_checkpoint(path: str | Path) -> RegressorModel:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise ValidationError("checkpoint file truncated")
    magic, version, in_h, in_w, hidden, feat, out, n_params = _CKPT_HEADER.unpack(
        raw[: _CKPT_HEADER.size]
    )
    if magic != CHECKPOINT_MAGIC:
        raise ValidationError(f"bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    dims = ModelDims(input_h=in_h, input_w=in_w, hidden=hidden, feature=feat, out=out)
    if n_params != dims.param_count:
        raise ValidationError(
            f"checkpoint declares {n_params} parameters, architecture needs "
            f"{dims.param_count}"
        )
    body = raw[_CKPT_HEADER.size :]
    if len(body) != 4 * n_params:
        raise ValidationError("checkpoint parameter block truncated")
    params = np.frombuffer(body, dtype="<f4").astype(np.float64)
    return RegressorModel(dims, params)
