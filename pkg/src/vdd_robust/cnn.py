"""Small 2-D CNN with hand-written forward and backward passes.

Architecture: two valid-mode stride-1 convolutions with ReLU, one 2x2 max
pool, then fully-connected layers (ReLU on hidden, 2 logits out). Backward
produces gradients for every parameter *and* for the input map; the latter
feeds the white-box attacks. All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import VddError


class CacheMismatchError(VddError):
    """Backward pass called with a cache from a different model/input."""


class TrainingDivergedError(VddError):
    """Loss became non-finite during training."""


@dataclass
class CnnModel:
    conv_weights: list[np.ndarray]  # each (out_ch, in_ch, kh, kw)
    conv_biases: list[np.ndarray]
    fc_weights: list[np.ndarray]  # each (out_dim, in_dim); last layer emits logits
    fc_biases: list[np.ndarray]
    input_shape: tuple[int, int, int]  # (channels, rows, cols)

    def n_params(self) -> int:
        return sum(a.size for a in self.parameters())

    def parameters(self) -> list[np.ndarray]:
        return [*self.conv_weights, *self.conv_biases, *self.fc_weights, *self.fc_biases]

    def copy(self) -> "CnnModel":
        return CnnModel(
            [w.copy() for w in self.conv_weights],
            [b.copy() for b in self.conv_biases],
            [w.copy() for w in self.fc_weights],
            [b.copy() for b in self.fc_biases],
            self.input_shape,
        )


@dataclass
class ParamGrads:
    conv_weights: list[np.ndarray]
    conv_biases: list[np.ndarray]
    fc_weights: list[np.ndarray]
    fc_biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        return [*self.conv_weights, *self.conv_biases, *self.fc_weights, *self.fc_biases]


@dataclass
class CnnCache:
    model_ref: CnnModel
    x: np.ndarray  # (N, C, H, W)
    conv_cols: list[np.ndarray] = field(default_factory=list)
    conv_pre: list[np.ndarray] = field(default_factory=list)
    conv_act: list[np.ndarray] = field(default_factory=list)
    pool_in_shape: tuple = ()
    pool_argmax: np.ndarray | None = None
    flat: np.ndarray | None = None
    fc_pre: list[np.ndarray] = field(default_factory=list)
    fc_act: list[np.ndarray] = field(default_factory=list)
    logits: np.ndarray | None = None


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 10
    batch_size: int = 16
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def init_cnn(
    input_shape: tuple[int, int, int],
    conv_channels: tuple[int, ...] = (8, 16),
    kernel_size: int = 3,
    hidden_units: tuple[int, ...] = (64,),
    n_classes: int = 2,
    rng: np.random.Generator | None = None,
) -> CnnModel:
    """He-uniform initialized model; shapes validated against input_shape."""
    rng = rng if rng is not None else np.random.default_rng(0)
    c, h, w = input_shape
    conv_w, conv_b = [], []
    in_ch = c
    for out_ch in conv_channels:
        h -= kernel_size - 1
        w -= kernel_size - 1
        if h < 1 or w < 1:
            raise ValueError("input too small for the convolution stack")
        fan_in = in_ch * kernel_size * kernel_size
        limit = np.sqrt(6.0 / fan_in)
        conv_w.append(rng.uniform(-limit, limit, (out_ch, in_ch, kernel_size, kernel_size)))
        conv_b.append(np.zeros(out_ch))
        in_ch = out_ch
    h, w = h // 2, w // 2
    if h < 1 or w < 1:
        raise ValueError("input too small for 2x2 max pooling")

    fc_w, fc_b = [], []
    in_dim = in_ch * h * w
    for out_dim in (*hidden_units, n_classes):
        limit = np.sqrt(6.0 / in_dim)
        fc_w.append(rng.uniform(-limit, limit, (out_dim, in_dim)))
        fc_b.append(np.zeros(out_dim))
        in_dim = out_dim
    return CnnModel(conv_w, conv_b, fc_w, fc_b, input_shape)


def _conv_cols(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """im2col: (N, C, H, W) -> (N, outH*outW, C*kh*kw)."""
    view = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    n, c, oh, ow = view.shape[:4]
    return np.ascontiguousarray(view.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n, oh * ow, c * kh * kw
    )


def _forward_batch(model: CnnModel, x: np.ndarray) -> CnnCache:
    if x.ndim != 4 or x.shape[1:] != model.input_shape:
        raise ValueError(
            f"input shape {x.shape[1:] if x.ndim == 4 else x.shape} does not match "
            f"model input {model.input_shape}"
        )
    cache = CnnCache(model_ref=model, x=x)
    act = x
    n = x.shape[0]
    for w, b in zip(model.conv_weights, model.conv_biases):
        out_ch, in_ch, kh, kw = w.shape
        oh = act.shape[2] - kh + 1
        ow = act.shape[3] - kw + 1
        cols = _conv_cols(act, kh, kw)
        flat = cols.reshape(n * oh * ow, -1) @ w.reshape(out_ch, -1).T + b
        pre = flat.reshape(n, oh * ow, out_ch).transpose(0, 2, 1).reshape(
            n, out_ch, oh, ow
        )
        cache.conv_cols.append(cols)
        cache.conv_pre.append(pre)
        act = np.maximum(pre, 0.0)
        cache.conv_act.append(act)

    # single 2x2/2 max pool; odd trailing rows/cols are dropped
    n, c, h, w_ = act.shape
    h2, w2 = h // 2, w_ // 2
    cache.pool_in_shape = act.shape
    windows = act[:, :, : h2 * 2, : w2 * 2].reshape(n, c, h2, 2, w2, 2)
    windows = windows.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    cache.pool_argmax = np.argmax(windows, axis=4)
    pooled = np.take_along_axis(windows, cache.pool_argmax[..., None], axis=4)[..., 0]

    act = pooled.reshape(n, -1)
    cache.flat = act
    last = len(model.fc_weights) - 1
    for i, (w, b) in enumerate(zip(model.fc_weights, model.fc_biases)):
        pre = act @ w.T + b
        cache.fc_pre.append(pre)
        act = pre if i == last else np.maximum(pre, 0.0)
        cache.fc_act.append(act)
    cache.logits = act
    return cache


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample softmax cross-entropy, numerically stable."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1))
    return log_z - shifted[np.arange(len(labels)), labels]


def _backward_batch(
    model: CnnModel,
    cache: CnnCache,
    labels: np.ndarray,
    need_param_grads: bool = True,
    need_input_grads: bool = True,
) -> tuple[ParamGrads | None, np.ndarray | None]:
    """Gradients of summed cross-entropy over the batch.

    Returns (param_grads or None, input_grads or None); input_grads is per
    sample, shape (N, C, H, W). Training skips input_grads, attacks skip
    param_grads.
    """
    n = cache.x.shape[0]
    delta = softmax(cache.logits)
    delta[np.arange(n), labels] -= 1.0  # d(sum CE)/d logits

    fc_w_grads: list[np.ndarray] = []
    fc_b_grads: list[np.ndarray] = []
    for i in range(len(model.fc_weights) - 1, -1, -1):
        inp = cache.flat if i == 0 else cache.fc_act[i - 1]
        if need_param_grads:
            fc_w_grads.append(delta.T @ inp)
            fc_b_grads.append(delta.sum(axis=0))
        delta = delta @ model.fc_weights[i]
        if i > 0:
            delta *= cache.fc_pre[i - 1] > 0

    # un-flatten and route through the max pool
    n_, c, h, w_ = cache.pool_in_shape
    h2, w2 = h // 2, w_ // 2
    d_windows = np.zeros((n, c, h2, w2, 4))
    np.put_along_axis(
        d_windows,
        cache.pool_argmax[..., None],
        delta.reshape(n, c, h2, w2, 1),
        axis=4,
    )
    d_act = np.zeros(cache.pool_in_shape)
    d_act[:, :, : h2 * 2, : w2 * 2] = (
        d_windows.reshape(n, c, h2, w2, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h2 * 2, w2 * 2)
    )

    conv_w_grads: list[np.ndarray] = []
    conv_b_grads: list[np.ndarray] = []
    for i in range(len(model.conv_weights) - 1, -1, -1):
        w = model.conv_weights[i]
        out_ch, in_ch, kh, kw = w.shape
        d_pre = d_act * (cache.conv_pre[i] > 0)
        oh, ow = d_pre.shape[2], d_pre.shape[3]
        d_mat = d_pre.reshape(n, out_ch, oh * ow)
        if need_param_grads:
            d_flat = np.ascontiguousarray(d_mat.transpose(1, 0, 2)).reshape(out_ch, -1)
            cols_flat = cache.conv_cols[i].reshape(n * oh * ow, -1)
            conv_w_grads.append((d_flat @ cols_flat).reshape(w.shape))
            conv_b_grads.append(d_pre.sum(axis=(0, 2, 3)))
        if i == 0 and not need_input_grads:
            d_act = None
            break
        d_cols = d_mat.transpose(0, 2, 1) @ w.reshape(out_ch, -1)  # (N, P, C*kh*kw)
        d_cols = d_cols.reshape(n, oh, ow, in_ch, kh, kw)
        prev_shape = cache.x.shape if i == 0 else cache.conv_act[i - 1].shape
        d_prev = np.zeros(prev_shape)
        for a in range(kh):
            for b in range(kw):
                d_prev[:, :, a : a + oh, b : b + ow] += d_cols[:, :, :, :, a, b].transpose(
                    0, 3, 1, 2
                )
        d_act = d_prev

    grads = None
    if need_param_grads:
        grads = ParamGrads(
            conv_weights=conv_w_grads[::-1],
            conv_biases=conv_b_grads[::-1],
            fc_weights=fc_w_grads[::-1],
            fc_biases=fc_b_grads[::-1],
        )
    return grads, d_act


def cnn_forward(model: CnnModel, x: np.ndarray) -> tuple[np.ndarray, CnnCache]:
    """Forward one input map; returns (logits, cache for backward)."""
    cache = _forward_batch(model, np.asarray(x, dtype=np.float64)[None])
    return cache.logits[0], cache


def cnn_backward(
    model: CnnModel, cache: CnnCache, true_label: int
) -> tuple[ParamGrads, np.ndarray]:
    """Cross-entropy gradients w.r.t. every parameter and the input map."""
    if cache.model_ref is not model:
        raise CacheMismatchError("cache was produced by a different model instance")
    grads, input_grads = _backward_batch(model, cache, np.array([true_label]))
    return grads, input_grads[0]


def input_gradient(model: CnnModel, x: np.ndarray, true_label: int) -> np.ndarray:
    """Loss gradient w.r.t. the input only (skips parameter gradients)."""
    cache = _forward_batch(model, np.asarray(x, dtype=np.float64)[None])
    _, input_grads = _backward_batch(
        model, cache, np.array([true_label]), need_param_grads=False
    )
    return input_grads[0]


def logits_batch(model: CnnModel, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Logits for a stack of inputs, evaluated in bounded-memory batches."""
    out = []
    for start in range(0, len(x), batch_size):
        out.append(_forward_batch(model, x[start : start + batch_size]).logits)
    return np.concatenate(out, axis=0)


def extract_embedding(model: CnnModel, x: np.ndarray) -> np.ndarray:
    """Activations of the last hidden dense layer (post-ReLU)."""
    return embed_batch(model, np.asarray(x, dtype=np.float64)[None])[0]


def embed_batch(model: CnnModel, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    out = []
    for start in range(0, len(x), batch_size):
        cache = _forward_batch(model, x[start : start + batch_size])
        out.append(cache.fc_act[-2])
    return np.concatenate(out, axis=0)


def _stack_dataset(dataset) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(dataset, tuple) and len(dataset) == 2:
        x, y = dataset
        return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.int64)
    xs, ys = zip(*dataset)
    return np.stack(xs).astype(np.float64), np.asarray(ys, dtype=np.int64)


def train_cnn(
    dataset,
    config: TrainConfig,
    validation=None,
    conv_channels: tuple[int, ...] = (8, 16),
    kernel_size: int = 3,
    hidden_units: tuple[int, ...] = (64,),
    history: list | None = None,
) -> CnnModel:
    """Mini-batch SGD on softmax cross-entropy.

    The seed drives both the He-uniform init and the epoch shuffles. With a
    validation set the weights from the epoch with the lowest validation
    loss are returned; otherwise the final weights.
    """
    x, y = _stack_dataset(dataset)
    if len(x) == 0:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(config.seed)
    model = init_cnn(
        tuple(x.shape[1:]),
        conv_channels=conv_channels,
        kernel_size=kernel_size,
        hidden_units=hidden_units,
        rng=rng,
    )
    val_x = val_y = None
    if validation is not None:
        val_x, val_y = _stack_dataset(validation)

    best_val = np.inf
    best_model = None
    for epoch in range(config.epochs):
        perm = rng.permutation(len(x))
        epoch_loss = 0.0
        for start in range(0, len(x), config.batch_size):
            idx = perm[start : start + config.batch_size]
            cache = _forward_batch(model, x[idx])
            losses = cross_entropy(cache.logits, y[idx])
            if not np.all(np.isfinite(losses)):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch starting at {start}"
                )
            epoch_loss += float(losses.sum())
            grads, _ = _backward_batch(model, cache, y[idx], need_input_grads=False)
            scale = config.learning_rate / len(idx)
            for w, g in zip(model.conv_weights, grads.conv_weights):
                w -= scale * g + config.learning_rate * config.weight_decay * w
            for b, g in zip(model.conv_biases, grads.conv_biases):
                b -= scale * g
            for w, g in zip(model.fc_weights, grads.fc_weights):
                w -= scale * g + config.learning_rate * config.weight_decay * w
            for b, g in zip(model.fc_biases, grads.fc_biases):
                b -= scale * g

        record = {"epoch": epoch, "train_loss": epoch_loss / len(x)}
        if val_x is not None:
            val_logits = logits_batch(model, val_x)
            val_loss = float(np.mean(cross_entropy(val_logits, val_y)))
            record["val_loss"] = val_loss
            record["val_acc"] = float(np.mean(val_logits.argmax(axis=1) == val_y))
            if val_loss < best_val:
                best_val = val_loss
                best_model = model.copy()
        if history is not None:
            history.append(record)

    return best_model if best_model is not None else model
