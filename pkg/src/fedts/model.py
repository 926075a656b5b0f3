"""Two-layer LSTM classifier written directly in numpy.

Architecture: LSTM(hidden1) -> ReLU -> LSTM(hidden2) -> ReLU -> Dense ->
softmax.  ReLU acts on the hidden sequence each LSTM layer emits; the cell
recurrence itself uses the raw hidden state and the usual sigmoid/tanh
gates.  The dense head reads the last time step of the second layer.

Parameters live in an ordered ``dict[str, np.ndarray]`` (see
``parameter_shapes``).  Gate blocks inside the fused LSTM matrices are
ordered input, forget, cell candidate, output.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CorruptPayloadError, InvalidArgumentError, NumericOverflowError

Params = dict[str, np.ndarray]

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden1: int = 128
    hidden2: int = 64
    num_classes: int = 21
    ts: int = 5

    def __post_init__(self):
        for name, value in asdict(self).items():
            if int(value) < 1:
                raise InvalidArgumentError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1024
    epochs: int = 10
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    clip_norm: float | None = 5.0
    seed: int = 0


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    n, h1, h2, c = config.input_dim, config.hidden1, config.hidden2, config.num_classes
    return {
        "lstm1.W_x": (n, 4 * h1),
        "lstm1.W_h": (h1, 4 * h1),
        "lstm1.b": (4 * h1,),
        "lstm2.W_x": (h1, 4 * h2),
        "lstm2.W_h": (h2, 4 * h2),
        "lstm2.b": (4 * h2,),
        "dense.W": (h2, c),
        "dense.b": (c,),
    }


def parameter_count(config: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in parameter_shapes(config).values())


def init_params(config: ModelConfig, seed: int) -> Params:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, forget-gate bias 1."""
    rng = np.random.default_rng(seed)
    params: Params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".b"):
            b = np.zeros(shape)
            if name.startswith("lstm"):
                h = shape[0] // 4
                b[h : 2 * h] = 1.0
            params[name] = b
        else:
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def zeros_like(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def copy_params(params: Params) -> Params:
    return {k: v.copy() for k, v in params.items()}


def _sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericOverflowError(name)


def _lstm_forward(x, W_x, W_h, b):
    """Run one LSTM layer over x (b, T, d); returns raw hidden states and a cache."""
    bsz, T, _ = x.shape
    H = W_h.shape[0]
    h = np.zeros((bsz, H))
    c = np.zeros((bsz, H))
    hs = np.empty((bsz, T, H))
    cache = []
    x_proj = x @ W_x + b
    for t in range(T):
        z = x_proj[:, t] + h @ W_h
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, t] = h
        cache.append((h_prev, c_prev, i, f, g, o, tc))
    return hs, cache


def _lstm_backward(x, W_x, W_h, cache, dy):
    """Backprop through one layer.  dy is the gradient w.r.t. the raw hidden sequence."""
    bsz, T, _ = x.shape
    H = W_h.shape[0]
    dW_x = np.zeros_like(W_x)
    dW_h = np.zeros_like(W_h)
    db = np.zeros(4 * H)
    dx = np.empty_like(x)
    dh_next = np.zeros((bsz, H))
    dc_next = np.zeros((bsz, H))
    dz = np.empty((bsz, 4 * H))
    for t in reversed(range(T)):
        h_prev, c_prev, i, f, g, o, tc = cache[t]
        dh = dy[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H :] = dh * tc * o * (1.0 - o)
        dW_x += x[:, t].T @ dz
        dW_h += h_prev.T @ dz
        db += dz.sum(axis=0)
        dx[:, t] = dz @ W_x.T
        dh_next = dz @ W_h.T
        dc_next = dc * f
    return dx, dW_x, dW_h, db


def _validate_batch(params: Params, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 3:
        raise InvalidArgumentError(f"batch must be (b, ts, n), got shape {x.shape}")
    if x.shape[2] != params["lstm1.W_x"].shape[0]:
        raise InvalidArgumentError(
            f"batch has {x.shape[2]} features, model expects {params['lstm1.W_x'].shape[0]}"
        )
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("batch values must be finite")
    return x


def _forward_full(params: Params, x: np.ndarray):
    hs1, cache1 = _lstm_forward(x, params["lstm1.W_x"], params["lstm1.W_h"], params["lstm1.b"])
    _check("lstm1", hs1)
    y1 = np.maximum(hs1, 0.0)
    hs2, cache2 = _lstm_forward(y1, params["lstm2.W_x"], params["lstm2.W_h"], params["lstm2.b"])
    _check("lstm2", hs2)
    last = np.maximum(hs2[:, -1], 0.0)
    logits = last @ params["dense.W"] + params["dense.b"]
    _check("dense", logits)
    probs = _softmax(logits)
    return probs, (hs1, cache1, y1, hs2, cache2, last)


def forward(params: Params, batch) -> np.ndarray:
    """Class probabilities, shape (b, num_classes)."""
    x = _validate_batch(params, batch)
    # non-finite activations are reported by _check, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _forward_full(params, x)[0]


def predict(params: Params, batch, chunk: int = 4096) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    out = [forward(params, x[s : s + chunk]).argmax(axis=1) for s in range(0, len(x), chunk)]
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def loss(probs, labels) -> float:
    """Mean categorical cross-entropy with probabilities floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    p = probs[np.arange(len(labels)), labels]
    return float(np.mean(-np.log(np.maximum(p, PROB_FLOOR))))


def loss_and_gradients(params: Params, batch, labels) -> tuple[float, Params]:
    """Loss and exact BPTT gradients of the mean cross-entropy."""
    x = _validate_batch(params, batch)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != x.shape[0]:
        raise InvalidArgumentError("one label per sample is required")
    probs, (hs1, cache1, y1, hs2, cache2, last) = _forward_full(params, x)
    bsz = x.shape[0]
    rows = np.arange(bsz)
    p_true = probs[rows, labels]

    dlogits = probs.copy()
    dlogits[rows, labels] -= 1.0
    # the floor makes the loss flat in p below 1e-12
    dlogits[p_true < PROB_FLOOR] = 0.0
    dlogits /= bsz

    grads: Params = {}
    grads["dense.W"] = last.T @ dlogits
    grads["dense.b"] = dlogits.sum(axis=0)
    dlast = (dlogits @ params["dense.W"].T) * (hs2[:, -1] > 0)
    dy2 = np.zeros_like(hs2)
    dy2[:, -1] = dlast
    dx2, grads["lstm2.W_x"], grads["lstm2.W_h"], grads["lstm2.b"] = _lstm_backward(
        y1, params["lstm2.W_x"], params["lstm2.W_h"], cache2, dy2
    )
    dy1 = dx2 * (hs1 > 0)
    _, grads["lstm1.W_x"], grads["lstm1.W_h"], grads["lstm1.b"] = _lstm_backward(
        x, params["lstm1.W_x"], params["lstm1.W_h"], cache1, dy1
    )
    value = float(np.mean(-np.log(np.maximum(p_true, PROB_FLOOR))))
    return value, {k: grads[k] for k in params}


def backward(params: Params, batch, labels) -> Params:
    return loss_and_gradients(params, batch, labels)[1]


@dataclass
class AdamState:
    m: Params
    v: Params
    t: int = 0

    @classmethod
    def zeros(cls, params: Params) -> "AdamState":
        return cls(zeros_like(params), zeros_like(params), 0)


def adam_step(
    params: Params,
    grads: Params,
    state: AdamState,
    t: int,
    lr: float = 0.001,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[Params, AdamState]:
    """One bias-corrected Adam update.  Inputs are not modified."""
    if t < 1:
        raise InvalidArgumentError(f"Adam step index must be >= 1, got {t}")
    if grads.keys() != params.keys() or state.m.keys() != params.keys():
        raise InvalidArgumentError("parameter, gradient and state names differ")
    new_p, new_m, new_v = {}, {}, {}
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise InvalidArgumentError(f"shape mismatch for {k}")
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * g * g
        new_p[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t)


def clip_by_global_norm(grads: Params, max_norm: float) -> Params:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


@dataclass
class TrainingLog:
    epoch_losses: list[float] = field(default_factory=list)
    steps: int = 0


def train_local(params: Params, dataset, config: TrainConfig) -> tuple[Params, TrainingLog]:
    """Mini-batch Adam over ``epochs`` seeded shuffles of ``dataset``.

    ``dataset`` is anything with ``values`` (w, ts, n) and ``labels``.  The
    last partial batch of an epoch is kept.  Optimizer state starts fresh
    on every call.
    """
    x = np.asarray(dataset.values, dtype=np.float64)
    y = np.asarray(dataset.labels, dtype=np.int64)
    if len(x) == 0:
        raise InvalidArgumentError("cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    params = copy_params(params)
    state = AdamState.zeros(params)
    log = TrainingLog()
    for _ in range(config.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), config.batch_size):
            idx = order[start : start + config.batch_size]
            value, grads = loss_and_gradients(params, x[idx], y[idx])
            if config.clip_norm is not None:
                grads = clip_by_global_norm(grads, config.clip_norm)
            log.steps += 1
            params, state = adam_step(
                params, grads, state, log.steps, config.learning_rate,
                config.adam_beta1, config.adam_beta2, config.adam_epsilon,
            )
            total += value * len(idx)
        log.epoch_losses.append(total / len(x))
    return params, log


# ---------------------------------------------------------------- wire format

MAGIC = b"FTSM"
VERSION = 1
_HEADER = struct.Struct("<4sHH8sI")  # magic, version, reserved, config digest, float count


def config_digest(config: ModelConfig) -> bytes:
    key = f"{config.input_dim}:{config.hidden1}:{config.hidden2}:{config.num_classes}"
    return hashlib.sha256(key.encode()).digest()[:8]


def payload_size(config: ModelConfig) -> int:
    return _HEADER.size + 4 * parameter_count(config)


def config_from_params(params: Params, ts: int = 5) -> ModelConfig:
    n, four_h1 = params["lstm1.W_x"].shape
    h2, c = params["dense.W"].shape
    return ModelConfig(n, four_h1 // 4, h2, c, ts)


def serialize(params: Params, config: ModelConfig | None = None) -> bytes:
    """Header followed by every tensor as little-endian float32, in shape order."""
    if config is None:
        config = config_from_params(params)
    shapes = parameter_shapes(config)
    if list(params) != list(shapes):
        raise InvalidArgumentError("parameter names do not match the model config")
    chunks = [_HEADER.pack(MAGIC, VERSION, 0, config_digest(config), parameter_count(config))]
    for name, shape in shapes.items():
        arr = params[name]
        if arr.shape != shape:
            raise InvalidArgumentError(f"{name} has shape {arr.shape}, expected {shape}")
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(chunks)


def deserialize(payload: bytes, config: ModelConfig) -> Params:
    if len(payload) < _HEADER.size:
        raise CorruptPayloadError("payload shorter than header")
    magic, version, _, digest, count = _HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise CorruptPayloadError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CorruptPayloadError(f"unsupported version {version}")
    if digest != config_digest(config):
        raise CorruptPayloadError("config digest does not match")
    if count != parameter_count(config) or len(payload) != payload_size(config):
        raise CorruptPayloadError(
            f"payload holds {len(payload)} bytes, expected {payload_size(config)}"
        )
    flat = np.frombuffer(payload, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    params: Params = {}
    pos = 0
    for name, shape in parameter_shapes(config).items():
        size = int(np.prod(shape))
        params[name] = flat[pos : pos + size].reshape(shape)
        pos += size
    return params


def round_trip_f32(params: Params) -> Params:
    """Values as they arrive after a serialize/deserialize hop."""
    return {k: v.astype(np.float32).astype(np.float64) for k, v in params.items()}


def manifest(params: Params) -> list[dict]:
    """Tensor name, shape and sha256 of its float32 bytes."""
    return [
        {
            "name": k,
            "shape": list(v.shape),
            "sha256": hashlib.sha256(np.ascontiguousarray(v, dtype="<f4").tobytes()).hexdigest(),
        }
        for k, v in params.items()
    ]
