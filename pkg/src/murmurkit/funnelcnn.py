"""FunnelCNN: squeeze convolutions, a depthwise-separable bottleneck and mirrored
expansion convolutions, each followed by 2x2 max pooling, then two dense layers.

Pure numpy, NHWC layout, float64 throughout. Convolutions are stride 1 with
"same" padding; even kernels pad the extra row/column on the bottom/right.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadModelFile,
    ConfigError,
    NoCachedForward,
    NonFiniteInput,
    ShapeMismatch,
    ShapeUnderflow,
)

SIGMOID = "sigmoid"
SOFTMAX = "softmax"

FNET_MAGIC = b"FNET"
FNET_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_shape: tuple = (64, 64, 1)
    squeeze_filters: tuple = (16, 8)
    bottleneck_channels: int = 8
    expansion_filters: tuple = (8, 16)
    kernel: tuple = (2, 2)
    pool: tuple = (2, 2)
    fc_depth: int = 8
    num_classes: int = 2
    head: str = field(default=None)
    class_names: tuple = ()  # optional labels carried into saved model files

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(str(n) for n in self.class_names))
        if self.class_names and len(self.class_names) != self.num_classes:
            raise ConfigError(f"{len(self.class_names)} class names for {self.num_classes} classes")
        for name in ("input_shape", "squeeze_filters", "expansion_filters", "kernel", "pool"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be (H, W, C) positive, got {self.input_shape}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        want = SIGMOID if self.num_classes == 2 else SOFTMAX
        if self.head is None:
            object.__setattr__(self, "head", want)
        elif self.head != want:
            raise ConfigError(f"{self.num_classes} classes require a {want} head, got {self.head}")
        if len(self.kernel) != 2 or len(self.pool) != 2 or min(self.kernel + self.pool) < 1:
            raise ConfigError("kernel and pool must be positive (h, w) pairs")

    @property
    def head_units(self) -> int:
        return 1 if self.head == SIGMOID else self.num_classes

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# -- layers ------------------------------------------------------------------

def _same_pad(k: int) -> tuple[int, int]:
    before = (k - 1) // 2
    return before, k - 1 - before


class Layer:
    kind = "layer"
    params: dict

    def __init__(self, name: str):
        self.name = name
        self.params = {}

    def forward(self, x, cache: dict | None):
        raise NotImplementedError

    def backward(self, dy, cache: dict):
        """Return ``(dx, {param: grad})``."""
        raise NotImplementedError

    def out_shape(self, shape):
        return shape

    def macs(self, in_shape) -> int:
        return 0


class Conv2D(Layer):
    kind = "conv"

    def __init__(self, name, kernel, cin, cout):
        super().__init__(name)
        self.kernel = tuple(kernel)
        self.params = {"W": np.zeros(self.kernel + (cin, cout)), "b": np.zeros(cout)}

    @property
    def cin(self):
        return self.params["W"].shape[2]

    @property
    def cout(self):
        return self.params["W"].shape[3]

    def _padded(self, x):
        (t, b), (l, r) = _same_pad(self.kernel[0]), _same_pad(self.kernel[1])
        return np.pad(x, ((0, 0), (t, b), (l, r), (0, 0)))

    def _im2col(self, x):
        n, h, w, c = x.shape
        if self.kernel == (1, 1):
            return x.reshape(-1, c)
        xp = self._padded(x)
        # column order (i, j, c) matches W.reshape(kh * kw * cin, cout)
        cols = np.concatenate(
            [xp[:, i : i + h, j : j + w, :] for i in range(self.kernel[0]) for j in range(self.kernel[1])],
            axis=-1,
        )
        return cols.reshape(n * h * w, -1)

    def forward(self, x, cache):
        n, h, w, _ = x.shape
        W = self.params["W"]
        cols = self._im2col(x)
        out = cols @ W.reshape(-1, W.shape[3]) + self.params["b"]
        if cache is not None:
            cache["cols"] = cols
            cache["in_shape"] = x.shape
        return out.reshape(n, h, w, W.shape[3])

    def backward(self, dy, cache):
        cols = cache["cols"]
        n, h, w, cin = cache["in_shape"]
        W = self.params["W"]
        kh, kw = self.kernel
        dy2 = dy.reshape(-1, dy.shape[3])
        dW = (cols.T @ dy2).reshape(W.shape)
        dcols = (dy2 @ W.reshape(-1, W.shape[3]).T).reshape(n, h, w, kh * kw, cin)
        if self.kernel == (1, 1):
            dx = dcols[:, :, :, 0, :]
        else:
            (t, _), (l, _) = _same_pad(kh), _same_pad(kw)
            dxp = np.zeros((n, h + kh - 1, w + kw - 1, cin))
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i : i + h, j : j + w, :] += dcols[:, :, :, i * kw + j, :]
            dx = dxp[:, t : t + h, l : l + w, :]
        return dx, {"W": dW, "b": dy2.sum(axis=0)}

    def out_shape(self, shape):
        h, w, _ = shape
        return (h, w, self.cout)

    def macs(self, in_shape):
        h, w, _ = in_shape
        return self.kernel[0] * self.kernel[1] * self.cin * self.cout * h * w

    def fans(self):
        k = self.kernel[0] * self.kernel[1]
        return k * self.cin, k * self.cout


class Pointwise(Conv2D):
    kind = "pointwise"

    def __init__(self, name, cin, cout):
        super().__init__(name, (1, 1), cin, cout)


class DepthwiseConv2D(Layer):
    kind = "depthwise"

    def __init__(self, name, kernel, channels):
        super().__init__(name)
        self.kernel = tuple(kernel)
        self.params = {"W": np.zeros(self.kernel + (channels,)), "b": np.zeros(channels)}

    def forward(self, x, cache):
        n, h, w, c = x.shape
        (t, b), (l, r) = _same_pad(self.kernel[0]), _same_pad(self.kernel[1])
        xp = np.pad(x, ((0, 0), (t, b), (l, r), (0, 0)))
        W = self.params["W"]
        out = np.zeros_like(x)
        for i in range(self.kernel[0]):
            for j in range(self.kernel[1]):
                out += xp[:, i : i + h, j : j + w, :] * W[i, j]
        out += self.params["b"]
        if cache is not None:
            cache["xp"] = xp
        return out

    def backward(self, dy, cache):
        xp = cache["xp"]
        W = self.params["W"]
        n, h, w, c = dy.shape
        dW = np.empty_like(W)
        dxp = np.zeros_like(xp)
        for i in range(self.kernel[0]):
            for j in range(self.kernel[1]):
                dW[i, j] = np.sum(xp[:, i : i + h, j : j + w, :] * dy, axis=(0, 1, 2))
                dxp[:, i : i + h, j : j + w, :] += dy * W[i, j]
        (t, _), (l, _) = _same_pad(self.kernel[0]), _same_pad(self.kernel[1])
        return dxp[:, t : t + h, l : l + w, :], {"W": dW, "b": dy.sum(axis=(0, 1, 2))}

    def macs(self, in_shape):
        h, w, c = in_shape
        return self.kernel[0] * self.kernel[1] * c * h * w

    def fans(self):
        k = self.kernel[0] * self.kernel[1]
        return k, k


class MaxPool(Layer):
    """Floor-mode max pooling; ties route to the first element in row-major order."""

    kind = "maxpool"

    def __init__(self, name, pool):
        super().__init__(name)
        self.pool = tuple(pool)

    def forward(self, x, cache):
        n, h, w, c = x.shape
        ph, pw = self.pool
        ho, wo = h // ph, w // pw
        views = [x[:, i : ho * ph : ph, j : wo * pw : pw, :] for i in range(ph) for j in range(pw)]
        out = views[0]
        idx = np.zeros(out.shape, dtype=np.int16)
        for k in range(1, len(views)):
            # strict comparison keeps the first maximum on ties
            better = views[k] > out
            out = np.where(better, views[k], out)
            idx = np.where(better, np.int16(k), idx)
        if cache is not None:
            cache["idx"] = idx
            cache["in_shape"] = x.shape
        return out

    def backward(self, dy, cache):
        idx = cache["idx"]
        n, h, w, c = cache["in_shape"]
        ph, pw = self.pool
        ho, wo = dy.shape[1], dy.shape[2]
        dx = np.zeros((n, h, w, c))
        for i in range(ph):
            for j in range(pw):
                dx[:, i : ho * ph : ph, j : wo * pw : pw, :] = np.where(idx == i * pw + j, dy, 0.0)
        return dx, {}

    def out_shape(self, shape):
        h, w, c = shape
        return (h // self.pool[0], w // self.pool[1], c)


class Tanh(Layer):
    kind = "tanh"

    def forward(self, x, cache):
        y = np.tanh(x)
        if cache is not None:
            cache["y"] = y
        return y

    def backward(self, dy, cache):
        return dy * (1.0 - cache["y"] ** 2), {}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, cache):
        if cache is not None:
            cache["mask"] = x > 0
        return np.maximum(x, 0.0)

    def backward(self, dy, cache):
        return dy * cache["mask"], {}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, cache):
        if cache is not None:
            cache["in_shape"] = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy, cache):
        return dy.reshape(cache["in_shape"]), {}

    def out_shape(self, shape):
        return (int(np.prod(shape)),)


class Dense(Layer):
    kind = "fc"

    def __init__(self, name, din, dout):
        super().__init__(name)
        self.params = {"W": np.zeros((din, dout)), "b": np.zeros(dout)}

    def forward(self, x, cache):
        if cache is not None:
            cache["x"] = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dy, cache):
        return dy @ self.params["W"].T, {"W": cache["x"].T @ dy, "b": dy.sum(axis=0)}

    def out_shape(self, shape):
        return (self.params["W"].shape[1],)

    def macs(self, in_shape):
        din, dout = self.params["W"].shape
        return din * dout

    def fans(self):
        return self.params["W"].shape


# -- heads -------------------------------------------------------------------

def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def head_probs(logits, head: str):
    return sigmoid(logits) if head == SIGMOID else softmax(logits)


def cross_entropy(logits, y, head: str) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    y = np.asarray(y, dtype=np.int64)
    n = logits.shape[0]
    if head == SIGMOID:
        z = logits[:, 0]
        # log(1 + e^z) - y z, evaluated without overflow
        loss = np.mean(np.logaddexp(0.0, z) - y * z)
        grad = ((sigmoid(z) - y) / n)[:, None]
    else:
        m = logits.max(axis=1, keepdims=True)
        lse = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True)))[:, 0]
        loss = np.mean(lse - logits[np.arange(n), y])
        grad = softmax(logits)
        grad[np.arange(n), y] -= 1.0
        grad /= n
    return float(loss), grad


# -- model -------------------------------------------------------------------

def _layer_stack(cfg: ModelConfig) -> list[Layer]:
    layers: list[Layer] = []
    c = cfg.input_shape[2]
    n_pool = 0

    def pool():
        nonlocal n_pool
        n_pool += 1
        layers.append(MaxPool(f"pool{n_pool}", cfg.pool))

    for i, f in enumerate(cfg.squeeze_filters, 1):
        layers += [Conv2D(f"squeeze{i}", cfg.kernel, c, f), Tanh(f"squeeze{i}_tanh")]
        pool()
        c = f
    layers += [DepthwiseConv2D("depthwise", cfg.kernel, c), Tanh("depthwise_tanh")]
    layers += [Pointwise("pointwise", c, cfg.bottleneck_channels), Tanh("pointwise_tanh")]
    pool()
    c = cfg.bottleneck_channels
    for i, f in enumerate(cfg.expansion_filters, 1):
        layers += [Conv2D(f"expand{i}", cfg.kernel, c, f), Tanh(f"expand{i}_tanh")]
        pool()
        c = f

    shape = cfg.input_shape
    for layer in layers:
        shape = layer.out_shape(shape)
        if min(shape) < 1:
            raise ShapeUnderflow(f"{layer.name} reduces the feature map to {shape}")
    flat = int(np.prod(shape))
    layers += [
        Flatten("flatten"),
        Dense("fc", flat, cfg.fc_depth),
        ReLU("fc_relu"),
        Dense("head", cfg.fc_depth, cfg.head_units),
    ]
    return layers


class FunnelModel:
    """Layer stack plus the per-layer caches of the last training-mode forward."""

    def __init__(self, cfg: ModelConfig, layers: list[Layer] | None = None):
        self.cfg = cfg
        self.layers = layers if layers is not None else _layer_stack(cfg)
        self._cache = None

    @property
    def param_layers(self) -> list[Layer]:
        return [l for l in self.layers if l.params]

    def tensors(self) -> list[np.ndarray]:
        """All weight and bias arrays in layer order (W before b)."""
        return [l.params[k] for l in self.param_layers for k in ("W", "b")]

    def set_tensors(self, tensors) -> None:
        tensors = list(tensors)
        it = iter(tensors)
        for layer in self.param_layers:
            for k in ("W", "b"):
                t = np.asarray(next(it), dtype=np.float64)
                if t.shape != layer.params[k].shape:
                    raise ShapeMismatch(f"{layer.name}.{k}: expected {layer.params[k].shape}, got {t.shape}")
                layer.params[k] = t.copy()

    def n_params(self) -> int:
        return int(sum(t.size for t in self.tensors()))

    def copy(self) -> "FunnelModel":
        m = FunnelModel(self.cfg)
        m.set_tensors(self.tensors())
        return m

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.shape == self.cfg.input_shape
        if single:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != self.cfg.input_shape:
            raise ShapeMismatch(f"expected input {self.cfg.input_shape}, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NonFiniteInput("input contains NaN or Inf")
        return x, single

    def logits(self, x, training: bool = False, clamps=None):
        """Head pre-activations. ``clamps`` maps layer index to ``(lo, hi)``."""
        x, single = self._check_input(x)
        caches = [] if training else None
        h = x
        for i, layer in enumerate(self.layers):
            c = {} if training else None
            h = layer.forward(h, c)
            if clamps is not None and i in clamps:
                lo, hi = clamps[i]
                h = np.clip(h, lo, hi)
            if training:
                caches.append(c)
        if training:
            self._cache = {"x": x, "layers": caches, "logits": h}
        return (h[0] if single else h), single

    def forward(self, x, training: bool = False, clamps=None):
        z, _ = self.logits(x, training=training, clamps=clamps)
        return head_probs(z, self.cfg.head)

    def backward_logits(self, dlogits):
        """Backpropagate a logit gradient through the cached forward pass."""
        if self._cache is None:
            raise NoCachedForward("run forward(training=True) before backward")
        g = np.asarray(dlogits, dtype=np.float64)
        grads = {}
        for layer, c in zip(reversed(self.layers), reversed(self._cache["layers"])):
            g, pg = layer.backward(g, c)
            if pg:
                grads[layer.name] = pg
        return [grads[l.name][k] for l in self.param_layers for k in ("W", "b")], g

    def loss_and_grads(self, x, y):
        z, single = self.logits(x, training=True)
        if single:
            z = z[None]
        loss, dz = cross_entropy(z, np.atleast_1d(y), self.cfg.head)
        grads, _ = self.backward_logits(dz)
        return loss, grads


def build(cfg: ModelConfig = ModelConfig(), seed: int = 0) -> FunnelModel:
    """Glorot-uniform weights from ``seed`` (layer order), zero biases."""
    m = FunnelModel(cfg)
    rng = np.random.default_rng(seed)
    for layer in m.param_layers:
        fan_in, fan_out = layer.fans()
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        layer.params["W"] = rng.uniform(-lim, lim, size=layer.params["W"].shape)
    return m


def forward(m: FunnelModel, x, training: bool = False):
    """Class probabilities: ``p(class 1)`` per sample for a sigmoid head,
    a probability vector for softmax."""
    return m.forward(x, training=training)


def backward(m: FunnelModel, x, y):
    """Cross-entropy gradients for every tensor, ordered like :meth:`FunnelModel.tensors`.

    Requires a preceding ``forward(m, x, training=True)`` on the same input.
    """
    cache = m._cache
    if cache is None:
        raise NoCachedForward("run forward(training=True) before backward")
    xx = np.asarray(x, dtype=np.float64)
    if xx.shape == m.cfg.input_shape:
        xx = xx[None]
    if xx.shape != cache["x"].shape or not np.array_equal(xx, cache["x"]):
        raise NoCachedForward("cached activations belong to a different input")
    _, dz = cross_entropy(cache["logits"], np.atleast_1d(y), m.cfg.head)
    grads, _ = m.backward_logits(dz)
    return grads


def predict_proba(m: FunnelModel, x, clamps=None) -> np.ndarray:
    """``(N, C)`` class probabilities for either head type."""
    z, single = m.logits(x, clamps=clamps)
    if single:
        z = z[None]
    p = head_probs(z, m.cfg.head)
    if m.cfg.head == SIGMOID:
        p = np.hstack([1.0 - p, p])
    return p


def predict(m: FunnelModel, x, clamps=None) -> np.ndarray:
    """Class indices: threshold 0.5 for sigmoid, argmax for softmax."""
    z, single = m.logits(x, clamps=clamps)
    if single:
        z = z[None]
    if m.cfg.head == SIGMOID:
        return (sigmoid(z[:, 0]) >= 0.5).astype(np.int64)
    return np.argmax(z, axis=1)


# -- accounting ----------------------------------------------------------------

def layer_table(cfg: ModelConfig) -> list[dict]:
    """Per-layer output shape, trainable parameters and FLOPs (2 per MAC)."""
    rows = []
    shape = cfg.input_shape
    for layer in _layer_stack(cfg):
        out = layer.out_shape(shape)
        n_par = int(sum(p.size for p in layer.params.values()))
        macs = layer.macs(out if layer.kind in ("conv", "pointwise", "depthwise") else shape)
        rows.append(
            {"name": layer.name, "kind": layer.kind, "out_shape": tuple(out),
             "params": n_par, "flops": 2 * int(macs)}
        )
        shape = out
    return rows


def param_count(cfg: ModelConfig) -> int:
    return sum(r["params"] for r in layer_table(cfg))


def flops_count(cfg: ModelConfig) -> int:
    """Forward-pass FLOPs counting 2 per multiply-accumulate; biases and activations excluded."""
    return sum(r["flops"] for r in layer_table(cfg))


# -- serialization ---------------------------------------------------------------

def config_block(cfg: ModelConfig) -> bytes:
    raw = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def read_config_block(data: bytes, pos: int) -> tuple[ModelConfig, int]:
    (n,) = struct.unpack_from("<I", data, pos)
    raw = data[pos + 4 : pos + 4 + n]
    if len(raw) != n:
        raise BadModelFile("truncated config block")
    try:
        cfg = ModelConfig.from_dict(json.loads(raw.decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise BadModelFile(f"bad config block: {exc}") from exc
    return cfg, pos + 4 + n


def check_crc(data: bytes, magic: bytes, what: str) -> None:
    if len(data) < 10 or data[:4] != magic:
        raise BadModelFile(f"not a {what} file (bad magic)")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != crc:
        raise BadModelFile(f"{what} CRC32 mismatch")


def model_to_bytes(m: FunnelModel) -> bytes:
    """``FNET`` v1: magic, u16 version, config block, u32 tensor count, tensors
    (u32 rank, u32 dims, f32 payload), CRC32 footer."""
    tensors = m.tensors()
    parts = [FNET_MAGIC, struct.pack("<H", FNET_VERSION), config_block(m.cfg), struct.pack("<I", len(tensors))]
    for t in tensors:
        parts.append(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
        parts.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def model_from_bytes(data: bytes) -> FunnelModel:
    check_crc(data, FNET_MAGIC, "FNET model")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != FNET_VERSION:
        raise BadModelFile(f"unsupported FNET version {version}")
    cfg, pos = read_config_block(data, 6)
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tensors = []
    try:
        for _ in range(count):
            (rank,) = struct.unpack_from("<I", data, pos)
            dims = struct.unpack_from(f"<{rank}I", data, pos + 4)
            pos += 4 + 4 * rank
            size = int(np.prod(dims)) if rank else 1
            t = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(dims)
            pos += 4 * size
            tensors.append(t.astype(np.float64))
    except (struct.error, ValueError) as exc:
        raise BadModelFile(f"truncated tensor payload: {exc}") from exc
    m = FunnelModel(cfg)
    try:
        m.set_tensors(tensors)
    except (ShapeMismatch, StopIteration) as exc:
        raise BadModelFile(f"tensors do not match the stored config: {exc}") from exc
    return m


def save_model(path, m: FunnelModel) -> int:
    data = model_to_bytes(m)
    Path(path).write_bytes(data)
    return len(data)


def load_model(path) -> FunnelModel:
    return model_from_bytes(Path(path).read_bytes())
