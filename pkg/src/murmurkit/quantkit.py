"""Post-training int8 weight quantization, the quantized runtime and benchmarking.

Weights are stored as symmetric per-tensor int8 (zero point 0); biases stay
float. Inference dequantizes the weights and runs the float kernels with every
hidden activation clamped to the range seen during calibration.
"""

from __future__ import annotations

import struct
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadModelFile, EmptyRepresentativeSet, ShapeMismatch
from .funnelcnn import (
    FunnelModel,
    ModelConfig,
    check_crc,
    config_block,
    flops_count,
    head_probs,
    param_count,
    read_config_block,
)

FNQ8_MAGIC = b"FNQ8"
FNQ8_VERSION = 1
QMAX = 127

DTYPE_INT8 = 0
DTYPE_F32 = 1

DEFAULT_WARMUP = 3


def round_half_away(v):
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


@dataclass(frozen=True)
class QTensor:
    """int8 payload with ``value ~= scale * (q - zero_point)``."""

    q: np.ndarray
    scale: float
    zero_point: int = 0

    def dequantize(self) -> np.ndarray:
        return (self.q.astype(np.float64) - self.zero_point) * self.scale


def quantize_tensor(w) -> QTensor:
    """Symmetric int8: ``scale = max|w| / 127``, round half away from zero.

    An all-zero tensor gets ``scale = 1`` and an all-zero payload.
    """
    w = np.asarray(w, dtype=np.float64)
    amax = float(np.max(np.abs(w))) if w.size else 0.0
    if amax == 0.0:
        return QTensor(np.zeros(w.shape, dtype=np.int8), 1.0, 0)
    # divide first: QMAX / amax overflows for subnormal amax
    q = np.clip(round_half_away(w / amax * QMAX), -QMAX, QMAX).astype(np.int8)
    return QTensor(q, amax / QMAX, 0)


@dataclass
class QuantizedModel:
    cfg: ModelConfig
    weights: list  # QTensor per parameter layer
    biases: list  # float arrays per parameter layer
    ranges: dict = field(default_factory=dict)  # layer index -> (min, max)

    def dequantized_model(self) -> FunnelModel:
        m = FunnelModel(self.cfg)
        tensors = []
        for qt, b in zip(self.weights, self.biases):
            tensors += [qt.dequantize(), np.asarray(b, dtype=np.float64)]
        m.set_tensors(tensors)
        return m

    def __post_init__(self):
        self._runtime = None

    @property
    def runtime(self) -> FunnelModel:
        if self._runtime is None:
            self._runtime = self.dequantized_model()
        return self._runtime


def _hidden_indices(m: FunnelModel) -> list[int]:
    # every layer output except the head logits
    return list(range(len(m.layers) - 1))


def calibrate(m: FunnelModel, rep) -> dict:
    """Per-layer ``(min, max)`` of hidden activations over representative inputs.

    Samples are fed one at a time (batch size 1) as float32-cast values.
    """
    rep = list(rep) if not isinstance(rep, np.ndarray) else rep
    if len(rep) == 0:
        raise EmptyRepresentativeSet("calibration needs at least one sample")
    idx = _hidden_indices(m)
    lo = {i: np.inf for i in idx}
    hi = {i: -np.inf for i in idx}
    for sample in rep:
        x = np.asarray(sample, dtype=np.float32).astype(np.float64).reshape((1,) + m.cfg.input_shape)
        h = x
        for i, layer in enumerate(m.layers):
            h = layer.forward(h, None)
            if i in lo:
                lo[i] = min(lo[i], float(h.min()))
                hi[i] = max(hi[i], float(h.max()))
    return {i: (lo[i], hi[i]) for i in idx}


def quantize(m: FunnelModel, ranges: dict | None = None) -> QuantizedModel:
    weights, biases = [], []
    for layer in m.param_layers:
        weights.append(quantize_tensor(layer.params["W"]))
        biases.append(np.asarray(layer.params["b"], dtype=np.float32).astype(np.float64))
    return QuantizedModel(m.cfg, weights, biases, dict(ranges or {}))


def infer_q(qm: QuantizedModel, x) -> np.ndarray:
    """Head probabilities from the quantized model (same semantics as the float path)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != qm.cfg.input_shape and x.shape[1:] != qm.cfg.input_shape:
        raise ShapeMismatch(f"expected input {qm.cfg.input_shape}, got {x.shape}")
    z, _ = qm.runtime.logits(x, clamps=qm.ranges or None)
    return head_probs(z, qm.cfg.head)


def predict_proba_q(qm: QuantizedModel, x) -> np.ndarray:
    """``(N, C)`` class probabilities from the quantized model."""
    p = np.atleast_2d(infer_q(qm, x))
    if qm.cfg.head == "sigmoid":
        p = np.hstack([1.0 - p, p])
    return p


def predict_q(qm: QuantizedModel, x) -> np.ndarray:
    p = np.atleast_2d(infer_q(qm, x))
    if qm.cfg.head == "sigmoid":
        return (p[:, 0] >= 0.5).astype(np.int64)
    return np.argmax(p, axis=1)


# -- FNQ8 files ----------------------------------------------------------------

def _tensor_record(tag: int, arr: np.ndarray, scale: float, zp: int) -> bytes:
    head = struct.pack(f"<BI{arr.ndim}I", tag, arr.ndim, *arr.shape) + struct.pack("<di", scale, zp)
    dtype = "<i1" if tag == DTYPE_INT8 else "<f4"
    return head + np.ascontiguousarray(arr, dtype=dtype).tobytes()


def qmodel_to_bytes(qm: QuantizedModel) -> bytes:
    """``FNQ8`` v1: magic, u16 version, config block, u32 record count,
    records (u8 dtype, u32 rank, u32 dims, f64 scale, i32 zero point, payload),
    u32 calibration count + (u32 layer, f64 min, f64 max) rows, CRC32 footer."""
    parts = [FNQ8_MAGIC, struct.pack("<H", FNQ8_VERSION), config_block(qm.cfg)]
    parts.append(struct.pack("<I", 2 * len(qm.weights)))
    for qt, b in zip(qm.weights, qm.biases):
        parts.append(_tensor_record(DTYPE_INT8, qt.q, qt.scale, qt.zero_point))
        parts.append(_tensor_record(DTYPE_F32, np.asarray(b), 1.0, 0))
    parts.append(struct.pack("<I", len(qm.ranges)))
    for i in sorted(qm.ranges):
        lo, hi = qm.ranges[i]
        parts.append(struct.pack("<Idd", int(i), float(lo), float(hi)))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def qmodel_from_bytes(data: bytes) -> QuantizedModel:
    check_crc(data, FNQ8_MAGIC, "FNQ8 model")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != FNQ8_VERSION:
        raise BadModelFile(f"unsupported FNQ8 version {version}")
    cfg, pos = read_config_block(data, 6)
    try:
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        records = []
        for _ in range(count):
            tag, rank = struct.unpack_from("<BI", data, pos)
            dims = struct.unpack_from(f"<{rank}I", data, pos + 5)
            pos += 5 + 4 * rank
            scale, zp = struct.unpack_from("<di", data, pos)
            pos += 12
            size = int(np.prod(dims)) if rank else 1
            if tag == DTYPE_INT8:
                arr = np.frombuffer(data, dtype="<i1", count=size, offset=pos).reshape(dims).astype(np.int8)
                pos += size
            elif tag == DTYPE_F32:
                arr = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float64)
                pos += 4 * size
            else:
                raise BadModelFile(f"unknown tensor dtype tag {tag}")
            records.append((tag, arr, scale, zp))
        (n_cal,) = struct.unpack_from("<I", data, pos)
        pos += 4
        ranges = {}
        for _ in range(n_cal):
            i, lo, hi = struct.unpack_from("<Idd", data, pos)
            pos += 20
            ranges[i] = (lo, hi)
    except (struct.error, ValueError) as exc:
        raise BadModelFile(f"truncated FNQ8 payload: {exc}") from exc
    if pos != len(data) - 4:
        raise BadModelFile("trailing bytes in FNQ8 file")
    weights = [QTensor(arr, scale, zp) for tag, arr, scale, zp in records[0::2]]
    biases = [arr for tag, arr, _, _ in records[1::2]]
    qm = QuantizedModel(cfg, weights, biases, ranges)
    try:
        qm.dequantized_model()
    except (ShapeMismatch, StopIteration) as exc:
        raise BadModelFile(f"tensors do not match the stored config: {exc}") from exc
    return qm


def save_qmodel(path, qm: QuantizedModel) -> int:
    data = qmodel_to_bytes(qm)
    Path(path).write_bytes(data)
    return len(data)


def load_qmodel(path) -> QuantizedModel:
    return qmodel_from_bytes(Path(path).read_bytes())


# -- benchmarking --------------------------------------------------------------

@dataclass(frozen=True)
class InferenceStats:
    tpis_ms: float
    model_size_bytes: int
    flops: int
    runs: int
    params: int

    def to_dict(self) -> dict:
        return {
            "tpis_ms": self.tpis_ms,
            "model_size_bytes": self.model_size_bytes,
            "flops": self.flops,
            "runs": self.runs,
            "params": self.params,
        }


def bench(qm: QuantizedModel, x, runs: int = 50, warmup: int = DEFAULT_WARMUP,
          model_size_bytes: int | None = None) -> InferenceStats:
    """Mean single-sample latency over ``runs`` forwards after ``warmup`` untimed ones."""
    if runs < 10:
        raise ValueError(f"runs must be >= 10, got {runs}")
    x = np.asarray(x, dtype=np.float64).reshape(qm.cfg.input_shape)
    for _ in range(max(3, warmup)):
        infer_q(qm, x)
    t0 = time.perf_counter()
    for _ in range(runs):
        infer_q(qm, x)
    elapsed = time.perf_counter() - t0
    if model_size_bytes is None:
        model_size_bytes = len(qmodel_to_bytes(qm))
    return InferenceStats(
        tpis_ms=max(elapsed / runs * 1e3, 1e-9),
        model_size_bytes=int(model_size_bytes),
        flops=flops_count(qm.cfg),
        runs=int(runs),
        params=param_count(qm.cfg),
    )
