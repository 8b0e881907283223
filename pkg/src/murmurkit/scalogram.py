"""Morlet continuous wavelet transform and model-input scalograms.

Row ``s`` of a scalogram is the real part of the CWT at scale ``a_s``:

    W(a, b) = sum_k x[k] * conj(psi_{a,b}(t_k)) * dt,
    psi_{a,b}(t) = |a|**-0.5 * psi((t - b) / a)

with ``psi`` the unit-energy Morlet wavelet at the anchor (top) frequency
of the grid, so scale ``a_s = f_anchor / f_s`` centres row ``s`` on ``f_s``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as sp_fft

from .audio_io import AudioSignal
from .errors import DegenerateShape, EmptySegment, InvalidFrequency, InvalidHop, MurmurkitError

DEFAULT_N_CYCLES = 6.0
DEFAULT_N_SCALES = 64
DEFAULT_FMIN_HZ = 20.0
DEFAULT_FMAX_HZ = 500.0
DEFAULT_COLUMNS = 256
DEFAULT_INPUT_SHAPE = (64, 64)

#: Kernel support in units of the Gaussian width sigma.
SUPPORT_SIGMAS = 4.0

SCLG_MAGIC = b"SCLG"


@dataclass(frozen=True)
class MorletParams:
    n_cycles: float = DEFAULT_N_CYCLES

    def __post_init__(self):
        if not self.n_cycles > 0:
            raise InvalidFrequency(f"n_cycles must be > 0, got {self.n_cycles}")

    def sigma(self, freq_hz: float) -> float:
        """Gaussian envelope width in seconds, ``n / (2 pi f)``."""
        return self.n_cycles / (2 * math.pi * freq_hz)

    def norm(self, freq_hz: float) -> float:
        """Amplitude giving unit L2 energy, ``(sigma * sqrt(pi)) ** -0.5``."""
        return (self.sigma(freq_hz) * math.sqrt(math.pi)) ** -0.5


def morlet_sample(t, freq_hz: float, params: MorletParams = MorletParams()):
    """Complex Morlet wavelet centred on ``freq_hz`` evaluated at ``t`` seconds."""
    if not freq_hz > 0:
        raise InvalidFrequency(f"frequency must be > 0, got {freq_hz}")
    t = np.asarray(t, dtype=np.float64)
    sigma = params.sigma(freq_hz)
    return params.norm(freq_hz) * np.exp(-(t**2) / (2 * sigma**2)) * np.exp(1j * 2 * math.pi * freq_hz * t)


def dilated_wavelet(t, scale: float, shift: float, mother_freq_hz: float,
                    params: MorletParams = MorletParams()):
    """Dilated and shifted wavelet ``|a|^-1/2 psi((t - b) / a)``."""
    if scale == 0:
        raise InvalidFrequency("scale must be non-zero")
    t = np.asarray(t, dtype=np.float64)
    return morlet_sample((t - shift) / scale, mother_freq_hz, params) / math.sqrt(abs(scale))


@dataclass(frozen=True)
class ScaleGrid:
    """Descending centre frequencies with their scales relative to the top one."""

    center_freqs_hz: np.ndarray
    scales: np.ndarray = field(default=None)
    shift_origin_s: float = 0.0

    def __post_init__(self):
        f = np.asarray(self.center_freqs_hz, dtype=np.float64)
        if f.ndim != 1 or f.size == 0:
            raise InvalidFrequency("scale grid needs at least one frequency")
        if np.any(f <= 0):
            raise InvalidFrequency("grid frequencies must be positive")
        if f.size > 1 and not np.all(np.diff(f) < 0):
            raise InvalidFrequency("grid frequencies must be strictly descending")
        object.__setattr__(self, "center_freqs_hz", f)
        if self.scales is None:
            object.__setattr__(self, "scales", f[0] / f)
        else:
            object.__setattr__(self, "scales", np.asarray(self.scales, dtype=np.float64))

    @property
    def anchor_hz(self) -> float:
        return float(self.center_freqs_hz[0]) * float(self.scales[0])

    def __len__(self):
        return self.center_freqs_hz.size

    def check(self, sample_rate_hz: float) -> None:
        if self.center_freqs_hz[0] >= sample_rate_hz / 2:
            raise InvalidFrequency(
                f"grid top {self.center_freqs_hz[0]} Hz is not below Nyquist {sample_rate_hz / 2} Hz"
            )

    @classmethod
    def log_spaced(cls, fmin_hz=DEFAULT_FMIN_HZ, fmax_hz=DEFAULT_FMAX_HZ, n=DEFAULT_N_SCALES):
        if not 0 < fmin_hz < fmax_hz:
            raise InvalidFrequency(f"need 0 < fmin < fmax, got {fmin_hz}, {fmax_hz}")
        return cls(np.geomspace(fmax_hz, fmin_hz, int(n)))


@dataclass(frozen=True)
class Scalogram:
    values: np.ndarray  # (S, T), scales x time
    scale_grid: ScaleGrid
    hop: int


def default_hop(n_samples: int, columns: int = DEFAULT_COLUMNS) -> int:
    """Hop giving roughly ``columns`` output columns."""
    return max(1, n_samples // columns)


def wavelet_kernel(scale: float, grid: ScaleGrid, sample_rate_hz: float,
                   params: MorletParams = MorletParams()) -> np.ndarray:
    """Sampled ``psi_{a,0}`` on ``+-4 sigma``, centred at index ``len // 2``."""
    freq = grid.anchor_hz / scale
    half = int(math.ceil(SUPPORT_SIGMAS * params.sigma(freq) * sample_rate_hz))
    t = np.arange(-half, half + 1) / sample_rate_hz
    return dilated_wavelet(t, scale, 0.0, grid.anchor_hz, params)


def cwt(seg: AudioSignal, grid: ScaleGrid, params: MorletParams = MorletParams(),
        hop: int | None = None) -> Scalogram:
    """Real part of the Morlet CWT, one row per scale, sampled every ``hop`` samples.

    Each row is the cross-correlation of the segment with the sampled wavelet
    (equivalently convolution with its conjugated time reverse), computed by
    FFT on a zero-padded buffer long enough that no circular wrap occurs.
    Column ``j`` corresponds to shift ``b = j * hop / fs``.
    """
    x = np.asarray(seg.samples, dtype=np.float64)
    if x.size == 0:
        raise EmptySegment("cannot transform an empty segment")
    if hop is None:
        hop = default_hop(x.size)
    if int(hop) != hop or hop < 1:
        raise InvalidHop(f"hop must be a positive integer, got {hop}")
    hop = int(hop)
    fs = seg.sample_rate_hz
    grid.check(fs)
    dt = 1.0 / fs

    kernels = [wavelet_kernel(a, grid, fs, params) for a in grid.scales]
    longest = max(k.size for k in kernels)
    nfft = sp_fft.next_fast_len(x.size + longest - 1)
    xf = sp_fft.rfft(x, nfft)
    cols = np.arange(0, x.size, hop)

    out = np.empty((len(grid), cols.size))
    for s, kern in enumerate(kernels):
        half = kern.size // 2
        # correlation with psi == convolution with conj(psi(-t)); psi is
        # centred so the output for shift b sits at index b + half
        h = np.conj(kern[::-1])
        # only the real part is kept: Re(x * h) = x * Re(h) for real x
        full = sp_fft.irfft(xf * sp_fft.rfft(h.real, nfft), nfft)
        out[s] = full[cols + half] * dt
    return Scalogram(out, grid, hop)


def _resize_axis(m: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = m.shape[axis]
    if n_out == n_in:
        return m
    m = np.moveaxis(m, axis, 0)
    if n_out < n_in:
        edges = (np.arange(n_out + 1) * n_in) // n_out
        out = np.add.reduceat(m, edges[:-1], axis=0) / np.diff(edges)[:, None]
    else:
        pos = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        w = (pos - lo)[:, None]
        out = m[lo] * (1 - w) + m[hi] * w
    return np.moveaxis(out, 0, axis)


def minmax_normalize(m: np.ndarray) -> np.ndarray:
    """Affine map of ``m`` onto ``[-1, 1]``; constant input maps to zeros."""
    lo, hi = float(np.min(m)), float(np.max(m))
    if not hi > lo:
        return np.zeros_like(m, dtype=np.float64)
    return np.clip(2.0 * (m - lo) / (hi - lo) - 1.0, -1.0, 1.0)


def to_model_input(sc, out_shape=DEFAULT_INPUT_SHAPE) -> np.ndarray:
    """Resize a scalogram to ``out_shape`` and min-max normalize it to [-1, 1].

    Shrinking averages equal-width bins; growing interpolates linearly.
    Accepts a :class:`Scalogram` or a bare 2-D array.
    """
    m = np.asarray(sc.values if isinstance(sc, Scalogram) else sc, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise DegenerateShape(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    s_out, t_out = (int(v) for v in out_shape)
    if s_out < 1 or t_out < 1 or s_out > 4 * m.shape[0] or t_out > 4 * m.shape[1]:
        raise DegenerateShape(f"cannot resize {m.shape} to {(s_out, t_out)}")
    if not np.all(np.isfinite(m)):
        raise DegenerateShape("scalogram contains non-finite values")
    m = _resize_axis(m, t_out, axis=1)
    m = _resize_axis(m, s_out, axis=0)
    return minmax_normalize(m)


def save_scalogram(path, sc) -> None:
    """Dump a matrix as ``SCLG`` header + little-endian f32 rows."""
    m = np.asarray(sc.values if isinstance(sc, Scalogram) else sc)
    s, t = m.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", SCLG_MAGIC, s, t, 0))
        fh.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


def load_scalogram(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise MurmurkitError("truncated scalogram file")
    magic, s, t, _ = struct.unpack_from("<4sIII", data)
    if magic != SCLG_MAGIC or len(data) != 16 + 4 * s * t:
        raise MurmurkitError("not a scalogram dump")
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(s, t).astype(np.float32)
