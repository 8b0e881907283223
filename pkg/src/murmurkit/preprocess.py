"""Outlier clipping, Butterworth band-pass filtering and fixed-length segmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .audio_io import AudioSignal
from .errors import ConfigError, EmptySignal, InvalidBand

ONE_SIDED = "one-sided"
SYMMETRIC = "symmetric"

PAD_IF_HALF = "pad-if-≥half"
DROP = "drop"
_TAIL_POLICIES = {PAD_IF_HALF, "pad-if-half", DROP}


@dataclass(frozen=True)
class OutlierParams:
    patience: float = 3.0
    mode: str = ONE_SIDED

    def __post_init__(self):
        if not self.patience > 0:
            raise ConfigError(f"patience must be > 0, got {self.patience}")
        if self.mode not in (ONE_SIDED, SYMMETRIC):
            raise ConfigError(f"unknown outlier mode {self.mode!r}")


@dataclass(frozen=True)
class BandpassParams:
    low_cut_hz: float = 20.0
    high_cut_hz: float = 500.0
    order: int = 2

    def __post_init__(self):
        if int(self.order) < 1:
            raise ConfigError(f"filter order must be >= 1, got {self.order}")

    def check(self, sample_rate_hz: float) -> None:
        if not 0 < self.low_cut_hz < self.high_cut_hz < sample_rate_hz / 2:
            raise InvalidBand(
                f"need 0 < {self.low_cut_hz} < {self.high_cut_hz} < fs/2 = {sample_rate_hz / 2}"
            )


@dataclass(frozen=True)
class SegmentPlan:
    segment_s: float = 5.0
    tail_policy: str = PAD_IF_HALF

    def __post_init__(self):
        if not self.segment_s > 0:
            raise ConfigError(f"segment length must be > 0, got {self.segment_s}")
        if self.tail_policy not in _TAIL_POLICIES:
            raise ConfigError(f"unknown tail policy {self.tail_policy!r}")


def outlier_threshold(x: np.ndarray, patience: float) -> tuple[float, float]:
    """Return ``(mean, t)`` with ``t = mean + patience * std`` (population std)."""
    mu = float(np.mean(x))
    sigma = float(np.sqrt(np.mean((x - mu) ** 2)))
    return mu, mu + patience * sigma


def clip_outliers(x: np.ndarray, mu: float, t: float, mode: str = ONE_SIDED) -> np.ndarray:
    """Apply a precomputed clip level ``t`` (and its mirror about ``mu``)."""
    out = np.minimum(x, t)
    if mode == SYMMETRIC:
        out = np.maximum(out, mu - (t - mu))
    return out


def remove_outliers(sig: AudioSignal, params: OutlierParams = OutlierParams()) -> AudioSignal:
    """Clip amplitude spikes above ``mean + p * std`` of the original signal.

    One-sided mode replaces every sample ``x_i > t`` with ``t``; symmetric
    mode also lifts samples below ``mean - p * std``.
    """
    x = np.asarray(sig.samples, dtype=np.float64)
    if x.size == 0:
        raise EmptySignal("cannot remove outliers from an empty signal")
    mu, t = outlier_threshold(x, params.patience)
    return AudioSignal(clip_outliers(x, mu, t, params.mode), sig.sample_rate_hz)


def _butter_prototype_poles(order: int) -> np.ndarray:
    k = np.arange(1, order + 1)
    return np.exp(1j * np.pi * (2 * k + order - 1) / (2 * order))


def butterworth_bandpass_sos(params: BandpassParams, sample_rate_hz: float) -> np.ndarray:
    """Digital band-pass second-order sections from the analog Butterworth prototype.

    Steps: normalized low-pass prototype of the requested order, band edges
    pre-warped with ``tan(pi f / fs)``, low-pass to band-pass substitution
    ``s -> (s^2 + w0^2) / (B s)``, bilinear map ``z = (1 + s) / (1 - s)``.
    Poles are paired into conjugate sections, each with zeros at z = +1 and
    z = -1, and the mid-band gain (at ``w0``) is exactly 1.

    Returns an ``(order, 6)`` array in ``[b0, b1, b2, 1, a1, a2]`` layout.
    """
    params.check(sample_rate_hz)
    order = int(params.order)
    wl = np.tan(np.pi * params.low_cut_hz / sample_rate_hz)
    wh = np.tan(np.pi * params.high_cut_hz / sample_rate_hz)
    bw = wh - wl
    w0sq = wl * wh

    def bilinear(s):
        return (1 + s) / (1 - s)

    # each prototype pole p gives the roots of s^2 - p*B*s + w0^2; a
    # conjugate prototype pair yields two conjugate band-pass pairs, a real
    # prototype pole yields one pair (real or conjugate)
    dens = []
    for p in _butter_prototype_poles(order):
        if p.imag < -1e-12:
            continue
        pb = p * bw
        disc = np.sqrt(pb * pb - 4 * w0sq + 0j)
        r1, r2 = bilinear((pb + disc) / 2), bilinear((pb - disc) / 2)
        if p.imag > 1e-12:
            for r in (r1, r2):
                dens.append([1.0, -2.0 * r.real, abs(r) ** 2])
        else:
            dens.append([1.0, -(r1 + r2).real, (r1 * r2).real])

    sos = np.zeros((order, 6))
    for i, den in enumerate(sorted(dens, key=lambda d: d[2])):
        sos[i, :3] = [1.0, 0.0, -1.0]
        sos[i, 3:] = den

    # normalize the cascade to unit gain at the pre-warped centre frequency
    z0 = np.exp(1j * 2 * np.arctan(np.sqrt(w0sq)))
    gain = 1.0
    for row in sos:
        num = row[0] * z0**2 + row[1] * z0 + row[2]
        den = row[3] * z0**2 + row[4] * z0 + row[5]
        gain *= num / den
    sos[0, :3] /= abs(gain)
    return sos


def sos_gain_db(sos: np.ndarray, freq_hz, sample_rate_hz: float) -> np.ndarray:
    """Magnitude response of a section cascade in dB at ``freq_hz``."""
    z = np.exp(1j * 2 * np.pi * np.atleast_1d(np.asarray(freq_hz, dtype=float)) / sample_rate_hz)
    h = np.ones_like(z)
    for row in sos:
        h = h * (row[0] * z**2 + row[1] * z + row[2]) / (row[3] * z**2 + row[4] * z + row[5])
    return 20 * np.log10(np.abs(h))


def butterworth_bandpass(sig: AudioSignal, params: BandpassParams = BandpassParams()) -> AudioSignal:
    """Causal single-pass Butterworth band-pass with zero initial state."""
    sos = butterworth_bandpass_sos(params, sig.sample_rate_hz)
    if len(sig) == 0:
        raise EmptySignal("cannot filter an empty signal")
    return AudioSignal(signal.sosfilt(sos, sig.samples), sig.sample_rate_hz)


def segment(sig: AudioSignal, plan: SegmentPlan = SegmentPlan()) -> list[AudioSignal]:
    """Split into non-overlapping windows of ``round(segment_s * fs)`` samples.

    With the pad-if-half policy a trailing remainder of at least half a
    window is zero-padded to full length; shorter tails are dropped.
    """
    x = np.asarray(sig.samples)
    if x.size == 0:
        raise EmptySignal("cannot segment an empty signal")
    win = int(round(plan.segment_s * sig.sample_rate_hz))
    if win < 1:
        raise ConfigError("segment shorter than one sample")
    n_full, rem = divmod(x.size, win)
    out = [AudioSignal(x[i * win : (i + 1) * win], sig.sample_rate_hz) for i in range(n_full)]
    if rem and plan.tail_policy != DROP and 2 * rem >= win:
        tail = np.zeros(win)
        tail[:rem] = x[n_full * win :]
        out.append(AudioSignal(tail, sig.sample_rate_hz))
    return out
