"""16-bit PCM WAV decoding and polyphase resampling."""

from __future__ import annotations

import math
import struct
import wave
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import EmptyAudio, InvalidRate, NotWav, UnsupportedEncoding

#: Divisor mapping int16 samples onto [-1, 1).
QUANT_FACTOR = 32768.0

#: Default pipeline rate for heart-sound recordings.
DEFAULT_TARGET_HZ = 2000

KAISER_BETA = 8.6
TAPS_PER_PHASE = 64
MAX_RATIO_DENOMINATOR = 1000

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class AudioSignal:
    """Mono float signal with its sample rate in Hz."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise InvalidRate(f"sample rate must be positive, got {self.sample_rate_hz}")
        arr = np.asarray(self.samples, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz


@dataclass(frozen=True)
class WavMeta:
    channels: int
    bits_per_sample: int
    duration_s: float


def _iter_chunks(data: bytes, start: int):
    pos = start
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8 : pos + 8 + size]
        yield cid, body
        pos += 8 + size + (size & 1)


def decode_wav_bytes(data: bytes) -> tuple[AudioSignal, WavMeta]:
    """Decode an in-memory RIFF/WAVE buffer. See :func:`read_wav`."""
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise NotWav("missing RIFF/WAVE header")

    fmt = None
    payload = None
    for cid, body in _iter_chunks(data, 12):
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            payload = body
    if fmt is None or len(fmt) < 16:
        raise NotWav("missing or truncated fmt chunk")
    if payload is None:
        raise NotWav("missing data chunk")

    tag, channels, rate, _byte_rate, block_align, bits = struct.unpack_from("<HHIIHH", fmt)
    if tag == _WAVE_FORMAT_EXTENSIBLE and len(fmt) >= 26:
        # first two bytes of the sub-format GUID carry the real format tag
        tag = struct.unpack_from("<H", fmt, 24)[0]
    if tag != _WAVE_FORMAT_PCM:
        raise UnsupportedEncoding(f"format tag 0x{tag:04x} is not PCM")
    if bits != 16:
        raise UnsupportedEncoding(f"{bits}-bit PCM is not supported (16-bit only)")
    if channels < 1 or rate < 1:
        raise NotWav("invalid channel count or sample rate")

    frame_bytes = 2 * channels
    n_frames = len(payload) // frame_bytes
    if n_frames == 0:
        raise EmptyAudio("WAV contains no sample frames")

    raw = np.frombuffer(payload[: n_frames * frame_bytes], dtype="<i2").reshape(n_frames, channels)
    samples = raw.astype(np.float64) / QUANT_FACTOR
    if channels > 1:
        samples = samples.mean(axis=1)
    else:
        samples = samples[:, 0]

    sig = AudioSignal(samples, int(rate))
    return sig, WavMeta(channels=channels, bits_per_sample=bits, duration_s=n_frames / rate)


def read_wav(path) -> tuple[AudioSignal, WavMeta]:
    """Read a 16-bit PCM WAV file as a mono signal scaled by 1/32768.

    Multi-channel files are averaged to mono.

    Raises
    ------
    NotWav
        If the RIFF/WAVE structure is missing or malformed.
    UnsupportedEncoding
        For non-PCM data or bit depths other than 16.
    EmptyAudio
        If the data chunk holds no complete frame.
    """
    return decode_wav_bytes(Path(path).read_bytes())


def write_wav(path, sig: AudioSignal) -> None:
    """Write a mono signal as 16-bit PCM; values are clipped to [-1, 1)."""
    ints = np.clip(np.round(np.asarray(sig.samples) * QUANT_FACTOR), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(sig.sample_rate_hz))
        w.writeframes(ints.tobytes())


def rate_ratio(source_hz: int, target_hz: int) -> tuple[int, int]:
    """Return reduced ``(up, down)`` with ``up/down ~= target/source``."""
    frac = Fraction(int(target_hz), int(source_hz))
    if frac.denominator > MAX_RATIO_DENOMINATOR:
        frac = frac.limit_denominator(MAX_RATIO_DENOMINATOR)
    return frac.numerator, frac.denominator


def antialias_taps(up: int, down: int) -> np.ndarray:
    """Kaiser-windowed sinc low-pass used by :func:`resample`.

    The filter runs at ``up`` times the input rate. Its length is
    ``64 * max(up, down) + 1`` and the cutoff sits half a transition band
    below the narrower Nyquist so the stopband starts at that Nyquist.
    Unit DC gain (scipy applies the ``up`` gain itself).
    """
    r = max(up, down)
    numtaps = TAPS_PER_PHASE * r + 1
    atten = KAISER_BETA / 0.1102 + 8.7
    width = (atten - 7.95) / (2.285 * (numtaps - 1) * math.pi)
    cutoff = 1.0 / r - width / 2.0
    return signal.firwin(numtaps, cutoff, window=("kaiser", KAISER_BETA))


def resample(sig: AudioSignal, target_hz: int) -> AudioSignal:
    """Resample to ``target_hz`` with a windowed-sinc polyphase filter.

    Identical rates return the samples unchanged. Output length is
    ``ceil(n * up / down)`` for the rational ratio ``up/down``.
    """
    if target_hz is None or int(target_hz) <= 0:
        raise InvalidRate(f"target rate must be positive, got {target_hz}")
    target_hz = int(target_hz)
    if target_hz == sig.sample_rate_hz:
        return AudioSignal(np.array(sig.samples, copy=True), target_hz)
    up, down = rate_ratio(sig.sample_rate_hz, target_hz)
    out = signal.resample_poly(sig.samples, up, down, window=antialias_taps(up, down))
    return AudioSignal(out, target_hz)
