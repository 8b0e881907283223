"""Synthetic phonocardiograms for tests, demos and the bundled mini-corpus.

A beat is S1 (low tone burst) followed by S2 a systole later. The murmur
class adds band-limited noise filling systole. Everything is driven by an
explicit seed.
"""

from __future__ import annotations

import numpy as np
from scipy import signal

from .audio_io import AudioSignal

NORMAL = "normal"
MURMUR = "murmur"


def _burst(fs, freq, dur, rng):
    t = np.arange(int(dur * fs)) / fs
    env = np.sin(np.pi * t / dur) ** 2
    return env * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))


def synth_pcg(duration_s: float = 5.0, fs: int = 2000, murmur: bool = False, seed: int = 0,
              heart_rate_bpm: float | None = None, noise: float = 0.02,
              spikes: int = 0, murmur_level: float = 0.5) -> AudioSignal:
    """One synthetic recording; ``spikes`` adds that many large outlier clicks."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * fs))
    x = noise * rng.standard_normal(n)
    hr = heart_rate_bpm if heart_rate_bpm is not None else rng.uniform(60, 90)
    period = 60.0 / hr
    systole = 0.3 * period
    if murmur:
        sos = signal.butter(4, [150, 400], btype="band", fs=fs, output="sos")
        mnoise = signal.sosfilt(sos, rng.standard_normal(n))
        mnoise /= np.std(mnoise) + 1e-12
    onset = rng.uniform(0, period)
    while onset < duration_s:
        for start, f, dur, amp in ((onset, rng.uniform(40, 60), 0.06, 0.5),
                                   (onset + systole, rng.uniform(55, 75), 0.05, 0.35)):
            b = _burst(fs, f, dur, rng) * amp
            i = int(start * fs)
            if i < n:
                seg = b[: n - i]
                x[i : i + seg.size] += seg
        if murmur:
            i0, i1 = int((onset + 0.07) * fs), int((onset + systole - 0.01) * fs)
            i0, i1 = min(i0, n), min(max(i1, i0), n)
            win = np.hanning(max(i1 - i0, 1))[: i1 - i0]
            x[i0:i1] += murmur_level * win * mnoise[i0:i1]
        onset += period
    for _ in range(spikes):
        i = rng.integers(0, n)
        x[i] += rng.uniform(0.5, 0.9)
    x = np.clip(x, -0.99, 0.99)
    return AudioSignal(x, fs)


def toy_dataset(n: int = 200, seed: int = 0, cfg=None):
    """``n`` single-segment recordings (half murmur) run through the feature chain.

    Returns a :class:`~murmurkit.dataset.LabeledDataset` with classes
    ``("murmur", "normal")``.
    """
    from .dataset import LabeledDataset
    from .pipeline import PipelineConfig, signal_features

    cfg = cfg or PipelineConfig()
    dur = cfg.segment.segment_s
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2  # 0 murmur, 1 normal
    seeds = rng.integers(0, 2**31 - 1, size=n)
    rows = [
        signal_features(synth_pcg(dur, cfg.target_hz, murmur=lab == 0, seed=int(s)), cfg)[0]
        for lab, s in zip(labels, seeds)
    ]
    return LabeledDataset(np.stack(rows), labels, (MURMUR, NORMAL))
