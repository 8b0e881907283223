"""Regenerate the bundled synthetic mini-corpus (6 WAV files + manifest.csv)."""

from __future__ import annotations

import sys
import wave
from pathlib import Path

import numpy as np

from murmurkit.audio_io import AudioSignal, write_wav
from murmurkit.synth import synth_pcg

# name, label, seconds, rate, seed, stereo, spikes
FILES = (
    ("n01.wav", "normal", 12.0, 4000, 101, False, 0),
    ("n02.wav", "normal", 8.0, 2000, 102, True, 2),
    ("n03.wav", "normal", 15.0, 2000, 103, False, 0),
    ("n04.wav", "normal", 10.0, 4000, 104, False, 3),
    ("m01.wav", "murmur", 12.5, 4000, 201, False, 0),
    ("m02.wav", "murmur", 10.0, 2000, 202, False, 2),
)


def _write_stereo(path, sig: AudioSignal, seed: int) -> None:
    rng = np.random.default_rng(seed)
    right = sig.samples * 0.8 + 0.01 * rng.standard_normal(len(sig))
    frames = np.stack([sig.samples, right], axis=1)
    pcm = np.clip(np.round(frames * 32767), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(sig.sample_rate_hz)
        w.writeframes(pcm.tobytes())


def main(out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["path,label"]
    for name, label, dur, fs, seed, stereo, spikes in FILES:
        sig = synth_pcg(dur, fs, murmur=label == "murmur", seed=seed, spikes=spikes)
        if stereo:
            _write_stereo(out / name, sig, seed)
        else:
            write_wav(out / name, sig)
        rows.append(f"{name},{label}")
    (out / "manifest.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parents[1] / "src/murmurkit/data/minicorpus")
