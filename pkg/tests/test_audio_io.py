import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import wav_bytes
from murmurkit.audio_io import (
    AudioSignal,
    antialias_taps,
    decode_wav_bytes,
    rate_ratio,
    read_wav,
    resample,
    write_wav,
)
from murmurkit.errors import EmptyAudio, InvalidRate, NotWav, UnsupportedEncoding


class TestDecode:
    def test_scaling_by_32768(self):
        sig, meta = decode_wav_bytes(wav_bytes([0, 16384, -32768, 32767], rate=4000))
        np.testing.assert_array_equal(sig.samples, [0.0, 0.5, -1.0, 32767 / 32768])
        assert sig.sample_rate_hz == 4000
        assert meta.channels == 1 and meta.bits_per_sample == 16
        assert meta.duration_s == pytest.approx(4 / 4000)

    def test_stereo_is_averaged(self):
        sig, meta = decode_wav_bytes(wav_bytes([100, 300, -200, 0], channels=2))
        np.testing.assert_allclose(sig.samples, [200 / 32768, -100 / 32768])
        assert meta.channels == 2

    def test_not_riff(self):
        with pytest.raises(NotWav):
            decode_wav_bytes(b"OggS" + bytes(40))

    def test_missing_data_chunk(self):
        raw = wav_bytes([1, 2])
        with pytest.raises(NotWav):
            decode_wav_bytes(raw[: raw.index(b"data")])

    def test_eight_bit_rejected(self):
        with pytest.raises(UnsupportedEncoding):
            decode_wav_bytes(wav_bytes([128, 130], bits=8))

    def test_float_format_rejected(self):
        with pytest.raises(UnsupportedEncoding):
            decode_wav_bytes(wav_bytes([1, 2], tag=3))

    def test_empty_data(self):
        with pytest.raises(EmptyAudio):
            decode_wav_bytes(wav_bytes([]))

    @given(st.lists(st.integers(-32768, 32767), min_size=1, max_size=200))
    @settings(max_examples=50, deadline=None)
    def test_values_stay_in_unit_range(self, frames):
        sig, _ = decode_wav_bytes(wav_bytes(frames))
        assert np.all(sig.samples >= -1.0) and np.all(sig.samples < 1.0)
        np.testing.assert_array_equal(np.round(sig.samples * 32768), frames)


class TestReadWrite:
    def test_roundtrip_is_exact_for_quantized_values(self, tmp_path, rng):
        x = rng.integers(-32768, 32767, 500) / 32768.0
        write_wav(tmp_path / "a.wav", AudioSignal(x, 2000))
        sig, meta = read_wav(tmp_path / "a.wav")
        np.testing.assert_array_equal(sig.samples, x)
        assert sig.sample_rate_hz == 2000

    def test_signal_is_read_only(self):
        sig = AudioSignal(np.zeros(4), 10)
        with pytest.raises(ValueError):
            sig.samples[0] = 1.0

    def test_bad_rate(self):
        with pytest.raises(InvalidRate):
            AudioSignal(np.zeros(3), 0)


class TestResample:
    def test_ratio_is_reduced(self):
        assert rate_ratio(4000, 2000) == (1, 2)
        assert rate_ratio(44100, 2000) == (20, 441)
        assert rate_ratio(2000, 2000) == (1, 1)

    def test_same_rate_returns_copy(self, rng):
        sig = AudioSignal(rng.standard_normal(10), 2000)
        out = resample(sig, 2000)
        np.testing.assert_array_equal(out.samples, sig.samples)
        assert out.samples is not sig.samples

    @pytest.mark.parametrize("target", [0, -5])
    def test_non_positive_target(self, target):
        with pytest.raises(InvalidRate):
            resample(AudioSignal(np.zeros(5), 100), target)

    @pytest.mark.parametrize("src,dst", [(4000, 2000), (44100, 2000), (1000, 2000), (8000, 2000)])
    def test_length(self, src, dst):
        n = 4321
        up, down = rate_ratio(src, dst)
        out = resample(AudioSignal(np.zeros(n), src), dst)
        assert len(out) == -(-n * up // down)
        assert out.sample_rate_hz == dst

    def test_taps_have_unit_dc_gain(self):
        for up, down in [(1, 2), (20, 441), (2, 1)]:
            h = antialias_taps(up, down)
            assert h.size == 64 * max(up, down) + 1
            assert np.sum(h) == pytest.approx(1.0, abs=1e-9)

    def test_passband_tone_preserved(self):
        fs, f = 4000, 100.0
        t = np.arange(4 * fs) / fs
        out = resample(AudioSignal(np.sin(2 * np.pi * f * t), fs), 2000)
        mid = out.samples[1000:-1000]
        t2 = np.arange(len(out)) / 2000
        ref = np.sin(2 * np.pi * f * t2)[1000:-1000]
        np.testing.assert_allclose(mid, ref, atol=2e-3)

    def test_tone_above_new_nyquist_is_suppressed(self):
        fs = 4000
        t = np.arange(4 * fs) / fs
        out = resample(AudioSignal(np.sin(2 * np.pi * 1500.0 * t), fs), 2000)
        # 1500 Hz would alias onto 500 Hz
        assert np.max(np.abs(out.samples[1000:-1000])) < 1e-3
