import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from murmurkit.audio_io import AudioSignal
from murmurkit.errors import ConfigError, DegenerateShape, EmptySegment, InvalidFrequency, InvalidHop
from murmurkit.scalogram import (
    MorletParams,
    Scalogram,
    ScaleGrid,
    cwt,
    default_hop,
    dilated_wavelet,
    load_scalogram,
    minmax_normalize,
    morlet_sample,
    save_scalogram,
    to_model_input,
    wavelet_kernel,
)
from oracles import cwt_direct, cwt_direct_loops, morlet, rel_err


class TestWavelet:
    @pytest.mark.parametrize("f", [20.0, 100.0, 500.0])
    def test_unit_energy(self, f):
        p = MorletParams()
        t = np.linspace(-10 * p.sigma(f), 10 * p.sigma(f), 200001)
        e = np.sum(np.abs(morlet_sample(t, f)) ** 2) * (t[1] - t[0])
        assert e == pytest.approx(1.0, rel=1e-6)

    def test_sigma_formula(self):
        assert MorletParams(6).sigma(100.0) == pytest.approx(6 / (2 * math.pi * 100))

    def test_matches_oracle(self):
        t = np.linspace(-0.05, 0.05, 101)
        np.testing.assert_allclose(morlet_sample(t, 80.0), morlet(t, 80.0), rtol=1e-13)

    def test_dilation_shifts_centre_frequency(self):
        # psi_{a,0} built from a 500 Hz mother with a = 5 oscillates at 100 Hz
        t = np.linspace(-0.1, 0.1, 4001)
        w = dilated_wavelet(t, 5.0, 0.0, 500.0)
        spec = np.abs(np.fft.rfft(w.real, 1 << 16))
        freqs = np.fft.rfftfreq(1 << 16, t[1] - t[0])
        assert freqs[np.argmax(spec)] == pytest.approx(100.0, abs=1.0)

    def test_dilation_energy_preserved(self):
        t = np.linspace(-0.5, 0.5, 200001)
        for a in (1.0, 2.5, 10.0):
            w = dilated_wavelet(t, a, 0.0, 500.0)
            assert np.sum(np.abs(w) ** 2) * (t[1] - t[0]) == pytest.approx(1.0, rel=1e-6)

    def test_bad_frequency(self):
        with pytest.raises(InvalidFrequency):
            morlet_sample(0.0, 0.0)


class TestGrid:
    def test_log_spaced(self):
        g = ScaleGrid.log_spaced()
        assert len(g) == 64
        assert g.center_freqs_hz[0] == pytest.approx(500.0)
        assert g.center_freqs_hz[-1] == pytest.approx(20.0)
        ratios = g.center_freqs_hz[:-1] / g.center_freqs_hz[1:]
        np.testing.assert_allclose(ratios, ratios[0])
        np.testing.assert_allclose(g.scales, 500.0 / g.center_freqs_hz)

    def test_must_descend(self):
        with pytest.raises(InvalidFrequency):
            ScaleGrid(np.array([20.0, 500.0]))

    def test_above_nyquist(self):
        with pytest.raises(InvalidFrequency):
            cwt(AudioSignal(np.ones(100), 800), ScaleGrid.log_spaced())

    def test_errors_are_config_errors(self):
        assert issubclass(InvalidFrequency, ConfigError)
        assert issubclass(InvalidHop, ConfigError)

    def test_kernel_support(self):
        g = ScaleGrid.log_spaced()
        k = wavelet_kernel(g.scales[-1], g, 2000)
        sigma = MorletParams().sigma(20.0)
        assert k.size == 2 * math.ceil(4 * sigma * 2000) + 1


class TestCWT:
    @pytest.mark.parametrize("n,hop", [(300, 1), (1024, 5), (2048, 8)])
    def test_matches_direct_convolution(self, rng, n, hop):
        x = rng.standard_normal(n)
        g = ScaleGrid.log_spaced(20, 500, 12)
        fast = cwt(AudioSignal(x, 2000), g, hop=hop).values
        slow = cwt_direct(x, 2000, g.center_freqs_hz, hop)
        assert 2 * rel_err(fast, slow) < 1e-9

    def test_oracle_agrees_with_loop_form(self, rng):
        x = rng.standard_normal(500)
        freqs = ScaleGrid.log_spaced(20, 500, 6).center_freqs_hz
        assert rel_err(cwt_direct(x, 2000, freqs, 3), cwt_direct_loops(x, 2000, freqs, 3)) < 1e-12

    def test_shape(self):
        sc = cwt(AudioSignal(np.zeros(10000), 2000), ScaleGrid.log_spaced())
        assert sc.hop == default_hop(10000) == 39
        assert sc.values.shape == (64, 257)

    @pytest.mark.parametrize("f", [25.0, 60.0, 100.0, 333.0, 450.0])
    def test_tone_localization(self, f):
        fs = 2000
        t = np.arange(4 * fs) / fs
        g = ScaleGrid.log_spaced()
        sc = cwt(AudioSignal(np.sin(2 * np.pi * f * t), fs), g, hop=4).values
        energy = np.sum(sc[:, 400:-400] ** 2, axis=1)
        nearest = int(np.argmin(np.abs(np.log(g.center_freqs_hz / f))))
        assert abs(int(np.argmax(energy)) - nearest) <= 1

    @given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
    @settings(max_examples=25, deadline=None)
    def test_linearity(self, a, b, seed):
        r = np.random.default_rng(seed)
        x, y = r.standard_normal(512), r.standard_normal(512)
        g = ScaleGrid.log_spaced(20, 500, 8)
        lhs = cwt(AudioSignal(a * x + b * y, 2000), g, hop=3).values
        rhs = a * cwt(AudioSignal(x, 2000), g, hop=3).values + b * cwt(AudioSignal(y, 2000), g, hop=3).values
        np.testing.assert_allclose(lhs, rhs, atol=1e-10 * (1 + abs(a) + abs(b)))

    def test_empty(self):
        with pytest.raises(EmptySegment):
            cwt(AudioSignal(np.zeros(0), 2000), ScaleGrid.log_spaced())

    @pytest.mark.parametrize("hop", [0, -1, 1.5])
    def test_bad_hop(self, hop):
        with pytest.raises(InvalidHop):
            cwt(AudioSignal(np.zeros(10), 2000), ScaleGrid.log_spaced(), hop=hop)


class TestModelInput:
    def test_range_and_shape(self, rng):
        out = to_model_input(rng.standard_normal((64, 257)))
        assert out.shape == (64, 64)
        assert out.min() == -1.0 and out.max() == 1.0

    def test_constant_maps_to_zero(self):
        np.testing.assert_array_equal(to_model_input(np.full((64, 257), 3.0)), np.zeros((64, 64)))

    def test_bin_mean_pooling(self):
        m = np.arange(8, dtype=float)[None, :].repeat(2, axis=0)
        # width 8 -> 4: pairs averaged, then min-max onto [-1, 1]
        out = to_model_input(m, (2, 4))
        np.testing.assert_allclose(out[0], [-1, -1 / 3, 1 / 3, 1])

    def test_upsampling_interpolates(self):
        m = np.array([[0.0, 1.0]])
        out = to_model_input(m, (1, 4))
        np.testing.assert_allclose(out[0], [-1.0, -0.5, 0.5, 1.0])

    @given(st.integers(1, 80), st.integers(1, 300), st.integers(0, 2**31))
    @settings(max_examples=40, deadline=None)
    def test_always_bounded(self, s, t, seed):
        m = np.random.default_rng(seed).standard_normal((s, t))
        out = to_model_input(m, (min(64, 4 * s), min(64, 4 * t)))
        assert np.all(out >= -1.0) and np.all(out <= 1.0)

    def test_normalize_is_affine(self, rng):
        m = rng.standard_normal((5, 7))
        out = minmax_normalize(m)
        np.testing.assert_allclose(out, 2 * (m - m.min()) / (m.max() - m.min()) - 1)

    @pytest.mark.parametrize("shape", [(0, 5), (5,), (3, 0)])
    def test_degenerate(self, shape):
        with pytest.raises(DegenerateShape):
            to_model_input(np.zeros(shape))

    def test_nonfinite(self):
        m = np.zeros((4, 4))
        m[1, 1] = np.nan
        with pytest.raises(DegenerateShape):
            to_model_input(m, (4, 4))

    def test_dump_roundtrip(self, tmp_path, rng):
        m = rng.standard_normal((64, 257))
        sc = Scalogram(m, ScaleGrid.log_spaced(), 39)
        save_scalogram(tmp_path / "s.bin", sc)
        np.testing.assert_array_equal(load_scalogram(tmp_path / "s.bin"), m.astype(np.float32))
