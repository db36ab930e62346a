import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal

from neurofuse import dsp
from neurofuse.datamodel import EegRecording
from neurofuse.errors import CoverageTooShort, DataError, InvalidBand, SignalTooShort

RATE = 500.0


def analytic_bandpass_db(freqs, low, high, order, rate):
    """Bilinear-transformed Butterworth band-pass, closed form.

    Prewarped edges W1, W2; the low-pass prototype of order ``order / 2`` is
    mapped through x = (W^2 - W1 W2) / (W (W2 - W1)).
    """
    w = np.tan(np.pi * np.asarray(freqs, float) / rate)
    w1, w2 = math.tan(math.pi * low / rate), math.tan(math.pi * high / rate)
    x = (w ** 2 - w1 * w2) / (w * (w2 - w1))
    return -10.0 * np.log10(1.0 + x ** order)


@pytest.fixture(scope="module")
def alpha_filter():
    return dsp.design_bandpass(11, 13, 20, RATE)


def interior(x):
    return x[dsp.transient_mask(len(x))]


class TestDesign:
    def test_sections_and_stability(self, alpha_filter):
        assert alpha_filter.sections.shape == (10, 6)
        np.testing.assert_array_equal(alpha_filter.sections[:, 3], 1.0)
        assert alpha_filter.is_stable
        assert np.all(np.abs(alpha_filter.poles) < 1.0)

    def test_magnitude_matches_closed_form(self, alpha_filter):
        probes = np.linspace(1.0, 249.0, 50)
        got = 20 * np.log10(alpha_filter.magnitude(probes))
        want = analytic_bandpass_db(probes, 11, 13, 20, RATE)
        # compare where the response is above numerical noise
        keep = want > -250
        np.testing.assert_allclose(got[keep], want[keep], atol=0.1)

    def test_centre_gain(self, alpha_filter):
        assert abs(20 * np.log10(alpha_filter.magnitude([12.0])[0])) < 0.1

    def test_stopband(self, alpha_filter):
        db = 20 * np.log10(alpha_filter.magnitude([8.0, 16.0]))
        assert np.all(db < -40)
        assert np.all(analytic_bandpass_db([8.0, 16.0], 11, 13, 20, RATE) < -40)

    @pytest.mark.parametrize("band,order", [((11, 250), 20), ((13, 11), 20), ((0, 5), 4), ((1, 5), 3), ((1, 5), 0)])
    def test_invalid(self, band, order):
        with pytest.raises(InvalidBand):
            dsp.design_bandpass(band[0], band[1], order, RATE)


class TestZeroPhase:
    t = np.arange(int(40 * RATE)) / RATE

    def test_passband_tone(self, alpha_filter):
        x = np.sin(2 * np.pi * 12 * self.t)
        y = dsp.filt_zero_phase(x, alpha_filter)
        gain = alpha_filter.magnitude([12.0])[0] ** 2
        np.testing.assert_allclose(interior(y), gain * interior(x), atol=0.02)

    def test_no_phase_shift(self, alpha_filter):
        x = np.sin(2 * np.pi * 12 * self.t)
        y = dsp.filt_zero_phase(x, alpha_filter)
        m = dsp.transient_mask(len(x))
        z = signal.hilbert(x)[m], signal.hilbert(y)[m]
        phase = np.degrees(np.angle(np.mean(z[1] * np.conj(z[0]))))
        assert abs(phase) < 1.0

    def test_stopband_tone(self, alpha_filter):
        x = np.sin(2 * np.pi * 50 * self.t)
        y = dsp.filt_zero_phase(x, alpha_filter)
        assert np.sqrt(np.mean(interior(y) ** 2)) < 0.01 * np.sqrt(np.mean(x ** 2))

    def test_zero(self, alpha_filter):
        assert not np.any(dsp.filt_zero_phase(np.zeros(len(self.t)), alpha_filter))

    def test_multichannel_axis(self, alpha_filter, rng):
        x = rng.normal(size=(3, len(self.t)))
        y = dsp.filt_zero_phase(x, alpha_filter)
        np.testing.assert_allclose(y[1], dsp.filt_zero_phase(x[1], alpha_filter), atol=1e-12)

    def test_too_short(self, alpha_filter):
        with pytest.raises(SignalTooShort):
            dsp.filt_zero_phase(np.zeros(100), alpha_filter)


class TestHighpass:
    tr = 3.0
    t = np.arange(200) * 3.0

    def test_constant(self):
        y = dsp.highpass_series(np.full(200, 7.5), 0.005, 1 / self.tr)
        assert np.max(np.abs(y)) < 1e-9

    def test_mean_removed(self, rng):
        x = rng.normal(3.0, 1.0, 200)
        y = dsp.highpass_series(x, 0.005, 1 / self.tr)
        assert abs(y.mean()) < 1e-6 * np.sqrt(np.mean(x ** 2))

    def test_slow_drift_attenuated(self):
        x = np.sin(2 * np.pi * 0.001 * self.t)
        y = dsp.highpass_series(x, 0.005, 1 / self.tr)
        amp_in = np.ptp(x) / 2
        amp_out = np.ptp(y) / 2
        assert 20 * np.log10(amp_out / amp_in) < -6

    def test_linear_drift_attenuated(self):
        y = dsp.highpass_series(np.linspace(0, 1, 200), 0.005, 1 / self.tr)
        assert np.std(y) < 0.1 * np.std(np.linspace(0, 1, 200))

    def test_passband(self):
        x = np.sin(2 * np.pi * 0.1 * self.t + 0.3)
        y = dsp.highpass_series(x, 0.005, 1 / self.tr)
        np.testing.assert_allclose(y, x, atol=0.05)

    def test_axis(self, rng):
        x = rng.normal(size=(4, 5, 200))
        y = dsp.highpass_series(x, 0.005, 1 / self.tr, axis=-1)
        np.testing.assert_allclose(y[2, 3], dsp.highpass_series(x[2, 3], 0.005, 1 / self.tr), atol=1e-12)

    def test_invalid(self):
        with pytest.raises(InvalidBand):
            dsp.highpass_series(np.zeros(10), 0.5, 1 / self.tr)

    def test_dct_basis_orthonormal(self):
        b = dsp.dct_basis(200, 3.0, 0.005)
        assert b.shape == (200, 6)
        np.testing.assert_allclose(b.T @ b, np.eye(6), atol=1e-12)


class TestEnvelope:
    t = np.arange(int(10 * RATE)) / RATE

    def test_pure_tone(self):
        env = dsp.analytic_envelope(3.0 * np.sin(2 * np.pi * 12 * self.t))
        np.testing.assert_allclose(interior(env), 3.0, rtol=0.01)

    def test_zero(self):
        assert not np.any(dsp.analytic_envelope(np.zeros(64)))

    def test_am_tone(self):
        mod = 1 + 0.5 * np.sin(2 * np.pi * 0.5 * self.t)
        env = dsp.analytic_envelope(mod * np.sin(2 * np.pi * 12 * self.t))
        np.testing.assert_allclose(interior(env), interior(mod), rtol=0.02)

    def test_tone_plus_dc(self):
        # analytic signal of c + a sin(wt) is c - j a e^{jwt}; |.| = sqrt(c^2 + a^2 + 2ac sin wt)
        c, a = 0.5, 2.0
        w = 2 * np.pi * 12 * self.t
        env = dsp.analytic_envelope(c + a * np.sin(w))
        want = np.sqrt(c ** 2 + a ** 2 + 2 * a * c * np.sin(w))
        np.testing.assert_allclose(interior(env), interior(want), rtol=0.02)

    def test_matches_scipy_hilbert(self, rng):
        for n in (255, 256):
            x = rng.normal(size=n)
            np.testing.assert_allclose(dsp.analytic_envelope(x), np.abs(signal.hilbert(x)), atol=1e-12)

    def test_non_finite(self):
        with pytest.raises(DataError):
            dsp.analytic_envelope(np.array([0.0, np.nan, 1.0]))


class TestWelch:
    def test_parseval_white_noise(self, rng):
        x = rng.normal(size=(1, int(300 * RATE)))
        psd = dsp.welch_psd(x, rate_hz=RATE)
        total = np.sum(psd.power[0]) * psd.df
        assert abs(total - 1.0) < 0.05

    def test_tone_peak_bin(self):
        t = np.arange(int(60 * RATE)) / RATE
        psd = dsp.welch_psd(np.sin(2 * np.pi * 12 * t)[None], rate_hz=RATE)
        assert psd.freqs[np.argmax(psd.power[0])] == 12.0
        assert psd.df == 0.25

    def test_invariants(self, rng):
        psd = dsp.welch_psd(rng.normal(size=(2, 5000)), rate_hz=RATE)
        assert psd.freqs[0] == 0 and np.all(np.diff(psd.freqs) > 0)
        assert np.all(psd.power >= 0)
        assert psd.segment_length == 2000 and psd.overlap == 1000

    def test_independent_runs_agree(self):
        a = np.random.default_rng(1).normal(size=(1, int(300 * RATE)))
        b = np.random.default_rng(2).normal(size=(1, int(300 * RATE)))
        pa = dsp.welch_psd(a, rate_hz=RATE).power[0]
        pb = dsp.welch_psd(b, rate_hz=RATE).power[0]
        # each bin averages ~150 segments: relative sd ~ 0.1; no systematic offset
        assert abs(np.mean(pa / pb) - 1.0) < 0.02

    def test_recording_input(self, rng):
        rec = EegRecording(rng.normal(size=(2, 5000)), RATE, ("A", "B"))
        np.testing.assert_array_equal(dsp.welch_psd(rec).power, dsp.welch_psd(rec.data, rate_hz=RATE).power)

    def test_too_short(self):
        with pytest.raises(SignalTooShort):
            dsp.welch_psd(np.zeros((1, 2500)), rate_hz=RATE)

    def test_needs_rate(self):
        with pytest.raises(DataError):
            dsp.welch_psd(np.zeros((1, 5000)))


class TestBandPower:
    def test_tone_variance(self):
        t = np.arange(int(60 * RATE)) / RATE
        x = 2.0 * np.sin(2 * np.pi * 10 * t)
        psd = dsp.welch_psd(x[None], rate_hz=RATE)
        assert dsp.band_power(psd, (8, 13))[0] == pytest.approx(np.var(x), rel=0.02)

    def test_empty_band_is_floor(self, rng):
        t = np.arange(int(60 * RATE)) / RATE
        x = np.sin(2 * np.pi * 10 * t) + 0.01 * rng.normal(size=t.size)
        psd = dsp.welch_psd(x[None], rate_hz=RATE)
        # white floor of variance 1e-4 spread over 250 Hz
        assert dsp.band_power(psd, (30, 40))[0] == pytest.approx(1e-4 * 10 / 250, rel=0.2)

    def test_task_exceeds_rest(self, default_phantom):
        from neurofuse.datamodel import select_channels
        from neurofuse.fusion import task_rest_psd
        from neurofuse.phantom import emit_condition

        clean = select_channels(emit_condition(default_phantom, "Outside"), ["Oz"])
        task, rest = task_rest_psd(clean)
        assert dsp.band_power(task, (11.5, 12.5))[0] > dsp.band_power(rest, (11.5, 12.5))[0]

    @pytest.mark.parametrize("band", [(13, 8), (-1, 5), (200, 300), (10.0, 10.1)])
    def test_invalid(self, band, rng):
        psd = dsp.welch_psd(rng.normal(size=(1, 5000)), rate_hz=RATE)
        with pytest.raises(InvalidBand):
            dsp.band_power(psd, band)


class TestBinToTr:
    def test_constant(self):
        np.testing.assert_array_equal(dsp.bin_to_tr(np.full(4500, 2.0), RATE, 3.0, 3), [2.0, 2.0, 2.0])

    def test_samples_per_bin(self):
        env = np.zeros(4500)
        env[1499] = 1.0
        out = dsp.bin_to_tr(env, RATE, 3.0, 3)
        np.testing.assert_allclose(out, [1 / 1500, 0, 0])

    def test_ramp(self):
        n = 3000
        ramp = np.arange(n) / n
        np.testing.assert_allclose(dsp.bin_to_tr(ramp, RATE, 3.0, 2), [0.25, 0.75], atol=1 / n)

    def test_partial_last_bin(self):
        out = dsp.bin_to_tr(np.full(3000 + 750, 1.0), RATE, 3.0, 3)
        np.testing.assert_array_equal(out, [1.0, 1.0, 1.0])

    def test_coverage(self):
        with pytest.raises(CoverageTooShort):
            dsp.bin_to_tr(np.ones(3000 + 749), RATE, 3.0, 3)


class TestGaussianSmooth:
    def test_fwhm_zero_identity(self, rng):
        v = rng.normal(size=(5, 6, 7))
        out = dsp.gaussian_smooth_3d(v, 0.0, (3, 3, 3))
        np.testing.assert_array_equal(out, v)
        assert out is not v

    def test_delta_matches_sampled_gaussian(self):
        v = np.zeros((21, 21, 21))
        v[10, 10, 10] = 1.0
        out = dsp.gaussian_smooth_3d(v, 8.0, (4.0, 4.0, 4.0))
        sigma = 8.0 / (2 * math.sqrt(2 * math.log(2))) / 4.0
        x = np.arange(21) - 10
        g = np.exp(-0.5 * (x / sigma) ** 2)
        g /= g.sum()
        want = g[:, None, None] * g[None, :, None] * g[None, None, :]
        np.testing.assert_allclose(out, want, rtol=1e-6, atol=1e-6 * want.max())

    def test_constant(self):
        out = dsp.gaussian_smooth_3d(np.full((8, 9, 10), 4.25), 8.0, (3, 3, 3))
        np.testing.assert_allclose(out, 4.25, rtol=1e-12)

    def test_mean_preserved_interior(self, rng):
        v = np.zeros((40, 40, 40))
        v[15:25, 15:25, 15:25] = rng.normal(size=(10, 10, 10))
        out = dsp.gaussian_smooth_3d(v, 8.0, (3, 3, 3))
        assert out.mean() == pytest.approx(v.mean(), rel=1e-6)

    def test_anisotropic_voxels(self):
        v = np.zeros((41, 41, 41))
        v[20, 20, 20] = 1.0
        out = dsp.gaussian_smooth_3d(v, 12.0, (2.0, 3.0, 6.0))
        w = [np.sum((np.arange(41) - 20) ** 2 * out.sum(axis=tuple(j for j in range(3) if j != i)))
             for i in range(3)]
        sig = 12.0 / (2 * math.sqrt(2 * math.log(2)))
        np.testing.assert_allclose(np.sqrt(w), [sig / 2, sig / 3, sig / 6], rtol=0.02)

    def test_translation_commutes_on_interior(self, rng):
        v = np.zeros((40, 40, 40))
        v[14:20, 14:20, 14:20] = rng.normal(size=(6, 6, 6))
        a = dsp.gaussian_smooth_3d(np.roll(v, 3, axis=0), 8.0, (3, 3, 3))
        b = np.roll(dsp.gaussian_smooth_3d(v, 8.0, (3, 3, 3)), 3, axis=0)
        np.testing.assert_allclose(a[8:32, 8:32, 8:32], b[8:32, 8:32, 8:32], atol=1e-12)

    def test_time_axis_untouched(self, rng):
        v = rng.normal(size=(6, 6, 6, 3))
        out = dsp.gaussian_smooth_3d(v, 8.0, (3, 3, 3))
        np.testing.assert_allclose(out[..., 1], dsp.gaussian_smooth_3d(v[..., 1], 8.0, (3, 3, 3)), atol=1e-12)

    def test_negative_fwhm(self):
        with pytest.raises(DataError):
            dsp.gaussian_smooth_3d(np.zeros((2, 2, 2)), -1.0, (1, 1, 1))


def test_transient_mask():
    m = dsp.transient_mask(100)
    assert m.sum() == 90 and not m[:5].any() and not m[-5:].any()


@settings(max_examples=50, deadline=None)
@given(
    st.floats(1.0, 100.0),
    st.floats(0.5, 20.0),
    st.integers(1, 6),
)
def test_designs_are_stable(low, width, half_order):
    high = min(low + width, 240.0)
    f = dsp.design_bandpass(low, high, 2 * half_order, RATE)
    assert f.is_stable and f.sections.shape == (half_order, 6)
