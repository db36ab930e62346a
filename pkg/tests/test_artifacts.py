import numpy as np
import pytest

from neurofuse import artifacts, dsp, phantom
from neurofuse.datamodel import EegRecording, EventMarkers, Marker, MarkerKind
from neurofuse.errors import FlatSignal, IrregularTriggers, NoMarkers, SignalTooShort, TooFewEpochs

from conftest import volume_markers

RATE = 500.0


def periodic_recording(n_epochs=40, period=300, n_channels=3, seed=0, noise=0.0):
    gen = np.random.default_rng(seed)
    shape = gen.normal(size=(n_channels, period)) * 100
    data = np.tile(shape, n_epochs)
    data = data + noise * gen.normal(size=data.shape)
    labels = tuple(f"C{i}" for i in range(n_channels))
    return EegRecording(data, RATE, labels, volume_markers(np.arange(n_epochs) * period)), shape


def rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


class TestAas:
    def test_periodic_artifact_removed(self):
        rec, _ = periodic_recording()
        res = artifacts.aas_correct(rec, window_epochs=15)
        assert rms(res.cleaned.data) < 1e-9 * rms(rec.data)
        assert res.residual_rms.max() < 1e-9 * rms(rec.data)

    def test_additivity(self):
        rec, _ = periodic_recording(noise=5.0, seed=3)
        res = artifacts.aas_correct(rec)
        recon = res.cleaned.data + res.artifact
        assert np.max(np.abs(recon - rec.data)) <= 1e-9 * np.max(np.abs(rec.data))

    def test_idempotent_noiseless(self):
        rec, _ = periodic_recording()
        once = artifacts.aas_correct(rec).cleaned
        twice = artifacts.aas_correct(once).cleaned
        assert rms(twice.data - once.data) < 1e-9 * rms(rec.data)

    def test_template_excludes_current_epoch(self):
        # one epoch carries an extra spike; only that epoch keeps it
        rec, _ = periodic_recording(n_epochs=20)
        data = rec.data.copy()
        data[0, 10 * 300 + 50] += 1000.0
        res = artifacts.aas_correct(rec.with_data(data), window_epochs=15)
        assert res.cleaned.data[0, 10 * 300 + 50] == pytest.approx(1000.0, rel=1e-9)

    def test_samples_outside_epochs_untouched(self):
        rec, _ = periodic_recording(n_epochs=20)
        pad = np.random.default_rng(1).normal(size=(3, 100))
        data = np.concatenate([pad, rec.data, pad[:, :50]], axis=1)
        marks = volume_markers(100 + np.arange(20) * 300)
        wide = EegRecording(data, RATE, rec.channel_labels, marks)
        res = artifacts.aas_correct(wide)
        np.testing.assert_array_equal(res.cleaned.data[:, :100], pad)
        np.testing.assert_array_equal(res.cleaned.data[:, -50:], pad[:, :50])

    def test_markers_unchanged(self):
        rec, _ = periodic_recording()
        rec = rec.replace(markers=EventMarkers(tuple(rec.markers) + (Marker(7, MarkerKind.STIMULUS_ON, "S  1"),)))
        assert artifacts.aas_correct(rec).cleaned.markers == rec.markers

    def test_one_sample_jitter_tolerated(self):
        rec, _ = periodic_recording()
        s = np.arange(40) * 300
        s[5] += 1
        artifacts.aas_correct(rec.replace(markers=volume_markers(s)))

    def test_three_sample_jitter(self):
        rec, _ = periodic_recording()
        s = np.arange(40) * 300
        s[5] += 3
        with pytest.raises(IrregularTriggers):
            artifacts.aas_correct(rec.replace(markers=volume_markers(s)))

    def test_too_few_epochs(self):
        rec, _ = periodic_recording(n_epochs=10)
        with pytest.raises(TooFewEpochs):
            artifacts.aas_correct(rec, window_epochs=15)

    def test_no_triggers(self):
        rec, _ = periodic_recording()
        with pytest.raises(NoMarkers):
            artifacts.aas_correct(rec.replace(markers=EventMarkers(())))

    def test_slice_alignment(self):
        rec, _ = periodic_recording()
        marks = EventMarkers.from_samples(np.arange(40) * 300, MarkerKind.SLICE_TRIGGER, "Slice")
        res = artifacts.aas_correct(rec.replace(markers=marks), MarkerKind.SLICE_TRIGGER)
        assert rms(res.cleaned.data) < 1e-9 * rms(rec.data)

    def test_phantom_gradient_reduction(self, default_phantom, cleaned_chain):
        # power at slice harmonics: raw GA vs what is left after AAS
        truth = default_phantom.truth
        clean_plus_bcg = truth.clean + truth.bcg
        ga = cleaned_chain["ga"].cleaned.data
        eeg = [i for i, c in enumerate(default_phantom.raw.channel_labels) if c != "ECG"]
        before = dsp.welch_psd(truth.ga[eeg], rate_hz=RATE)
        after = dsp.welch_psd(ga[eeg] - clean_plus_bcg[eeg], rate_hz=RATE)
        f0 = default_phantom.config.slice_hz
        for k in range(1, 6):
            band = (k * f0 - 0.5, k * f0 + 0.5)
            ratio = dsp.band_power(after, band).sum() / dsp.band_power(before, band).sum()
            assert 10 * np.log10(ratio) <= -30

    def test_estimator(self, default_phantom):
        est = artifacts.GradientArtifactCorrector().fit(default_phantom.raw)
        assert est.epoch_length_ == 1500
        out = est.transform(default_phantom.raw)
        assert out.equals(artifacts.aas_correct(default_phantom.raw).cleaned)


@pytest.fixture(scope="module")
def ecg60():
    p = phantom.gen_phantom(duration_s=60.0, heart_bpm=60.0, heart_variability=0.0, seed=3)
    return p.truth.clean[p.raw.channel_labels.index("ECG")], p.truth.r_peaks


class TestRPeaks:
    def test_count_and_interval(self, ecg60):
        ecg, _ = ecg60
        peaks = artifacts.detect_r_peaks(ecg, RATE).samples()
        assert abs(len(peaks) - 60) <= 1
        assert np.mean(np.diff(peaks)) / RATE == pytest.approx(1.0, abs=0.02)

    def test_located_within_20ms(self, ecg60):
        ecg, truth = ecg60
        peaks = artifacts.detect_r_peaks(ecg, RATE).samples()
        nearest = np.min(np.abs(peaks[:, None] - truth[None, :]), axis=1)
        assert np.all(nearest <= 0.02 * RATE)

    def test_inverted_polarity(self, ecg60):
        ecg, _ = ecg60
        a = artifacts.detect_r_peaks(ecg, RATE).samples()
        b = artifacts.detect_r_peaks(-ecg, RATE).samples()
        assert len(a) == len(b)
        assert np.max(np.abs(a - b)) <= 1

    def test_refractory(self, default_phantom):
        peaks = artifacts.detect_r_peaks(default_phantom.ecg, RATE).samples()
        assert np.min(np.diff(peaks)) >= 0.25 * RATE

    def test_on_gradient_cleaned_ecg(self, default_phantom, cleaned_chain):
        got = cleaned_chain["r_peaks"].samples()
        truth = default_phantom.truth.r_peaks
        assert abs(len(got) - len(truth)) <= 1
        nearest = np.min(np.abs(got[:, None] - truth[None, :]), axis=1)
        assert np.all(nearest <= 0.02 * RATE)

    def test_count_scales_with_duration(self, ecg60):
        ecg, _ = ecg60
        half = len(artifacts.detect_r_peaks(ecg[: ecg.size // 2], RATE))
        full = len(artifacts.detect_r_peaks(ecg, RATE))
        assert abs(full - 2 * half) <= 2

    def test_flat(self):
        with pytest.raises(FlatSignal):
            artifacts.detect_r_peaks(np.zeros(int(20 * RATE)), RATE)

    def test_short(self):
        with pytest.raises(SignalTooShort):
            artifacts.detect_r_peaks(np.ones(int(5 * RATE)), RATE)


@pytest.fixture(scope="module")
def scanner_off():
    p = phantom.gen_phantom(seed=11)
    rec = phantom.emit_condition(p, "ScannerOff")
    peaks = artifacts.detect_r_peaks(rec.channel("ECG"), RATE)
    return p, rec, peaks


class TestBcg:
    def test_residual_within_20_percent(self, scanner_off):
        p, rec, peaks = scanner_off
        res = artifacts.bcg_correct(rec, peaks)
        eeg = [i for i, c in enumerate(rec.channel_labels) if c != "ECG"]
        resid = res.cleaned.data[eeg] - p.truth.clean[eeg]
        assert rms(resid) <= 0.20 * rms(p.truth.bcg[eeg])

    def test_alpha_power_preserved(self, scanner_off):
        p, rec, peaks = scanner_off
        res = artifacts.bcg_correct(rec, peaks)
        eeg = [i for i, c in enumerate(rec.channel_labels) if c != "ECG"]
        a = dsp.band_power(dsp.welch_psd(res.cleaned.data[eeg], rate_hz=RATE), (8, 13))
        b = dsp.band_power(dsp.welch_psd(p.truth.clean[eeg], rate_hz=RATE), (8, 13))
        assert np.max(np.abs(10 * np.log10(a / b))) < 1.0

    def test_zero_bcg_perturbation(self):
        # the template of pure EEG averages toward zero: its power is ~1/window of the EEG power
        p = phantom.gen_phantom(seed=5, bcg_amplitude_uv=0.0)
        rec = phantom.emit_condition(p, "ScannerOff")
        peaks = artifacts.detect_r_peaks(rec.channel("ECG"), RATE)
        res = artifacts.bcg_correct(rec, peaks, window_epochs=21)
        eeg = [i for i, c in enumerate(rec.channel_labels) if c != "ECG"]
        change = res.cleaned.data[eeg] - rec.data[eeg]
        assert rms(change) ** 2 <= 0.05 * rms(rec.data[eeg]) ** 2

    def test_identical_beats(self):
        period, n_beats = 450, 60
        beat = np.zeros(period)
        beat[100:200] = 50 * np.hanning(100)
        data = np.tile(beat, n_beats)[None].repeat(2, axis=0)
        rec = EegRecording(data, RATE, ("A", "B"))
        r = np.arange(n_beats) * period + 20
        res = artifacts.bcg_correct(rec, r, delay_s=0.2, window_epochs=21)
        covered = slice(2 * period, (n_beats - 2) * period)
        assert rms(res.cleaned.data[:, covered]) < 1e-9 * rms(data)

    def test_additivity(self, scanner_off):
        _, rec, peaks = scanner_off
        res = artifacts.bcg_correct(rec, peaks)
        recon = res.cleaned.data + res.artifact
        assert np.max(np.abs(recon - rec.data)) <= 1e-9 * np.max(np.abs(rec.data))

    def test_ecg_untouched_and_markers_kept(self, scanner_off):
        _, rec, peaks = scanner_off
        res = artifacts.bcg_correct(rec, peaks)
        np.testing.assert_array_equal(res.cleaned.channel("ECG"), rec.channel("ECG"))
        assert res.cleaned.markers == rec.markers

    def test_no_double_subtraction_at_short_rr(self):
        # RR alternates short/long so windows overlap; a sample is subtracted at most once
        r = np.cumsum(np.tile([200, 400], 30))
        data = np.random.default_rng(0).normal(size=(1, int(r[-1] + 1000)))
        rec = EegRecording(data, RATE, ("A",))
        res = artifacts.bcg_correct(rec, r, window_epochs=21)
        assert res.residual_rms.size > 0
        np.testing.assert_allclose(res.cleaned.data + res.artifact, data, atol=1e-12)

    def test_too_few_peaks(self, scanner_off):
        _, rec, _ = scanner_off
        with pytest.raises(TooFewEpochs):
            artifacts.bcg_correct(rec, np.arange(10) * 500 + 500)

    def test_estimator(self, scanner_off):
        _, rec, peaks = scanner_off
        est = artifacts.PulseArtifactCorrector().fit(rec)
        assert est.r_peaks_ == peaks
        assert est.transform(rec).equals(artifacts.bcg_correct(rec, peaks).cleaned)
