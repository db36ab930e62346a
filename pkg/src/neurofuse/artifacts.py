"""Scanner artifact removal: gradient (AAS) and pulse (BCG) template subtraction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_picks, check_recording
from .datamodel import EegRecording, EventMarkers, MarkerKind
from .errors import FlatSignal, IrregularTriggers, NoMarkers, SignalTooShort, TooFewEpochs

__all__ = [
    "ArtifactTemplate",
    "CleanResult",
    "aas_correct",
    "detect_r_peaks",
    "bcg_correct",
    "GradientArtifactCorrector",
    "PulseArtifactCorrector",
]


@dataclass(frozen=True, eq=False)
class ArtifactTemplate:
    """Mean artifact over all usable epochs (for inspection and export)."""

    waveform: np.ndarray  # channels x template samples
    epoch_starts: np.ndarray
    alignment: MarkerKind
    lag_samples: int = 0


@dataclass(frozen=True, eq=False)
class CleanResult:
    cleaned: EegRecording
    artifact: np.ndarray
    residual_rms: np.ndarray  # per epoch
    template: ArtifactTemplate


def _window_bounds(i: int, n: int, width: int) -> tuple[int, int]:
    """Half-open range of ``width + 1`` epoch indices around ``i`` (clipped to [0, n))."""
    span = min(width + 1, n)
    a = min(max(i - width // 2, 0), n - span)
    return a, a + span


def _sliding_templates(epochs: np.ndarray, window: int) -> np.ndarray:
    """For each epoch, the mean of its ``window`` nearest neighbours (itself excluded)."""
    n = epochs.shape[0]
    out = np.empty_like(epochs)
    for i in range(n):
        a, b = _window_bounds(i, n, window)
        out[i] = (epochs[a:b].sum(axis=0) - epochs[i]) / (b - a - 1)
    return out


def _result(rec, picks, artifact, starts, owned_len, kind, lag) -> CleanResult:
    cleaned = rec.data - artifact
    rms = np.array([
        math.sqrt(float(np.mean(cleaned[picks, s : s + L] ** 2))) if L > 0 else 0.0
        for s, L in zip(starts, owned_len)
    ])
    return cleaned, rms


def aas_correct(
    rec: EegRecording,
    trigger_kind: MarkerKind = MarkerKind.VOLUME_TRIGGER,
    window_epochs: int = 15,
    picks=None,
    max_jitter: int = 1,
) -> CleanResult:
    """Average Artifact Subtraction locked to scanner triggers.

    Each trigger epoch (length = median inter-trigger interval) has the mean
    of its ``window_epochs`` nearest epochs subtracted. Samples outside every
    epoch pass through unchanged.
    """
    check_recording(rec)
    trig = np.unique(rec.markers.samples(trigger_kind))
    if trig.size == 0:
        raise NoMarkers(f"no {trigger_kind.value} markers for gradient correction")
    if trig.size < 2:
        raise TooFewEpochs("need at least two triggers to define an epoch length")
    gaps = np.diff(trig)
    length = int(np.median(gaps))
    if np.any(np.abs(gaps - length) > max_jitter):
        worst = int(np.abs(gaps - length).max())
        raise IrregularTriggers(f"trigger spacing deviates by {worst} samples (limit {max_jitter})")
    usable = trig[trig + length <= rec.n_samples]
    if usable.size < max(2, window_epochs):
        raise TooFewEpochs(f"{usable.size} complete epochs, need {window_epochs}")
    ch = check_picks(rec, picks)
    idx = usable[:, None] + np.arange(length)
    epochs = rec.data[ch][:, idx].transpose(1, 0, 2)
    templates = _sliding_templates(epochs, window_epochs)

    artifact = np.zeros_like(rec.data)
    owned = np.empty(usable.size, dtype=np.int64)
    for i, s in enumerate(usable):
        stop = s + length if i + 1 == usable.size else min(s + length, usable[i + 1])
        owned[i] = stop - s
        artifact[ch, s:stop] = templates[i][:, : stop - s]
    cleaned, rms = _result(rec, ch, artifact, usable, owned, trigger_kind, 0)
    mean_tpl = np.zeros((rec.n_channels, length))
    mean_tpl[ch] = epochs.mean(axis=0)
    return CleanResult(
        cleaned=rec.with_data(cleaned),
        artifact=artifact,
        residual_rms=rms,
        template=ArtifactTemplate(mean_tpl, usable, trigger_kind, 0),
    )


def detect_r_peaks(
    ecg,
    rate_hz: float,
    refractory_s: float = 0.25,
    threshold: float = 0.4,
) -> EventMarkers:
    """QRS detection: 5-15 Hz band-pass, derivative, squaring, 150 ms integration.

    Candidates must exceed ``threshold`` x the 95th percentile of the
    integrated signal over the surrounding 10 s block; each detection is then
    moved to the extremum of the band-passed ECG (polarity detected
    automatically).
    """
    x = np.asarray(ecg, dtype=float)
    if x.size < 10 * rate_hz:
        raise SignalTooShort(f"ECG of {x.size / rate_hz:.1f} s is shorter than 10 s")
    if not np.all(np.isfinite(x)) or x.var() < 1e-9:
        raise FlatSignal("ECG channel has (near) zero variance")
    sos = signal.butter(2, [5.0, 15.0], btype="bandpass", fs=rate_hz, output="sos")
    bp = signal.sosfiltfilt(sos, x - x.mean())
    polarity = 1.0 if np.percentile(bp, 99.9) >= -np.percentile(bp, 0.1) else -1.0
    d = np.gradient(bp) * rate_hz
    win = max(1, int(round(0.150 * rate_hz)))
    mwi = np.convolve(d * d, np.ones(win) / win, mode="same")

    block = int(round(10 * rate_hz))
    thr = np.empty_like(mwi)
    for a in range(0, mwi.size, block):
        b = min(mwi.size, a + block)
        ref = mwi[max(0, a - block // 2) : min(mwi.size, b + block // 2)]
        thr[a:b] = threshold * np.percentile(ref, 95)
    refractory = max(1, int(round(refractory_s * rate_hz)))
    cand, _ = signal.find_peaks(mwi, height=thr, distance=refractory)

    search = int(round(0.12 * rate_hz))
    peaks = []
    for c in cand:
        a, b = max(0, c - search), min(x.size, c + search + 1)
        p = a + int(np.argmax(polarity * bp[a:b]))
        if peaks and p - peaks[-1] < refractory:
            if polarity * bp[p] > polarity * bp[peaks[-1]]:
                peaks[-1] = p
            continue
        peaks.append(p)
    return EventMarkers.from_samples(peaks, MarkerKind.R_PEAK, "R")


def bcg_correct(
    rec: EegRecording,
    r_peaks,
    delay_s: float = 0.21,
    window_epochs: int = 21,
    picks=None,
    exclude=("ECG",),
    pre_fraction: float = 0.3,
) -> CleanResult:
    """Pulse-artifact subtraction locked to R-peak + ``delay_s``.

    Epochs span ``min(median RR, 1.5 s)`` with ``pre_fraction`` of it before
    the aligned peak. Every sample is owned by its nearest aligned peak, so
    overlapping windows never subtract twice.
    """
    check_recording(rec)
    r = np.asarray(r_peaks.samples() if isinstance(r_peaks, EventMarkers) else r_peaks, dtype=np.int64)
    r = np.unique(r)
    if r.size < max(2, window_epochs):
        raise TooFewEpochs(f"{r.size} R-peaks, need at least {window_epochs}")
    rate = rec.sampling_rate
    length = int(round(min(np.median(np.diff(r)), 1.5 * rate)))
    pre = int(round(pre_fraction * length))
    post = length - pre
    aligned = r + int(round(delay_s * rate))
    fits = (aligned - pre >= 0) & (aligned + post <= rec.n_samples)
    peaks = aligned[fits]
    if peaks.size < max(2, window_epochs):
        raise TooFewEpochs(f"{peaks.size} complete cardiac epochs, need {window_epochs}")
    ch = check_picks(rec, picks, exclude)
    starts = peaks - pre
    idx = starts[:, None] + np.arange(length)
    epochs = rec.data[ch][:, idx].transpose(1, 0, 2)
    templates = _sliding_templates(epochs, window_epochs)

    # nearest-peak ownership, computed over all aligned peaks (dropped ones
    # still claim their neighbourhood so they are not corrected by a neighbour)
    mids = (aligned[1:] + aligned[:-1]) // 2
    artifact = np.zeros_like(rec.data)
    owned = np.empty(peaks.size, dtype=np.int64)
    own_start = np.empty(peaks.size, dtype=np.int64)
    kept = np.flatnonzero(fits)
    for j, k in enumerate(kept):
        lo = max(starts[j], mids[k - 1] + 1 if k > 0 else 0)
        hi = min(starts[j] + length, mids[k] + 1 if k < mids.size else rec.n_samples)
        own_start[j], owned[j] = lo, max(0, hi - lo)
        if hi > lo:
            artifact[ch, lo:hi] = templates[j][:, lo - starts[j] : hi - starts[j]]
    cleaned, rms = _result(rec, ch, artifact, own_start, owned, MarkerKind.R_PEAK, pre)
    mean_tpl = np.zeros((rec.n_channels, length))
    mean_tpl[ch] = epochs.mean(axis=0)
    return CleanResult(
        cleaned=rec.with_data(cleaned),
        artifact=artifact,
        residual_rms=rms,
        template=ArtifactTemplate(mean_tpl, starts, MarkerKind.R_PEAK, pre),
    )


class GradientArtifactCorrector(TransformerMixin, BaseEstimator):
    """Estimator form of :func:`aas_correct`.

    ``transform`` returns the cleaned :class:`EegRecording`; the last
    :class:`CleanResult` is kept on ``result_``.
    """

    def __init__(self, align="volume", window_epochs=15, max_jitter=1):
        self.align = align
        self.window_epochs = window_epochs
        self.max_jitter = max_jitter

    def _kind(self):
        return {"volume": MarkerKind.VOLUME_TRIGGER, "slice": MarkerKind.SLICE_TRIGGER}[self.align]

    def fit(self, rec, y=None):
        check_recording(rec)
        trig = np.unique(rec.markers.samples(self._kind()))
        if trig.size < 2:
            raise NoMarkers(f"no {self._kind().value} markers to fit on")
        self.epoch_length_ = int(np.median(np.diff(trig)))
        self.n_triggers_ = int(trig.size)
        return self

    def transform(self, rec):
        check_is_fitted(self, "epoch_length_")
        self.result_ = aas_correct(rec, self._kind(), self.window_epochs, max_jitter=self.max_jitter)
        return self.result_.cleaned


class PulseArtifactCorrector(TransformerMixin, BaseEstimator):
    """Estimator form of R-peak detection plus :func:`bcg_correct`."""

    def __init__(self, ecg_channel="ECG", delay_s=0.21, window_epochs=21):
        self.ecg_channel = ecg_channel
        self.delay_s = delay_s
        self.window_epochs = window_epochs

    def fit(self, rec, y=None):
        check_recording(rec)
        self.r_peaks_ = detect_r_peaks(rec.channel(self.ecg_channel), rec.sampling_rate)
        return self

    def transform(self, rec):
        check_is_fitted(self, "r_peaks_")
        self.result_ = bcg_correct(
            rec, self.r_peaks_, self.delay_s, self.window_epochs, exclude=(self.ecg_channel,)
        )
        return self.result_.cleaned
