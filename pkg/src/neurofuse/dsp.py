"""Signal-processing kernels shared by the EEG and fMRI stages."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sp_fft
from scipy import ndimage, signal
from scipy.integrate import trapezoid

from .datamodel import EegRecording
from .errors import CoverageTooShort, DataError, InvalidBand, SignalTooShort, UnstableDesign

__all__ = [
    "SosFilter",
    "PsdEstimate",
    "design_bandpass",
    "filt_zero_phase",
    "dct_basis",
    "highpass_series",
    "analytic_envelope",
    "welch_psd",
    "band_power",
    "bin_to_tr",
    "gaussian_smooth_3d",
    "transient_mask",
    "FWHM_TO_SIGMA",
]

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
EDGE_FRACTION = 0.05
KERNEL_TRUNCATE = 6.0


@dataclass(frozen=True, eq=False)
class SosFilter:
    """Cascade of biquads, rows ``(b0, b1, b2, 1, a1, a2)``."""

    sections: np.ndarray
    kind: str
    band: tuple[float, float]
    order: int
    rate: float

    @property
    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots(s[3:]) for s in self.sections])

    @property
    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles) < 1.0))

    def settling_samples(self, decay: float = 1e-3) -> int:
        """Samples until the slowest pole decays by ``decay``."""
        r = float(np.max(np.abs(self.poles)))
        return int(math.ceil(math.log(decay) / math.log(r)))

    def magnitude(self, freqs) -> np.ndarray:
        """|H(f)| of a single (causal) pass."""
        _, h = signal.sosfreqz(self.sections, worN=np.asarray(freqs, float), fs=self.rate)
        return np.abs(h)


@dataclass(frozen=True, eq=False)
class PsdEstimate:
    freqs: np.ndarray
    power: np.ndarray  # (channels, freqs), uV^2/Hz
    segment_length: int
    overlap: int
    window: str = "hann"

    @property
    def df(self) -> float:
        return float(self.freqs[1] - self.freqs[0])


def design_bandpass(low_hz: float, high_hz: float, order: int, rate_hz: float) -> SosFilter:
    """Butterworth band-pass of total ``order`` as ``order // 2`` biquads."""
    if not 0 < low_hz < high_hz < rate_hz / 2:
        raise InvalidBand(
            f"need 0 < low < high < rate/2, got ({low_hz}, {high_hz}) at {rate_hz} Hz"
        )
    if order < 2 or order % 2:
        raise InvalidBand(f"band-pass order must be even and >= 2, got {order}")
    sos = signal.butter(order // 2, [low_hz, high_hz], btype="bandpass", fs=rate_hz, output="sos")
    filt = SosFilter(sos, "butter-bandpass", (float(low_hz), float(high_hz)), int(order), float(rate_hz))
    if not filt.is_stable:
        raise UnstableDesign("designed filter has poles on or outside the unit circle")
    return filt


def filt_zero_phase(x, filt: SosFilter, axis: int = -1) -> np.ndarray:
    """Forward-backward filtering; net magnitude |H|^2, zero phase."""
    x = np.asarray(x, dtype=float)
    n = x.shape[axis]
    settle = filt.settling_samples()
    if n <= 3 * settle:
        raise SignalTooShort(
            f"signal of {n} samples is shorter than 3x filter settling ({settle} samples)"
        )
    return signal.sosfiltfilt(filt.sections, x, axis=axis, padtype="odd", padlen=settle)


def dct_basis(n: int, dt: float, cutoff_hz: float) -> np.ndarray:
    """Discrete cosine drift regressors below ``cutoff_hz`` (DC excluded).

    Returns an ``(n, k)`` matrix; cosine ``j`` has frequency ``j / (2 n dt)``.
    """
    k = int(math.floor(2.0 * n * dt * cutoff_hz))
    t = np.arange(n)
    cols = [np.sqrt(2.0 / n) * np.cos(np.pi * j * (2 * t + 1) / (2 * n)) for j in range(1, k + 1)]
    if not cols:
        return np.zeros((n, 0))
    return np.column_stack(cols)


def highpass_series(series, cutoff_hz: float, rate_hz: float, axis: int = -1) -> np.ndarray:
    """Remove the mean and all cosine drifts below ``cutoff_hz`` by regression."""
    if not 0 < cutoff_hz < rate_hz / 2:
        raise InvalidBand(f"cutoff {cutoff_hz} Hz outside (0, {rate_hz / 2})")
    y = np.moveaxis(np.asarray(series, dtype=float), axis, -1)
    n = y.shape[-1]
    basis = np.column_stack([np.full(n, 1.0 / np.sqrt(n)), dct_basis(n, 1.0 / rate_hz, cutoff_hz)])
    # basis columns are orthonormal, so the projection is a plain matrix product
    resid = y - (y @ basis) @ basis.T
    return np.moveaxis(resid, -1, axis)


def analytic_envelope(x, axis: int = -1) -> np.ndarray:
    """Magnitude of the analytic signal built in the frequency domain."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DataError("envelope input contains non-finite values")
    n = x.shape[axis]
    spec = sp_fft.fft(x, axis=axis)
    h = np.zeros(n)
    h[0] = 1.0
    if n % 2 == 0:
        h[n // 2] = 1.0
        h[1 : n // 2] = 2.0
    else:
        h[1 : (n + 1) // 2] = 2.0
    shape = [1] * x.ndim
    shape[axis] = n
    return np.abs(sp_fft.ifft(spec * h.reshape(shape), axis=axis))


def welch_psd(
    rec,
    segment_seconds: float = 4.0,
    overlap_fraction: float = 0.5,
    rate_hz: float | None = None,
) -> PsdEstimate:
    """Averaged Hann-window periodograms, one-sided density.

    ``rec`` is an :class:`EegRecording` or an array (channels x samples)
    together with ``rate_hz``.
    """
    if isinstance(rec, EegRecording):
        data, rate = rec.data, rec.sampling_rate
    else:
        if rate_hz is None:
            raise DataError("rate_hz is required for array input")
        data, rate = np.atleast_2d(np.asarray(rec, dtype=float)), float(rate_hz)
    nperseg = int(round(segment_seconds * rate))
    noverlap = int(round(overlap_fraction * nperseg))
    if not 0 <= noverlap < nperseg:
        raise DataError("overlap_fraction must be in [0, 1)")
    if data.shape[-1] < 2 * nperseg - noverlap:
        raise SignalTooShort(
            f"{data.shape[-1]} samples cannot hold two {segment_seconds} s segments"
        )
    freqs, power = signal.welch(
        data, fs=rate, window="hann", nperseg=nperseg, noverlap=noverlap,
        detrend="constant", scaling="density", axis=-1,
    )
    return PsdEstimate(freqs, power, nperseg, noverlap)


def band_power(psd: PsdEstimate, band_hz) -> np.ndarray:
    """Trapezoidal integral of the density over ``[lo, hi]``, per channel."""
    lo, hi = band_hz
    if not (lo < hi and lo >= psd.freqs[0] and hi <= psd.freqs[-1]):
        raise InvalidBand(f"band {band_hz} outside PSD range [0, {psd.freqs[-1]}]")
    sel = (psd.freqs >= lo - 1e-9) & (psd.freqs <= hi + 1e-9)
    if sel.sum() < 2:
        raise InvalidBand(f"band {band_hz} narrower than the frequency resolution")
    return trapezoid(psd.power[..., sel], psd.freqs[sel], axis=-1)


def bin_to_tr(envelope, rate_hz: float, tr_s: float, n_volumes: int) -> np.ndarray:
    """Mean of the samples falling in each ``[k tr, (k+1) tr)`` bin."""
    env = np.asarray(envelope, dtype=float)
    edges = np.round(np.arange(n_volumes + 1) * tr_s * rate_hz).astype(np.int64)
    per_bin = edges[-1] - edges[-2]
    if env.shape[-1] - edges[-2] < 0.5 * per_bin:
        raise CoverageTooShort(
            f"{env.shape[-1]} samples do not cover {n_volumes} volumes of {tr_s} s"
        )
    edges[-1] = min(edges[-1], env.shape[-1])
    sums = np.add.reduceat(env[..., : edges[-1]], edges[:-1], axis=-1)
    return sums / np.diff(edges)


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(KERNEL_TRUNCATE * sigma))
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth_3d(volume, fwhm_mm: float, voxel_size_mm) -> np.ndarray:
    """Separable Gaussian smoothing over the first three axes.

    The kernel is truncated at 6 sigma and renormalized; borders are
    mirrored so constant volumes stay constant. Extra trailing axes (time)
    are smoothed independently.
    """
    vol = np.asarray(volume, dtype=float)
    if fwhm_mm < 0:
        raise DataError("fwhm must be non-negative")
    if fwhm_mm == 0:
        return vol.copy()
    out = vol
    for axis, size in enumerate(voxel_size_mm):
        sigma = fwhm_mm * FWHM_TO_SIGMA / float(size)
        if sigma <= 0 or KERNEL_TRUNCATE * sigma < 1.0:
            continue
        out = ndimage.correlate1d(out, _gaussian_kernel(sigma), axis=axis, mode="reflect")
    return out if out is not vol else vol.copy()


def transient_mask(n: int, fraction: float = EDGE_FRACTION) -> np.ndarray:
    """True on the interior samples, False on the leading/trailing transients."""
    m = np.ones(n, dtype=bool)
    k = int(math.ceil(fraction * n))
    if k:
        m[:k] = False
        m[n - k :] = False
    return m
