"""EEG-informed and block-design BOLD predictors, voxel-wise maps, FDR.

The EEG predictor follows a three step chain on one channel: narrow band-pass
around the stimulation frequency, analytic amplitude envelope, then averaging
onto the TR grid and convolution with a double-gamma HRF.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special, stats
from scipy.integrate import trapezoid
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import dsp
from ._validation import check_fmri, check_picks, check_recording, resolve_threads
from .datamodel import EegRecording, FmriSeries, MarkerKind, StatKind, StatMap
from .errors import (
    DataError,
    DegenerateSample,
    GridMismatch,
    InvalidBand,
    LengthMismatch,
    MontageMismatch,
    NonIntegerBlock,
    ShapeMismatch,
    SingularDesign,
)

__all__ = [
    "HrfParams",
    "Hrf",
    "Predictor",
    "GlmResult",
    "canonical_hrf",
    "boxcar_regressor",
    "boxcar_from_markers",
    "convolve_hrf",
    "block_predictor",
    "build_eeg_predictor",
    "pearson_map",
    "r_to_p",
    "t_to_p",
    "glm_tmap",
    "fdr_bh",
    "compare_maps",
    "spectral_contrast",
    "harmonic_peaks",
    "task_rest_psd",
    "topography",
    "topography_test",
    "brain_mask",
    "preprocess_fmri",
    "EEGPredictor",
    "ActivationMapper",
]

VARIANCE_FLOOR = 1e-12
T_MAX = 1e6


@dataclass(frozen=True)
class HrfParams:
    peak_delay: float = 6.0
    undershoot_delay: float = 16.0
    peak_dispersion: float = 1.0
    undershoot_dispersion: float = 1.0
    ratio: float = 6.0
    duration: float = 32.0

    def evaluate(self, t) -> np.ndarray:
        """Unnormalized double-gamma response at times ``t`` (s)."""
        t = np.asarray(t, dtype=float)
        peak = stats.gamma.pdf(
            t, self.peak_delay / self.peak_dispersion, scale=self.peak_dispersion
        )
        under = stats.gamma.pdf(
            t, self.undershoot_delay / self.undershoot_dispersion,
            scale=self.undershoot_dispersion,
        )
        return peak - under / self.ratio


@dataclass(frozen=True, eq=False)
class Hrf:
    samples: np.ndarray
    tr: float
    params: HrfParams = HrfParams()

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) * self.tr


@dataclass(frozen=True, eq=False)
class Predictor:
    values: np.ndarray
    kind: str  # "EegEnvelope" | "Boxcar"
    tr: float
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.values.size

    def zscore(self) -> "Predictor":
        return Predictor(_zscore(self.values), self.kind, self.tr, dict(self.provenance))


@dataclass(frozen=True, eq=False)
class GlmResult:
    beta: np.ndarray
    t_map: StatMap
    p_map: StatMap
    dof: int
    mask: np.ndarray
    capped: np.ndarray
    design: np.ndarray
    ar1_rho: float = 0.0


def _zscore(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    sd = x.std()
    if sd <= 0:
        return np.zeros_like(x)
    return (x - x.mean()) / sd


def canonical_hrf(tr_s: float, params: HrfParams = HrfParams()) -> Hrf:
    """Double-gamma HRF sampled every ``tr_s`` over ``params.duration``, peak 1."""
    if not tr_s > 0:
        raise DataError(f"TR must be positive, got {tr_s}")
    n = int(math.floor(params.duration / tr_s + 1e-9)) + 1
    h = params.evaluate(np.arange(n) * tr_s)
    return Hrf(h / h.max(), float(tr_s), params)


def boxcar_regressor(block_s: float, n_volumes: int, tr_s: float, first_state: str = "on") -> Predictor:
    """Alternating task/rest indicator with blocks of ``block_s`` seconds."""
    span = block_s / tr_s
    if abs(span - round(span)) > 1e-9 or round(span) < 1:
        raise NonIntegerBlock(f"block of {block_s} s is not a multiple of TR {tr_s} s")
    span = int(round(span))
    if first_state not in ("on", "off"):
        raise DataError("first_state must be 'on' or 'off'")
    phase = np.arange(n_volumes) // span
    on = (phase % 2 == 0) if first_state == "on" else (phase % 2 == 1)
    return Predictor(on.astype(float), "Boxcar", float(tr_s), {"block_s": block_s, "first_state": first_state})


def boxcar_from_markers(rec: EegRecording, tr_s: float, n_volumes: int, offset_sample: int = 0) -> Predictor:
    """Per-volume fraction of time spent in StimulusOn..StimulusOff spans."""
    state = _task_state(rec)
    return Predictor(
        dsp.bin_to_tr(state[offset_sample:], rec.sampling_rate, tr_s, n_volumes),
        "Boxcar", float(tr_s), {"source": "markers"},
    )


def _task_state(rec: EegRecording) -> np.ndarray:
    state = np.zeros(rec.n_samples)
    on = None
    for m in rec.markers:
        if m.kind is MarkerKind.STIMULUS_ON and on is None:
            on = m.sample
        elif m.kind is MarkerKind.STIMULUS_OFF and on is not None:
            state[on : m.sample] = 1.0
            on = None
    if on is not None:
        state[on:] = 1.0
    return state


def convolve_hrf(series, hrf) -> np.ndarray:
    """Causal convolution with the HRF, truncated to the input length."""
    x = np.asarray(series, dtype=float)
    h = hrf.samples if isinstance(hrf, Hrf) else np.asarray(hrf, dtype=float)
    if x.size < 1 or h.size < 1:
        raise DataError("convolution inputs must be non-empty")
    return np.convolve(x, h)[: x.size]


def block_predictor(block_s: float, n_volumes: int, tr_s: float, first_state: str = "on",
                    hrf: Hrf | None = None) -> Predictor:
    box = boxcar_regressor(block_s, n_volumes, tr_s, first_state)
    hrf = hrf or canonical_hrf(tr_s)
    return Predictor(_zscore(convolve_hrf(box.values, hrf)), "Boxcar", float(tr_s), dict(box.provenance))


def build_eeg_predictor(
    rec: EegRecording,
    channel: str = "Oz",
    band_hz=(11.0, 13.0),
    tr_s: float = 3.0,
    n_volumes: int | None = None,
    order: int = 20,
    hrf: Hrf | None = None,
    offset_sample: int = 0,
) -> Predictor:
    """Band-pass, envelope, TR-average and HRF-convolve one EEG channel.

    ``offset_sample`` is the sample of the first fMRI volume.
    """
    check_recording(rec)
    x = rec.channel(channel)[offset_sample:]
    if n_volumes is None:
        n_volumes = int(x.size // round(tr_s * rec.sampling_rate))
    filt = dsp.design_bandpass(band_hz[0], band_hz[1], order, rec.sampling_rate)
    env = dsp.analytic_envelope(dsp.filt_zero_phase(x, filt))
    per_tr = dsp.bin_to_tr(env, rec.sampling_rate, tr_s, n_volumes)
    hrf = hrf or canonical_hrf(tr_s)
    return Predictor(
        _zscore(convolve_hrf(per_tr, hrf)), "EegEnvelope", float(tr_s),
        {"channel": channel, "band_hz": [float(band_hz[0]), float(band_hz[1])], "order": order,
         "envelope_tr": per_tr},
    )


def brain_mask(fmri: FmriSeries) -> np.ndarray:
    return fmri.data.var(axis=3) > VARIANCE_FLOOR


def preprocess_fmri(fmri: FmriSeries, fwhm_mm: float = 8.0, highpass_hz: float = 0.005):
    """Spatial smoothing then cosine high-pass; returns ``(series, brain_mask)``.

    The mask is computed before smoothing so blurred-in border voxels stay out.
    """
    mask = brain_mask(fmri)
    data = dsp.gaussian_smooth_3d(fmri.data, fwhm_mm, fmri.voxel_size)
    hp = np.zeros_like(data)
    hp[mask] = dsp.highpass_series(data[mask], highpass_hz, 1.0 / fmri.tr)
    return FmriSeries(hp, fmri.tr, fmri.voxel_size), mask


def _chunks(n: int, n_jobs: int):
    bounds = np.linspace(0, n, max(1, n_jobs) + 1).astype(int)
    return [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _map_rows(func, rows: np.ndarray, n_jobs: int):
    """Apply a row-wise kernel; per-row reductions make results partition-free."""
    parts = _chunks(rows.shape[0], n_jobs)
    if len(parts) <= 1:
        return func(rows)
    with ThreadPoolExecutor(len(parts)) as pool:
        outs = list(pool.map(lambda ab: func(rows[ab[0]:ab[1]]), parts))
    if isinstance(outs[0], tuple):
        return tuple(np.concatenate(c) for c in zip(*outs))
    return np.concatenate(outs)


def _pearson_rows(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    xc = x - x.mean()
    yc = y - y.mean(axis=1, keepdims=True)
    sxy = (yc * xc).sum(axis=1)
    sxx = (xc * xc).sum()
    syy = (yc * yc).sum(axis=1)
    denom = np.sqrt(sxx * syy)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 0, sxy / denom, 0.0)
    return np.clip(r, -1.0, 1.0)


def pearson_map(fmri: FmriSeries, predictor, mask: np.ndarray | None = None, n_jobs: int | None = None):
    """Voxel-wise Pearson r with ``predictor``.

    Returns ``(r_map, valid)`` where ``valid`` marks voxels with non-zero
    temporal variance; all other voxels get r = 0.
    """
    check_fmri(fmri)
    x = np.asarray(predictor.values if isinstance(predictor, Predictor) else predictor, float)
    if x.size != fmri.n_volumes:
        raise LengthMismatch(f"predictor has {x.size} samples, fMRI has {fmri.n_volumes} volumes")
    valid = brain_mask(fmri) if mask is None else (np.asarray(mask, bool) & brain_mask(fmri))
    r = np.zeros(fmri.data.shape[:3])
    if valid.any():
        r[valid] = _map_rows(lambda rows: _pearson_rows(rows, x), fmri.data[valid], resolve_threads(n_jobs))
    return StatMap(r, StatKind.R, fmri.voxel_size), valid


def t_to_p(t, dof) -> np.ndarray:
    """Two-sided p for Student t via the regularized incomplete beta function."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = special.betainc(dof / 2.0, 0.5, dof / (dof + t * t))
    p = np.where(np.isinf(t), 0.0, p)
    return np.clip(p, 0.0, 1.0)


def r_to_p(r, n: int):
    """Two-sided p-value of a Pearson r from ``n`` paired samples."""
    if n < 3:
        raise DegenerateSample(f"need n >= 3 for a correlation test, got {n}")
    r = np.asarray(r, dtype=float)
    if np.any(np.abs(r) > 1.0 + 1e-12):
        raise DataError("|r| must not exceed 1")
    r = np.clip(r, -1.0, 1.0)
    dof = n - 2
    with np.errstate(divide="ignore", invalid="ignore"):
        t = r * np.sqrt(dof / (1.0 - r * r))
    p = np.where(np.abs(r) >= 1.0, 0.0, t_to_p(np.where(np.abs(r) >= 1.0, 0.0, t), dof))
    return p if p.ndim else float(p)


def glm_design(predictor, n_volumes: int, tr_s: float, drift_order: int | None = None,
               highpass_hz: float = 0.005) -> np.ndarray:
    """Columns: predictor, intercept, cosine drifts."""
    x = np.asarray(predictor, dtype=float)
    if drift_order is None:
        drift = dsp.dct_basis(n_volumes, tr_s, highpass_hz)
    else:
        drift = dsp.dct_basis(n_volumes, tr_s, (drift_order + 0.5) / (2.0 * n_volumes * tr_s))
    return np.column_stack([x, np.ones(n_volumes), drift])


def glm_tmap(
    fmri: FmriSeries,
    predictor,
    drift_order: int | None = None,
    mask: np.ndarray | None = None,
    highpass_hz: float = 0.005,
    ar1: bool = False,
    n_jobs: int | None = None,
) -> GlmResult:
    """Per-voxel OLS of BOLD on ``[predictor, 1, cosines]``; t for the predictor.

    ``drift_order`` fixes the number of cosine regressors; by default it is
    derived from ``highpass_hz``. With ``ar1=True`` data and design are first
    prewhitened with a single AR(1) coefficient pooled over the mask.
    """
    check_fmri(fmri)
    x = np.asarray(predictor.values if isinstance(predictor, Predictor) else predictor, float)
    n = fmri.n_volumes
    if x.size != n:
        raise LengthMismatch(f"predictor has {x.size} samples, fMRI has {n} volumes")
    X = glm_design(x, n, fmri.tr, drift_order, highpass_hz)
    dof = n - X.shape[1]
    if dof <= 0:
        raise SingularDesign(f"{X.shape[1]} regressors for {n} volumes")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise SingularDesign("design matrix is rank deficient (predictor collinear with nuisance)")
    valid = brain_mask(fmri) if mask is None else (np.asarray(mask, bool) & brain_mask(fmri))
    Y = fmri.data[valid]
    rho = 0.0
    if ar1 and Y.shape[0]:
        rho = _pooled_ar1(Y, X)
        X, Y = _prewhiten(X, rho, 0), _prewhiten(Y, rho, 1)
    pinv = np.linalg.pinv(X)
    c00 = float(np.linalg.inv(X.T @ X)[0, 0])

    def kernel(rows):
        beta = rows @ pinv.T
        resid = rows - beta @ X.T
        s2 = (resid * resid).sum(axis=1) / dof
        se = np.sqrt(s2 * c00)
        scale = np.abs(rows).max(axis=1) + 1e-300
        exact = se <= 1e-12 * scale
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(exact, np.sign(beta[:, 0]) * T_MAX, beta[:, 0] / se)
        t = np.clip(t, -T_MAX, T_MAX)
        return beta, t, exact | (np.abs(t) >= T_MAX)

    shape = fmri.data.shape[:3]
    beta = np.zeros(shape + (X.shape[1],))
    tmap = np.zeros(shape)
    capped = np.zeros(shape, bool)
    if Y.shape[0]:
        b, t, cap = _map_rows(kernel, Y, resolve_threads(n_jobs))
        beta[valid], tmap[valid], capped[valid] = b, t, cap
    p = np.ones(shape)
    p[valid] = t_to_p(tmap[valid], dof)
    return GlmResult(
        beta=beta,
        t_map=StatMap(tmap, StatKind.T, fmri.voxel_size),
        p_map=StatMap(p, StatKind.P, fmri.voxel_size),
        dof=dof, mask=valid, capped=capped, design=X, ar1_rho=rho,
    )


def _pooled_ar1(Y: np.ndarray, X: np.ndarray) -> float:
    """AR(1) coefficient pooled over voxels, corrected for residual-forming bias.

    OLS residuals are ``M e`` with ``M = I - X X+``, so their lag-1
    autocorrelation underestimates the noise coefficient. The returned rho
    is the one whose expected residual autocorrelation,
    ``tr(M L M V(rho)) / tr(M V(rho))``, matches the observed value.
    """
    n = X.shape[0]
    M = np.eye(n) - X @ np.linalg.pinv(X)
    resid = Y @ M
    den = (resid * resid).sum()
    if den <= 0:
        return 0.0
    observed = (resid[:, 1:] * resid[:, :-1]).sum() / den
    lag = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    shift = np.eye(n, k=1)  # e @ shift @ e == sum_t e[t] e[t-1]
    MLM = M @ shift @ M

    def expected(rho):
        V = rho ** lag
        return float(np.sum(MLM * V) / np.sum(M * V)) - observed

    lo, hi = -0.95, 0.95
    f_lo, f_hi = expected(lo), expected(hi)
    if f_lo >= 0:
        return lo
    if f_hi <= 0:
        return hi
    return float(optimize.brentq(expected, lo, hi, xtol=1e-8))


def _prewhiten(A: np.ndarray, rho: float, axis: int) -> np.ndarray:
    """Prais-Winsten AR(1) transform along ``axis`` (the time axis)."""
    A = np.moveaxis(A, axis, -1)
    out = np.empty_like(A)
    out[..., 0] = A[..., 0] * math.sqrt(1.0 - rho * rho)
    out[..., 1:] = A[..., 1:] - rho * A[..., :-1]
    return np.moveaxis(out, -1, axis)


def fdr_bh(p, q: float = 0.05, mask: np.ndarray | None = None):
    """Benjamini-Hochberg step-up.

    ``p`` is a p-value StatMap or array. Returns ``(rejected, threshold)``;
    ``rejected`` is a Mask StatMap for StatMap input, else a bool array, and
    ``threshold`` is the largest rejected p (0.0 when nothing is rejected).
    """
    is_map = isinstance(p, StatMap)
    arr = np.asarray(p.values if is_map else p, dtype=float)
    if np.any((arr < 0) | (arr > 1)) or np.any(~np.isfinite(arr)):
        raise DataError("p-values must lie in [0, 1]")
    sel = np.ones(arr.shape, bool) if mask is None else np.asarray(mask, bool)
    vals = arr[sel]
    m = vals.size
    rejected = np.zeros(arr.shape, bool)
    thr = 0.0
    if m:
        srt = np.sort(vals)
        ok = np.nonzero(srt <= q * np.arange(1, m + 1) / m)[0]
        if ok.size:
            thr = float(srt[ok[-1]])
            rejected = sel & (arr <= thr)
    if is_map:
        return StatMap(rejected.astype(float), StatKind.MASK, p.voxel_size), thr
    return rejected, thr


def compare_maps(map_a, map_b, threshold_masks=None, brain: np.ndarray | None = None) -> dict:
    """Spatial Pearson r over in-brain voxels and Dice of thresholded masks."""
    a = np.asarray(map_a.values if isinstance(map_a, StatMap) else map_a, float)
    b = np.asarray(map_b.values if isinstance(map_b, StatMap) else map_b, float)
    if a.shape != b.shape:
        raise ShapeMismatch(f"maps differ in shape: {a.shape} vs {b.shape}")
    sel = np.ones(a.shape, bool) if brain is None else np.asarray(brain, bool)
    av, bv = a[sel], b[sel]
    spatial_r = float(_pearson_rows(bv[None, :], av)[0]) if av.size > 1 else float("nan")
    out = {"spatial_r": spatial_r, "dice": None}
    if threshold_masks is not None:
        ma, mb = (np.asarray(m.values if isinstance(m, StatMap) else m, bool) for m in threshold_masks)
        if ma.shape != a.shape or mb.shape != a.shape:
            raise ShapeMismatch("threshold masks must match map dims")
        total = int(ma.sum() + mb.sum())
        if total:
            out["dice"] = 2.0 * int((ma & mb).sum()) / total
        out["n_a"], out["n_b"] = int(ma.sum()), int(mb.sum())
    return out


def spectral_contrast(psd_task: dsp.PsdEstimate, psd_rest: dsp.PsdEstimate) -> np.ndarray:
    """Task minus rest spectral density, per channel."""
    if psd_task.freqs.shape != psd_rest.freqs.shape or not np.allclose(psd_task.freqs, psd_rest.freqs):
        raise GridMismatch("task and rest PSDs use different frequency grids")
    if psd_task.power.shape != psd_rest.power.shape:
        raise GridMismatch("task and rest PSDs have different channel counts")
    return psd_task.power - psd_rest.power


def harmonic_peaks(freqs, contrast, harmonics_hz, factor: float = 3.0,
                   window_hz: float = 5.0, exclude_hz: float = 1.0) -> list[dict]:
    """Test the contrast bin nearest each harmonic for a positive local peak.

    A harmonic passes when its bin is a strict local maximum and exceeds
    ``factor`` times the median absolute contrast of the bins within
    ``window_hz`` of it, leaving out the ``exclude_hz`` core around every
    harmonic. The neighbourhood keeps the reference on the same spectral
    scale as the tested bin.
    """
    freqs = np.asarray(freqs, dtype=float)
    c = np.asarray(contrast, dtype=float)
    if c.shape != freqs.shape:
        raise GridMismatch("contrast and frequency grid differ in length")
    core = np.zeros(freqs.size, bool)
    for h in harmonics_hz:
        core |= np.abs(freqs - h) <= exclude_hz
    out = []
    for h in harmonics_hz:
        i = int(np.argmin(np.abs(freqs - h)))
        ref = (np.abs(freqs - h) <= window_hz) & ~core
        if not 0 < i < freqs.size - 1 or ref.sum() < 2:
            raise InvalidBand(f"harmonic {h} Hz too close to the edge of the spectrum")
        mad = float(np.median(np.abs(c[ref])))
        peak = bool(c[i] > c[i - 1] and c[i] > c[i + 1])
        out.append({
            "harmonic_hz": float(h), "freq_hz": float(freqs[i]), "value": float(c[i]),
            "reference": mad, "ratio": float(c[i] / (factor * mad)) if mad > 0 else float("inf"),
            "passed": bool(peak and c[i] > factor * mad),
        })
    return out


def _spans(rec: EegRecording, want_task: bool, guard_samples: int = 0):
    state = _task_state(rec) > 0.5
    if not want_task:
        state = ~state
    valid = dsp.transient_mask(rec.n_samples)
    state &= valid
    edges = np.flatnonzero(np.diff(np.concatenate([[0], state.astype(np.int8), [0]])))
    return [(a + guard_samples, b) for a, b in zip(edges[::2], edges[1::2]) if b - a - guard_samples > 0]


def task_rest_psd(rec: EegRecording, segment_seconds: float = 4.0, overlap_fraction: float = 0.5,
                  guard_s: float = 0.5):
    """Welch PSDs pooled over StimulusOn..Off spans (task) and the remainder (rest).

    Segments never straddle a span boundary; spans are weighted by segment
    count. The first ``guard_s`` of every span is skipped.
    """
    nper = int(round(segment_seconds * rec.sampling_rate))
    guard = int(round(guard_s * rec.sampling_rate))
    out = []
    for want_task in (True, False):
        acc, weight, freqs = None, 0, None
        for a, b in _spans(rec, want_task, guard):
            if b - a < nper:
                continue
            est = dsp.welch_psd(rec.data[:, a:b], segment_seconds, overlap_fraction, rate_hz=rec.sampling_rate) \
                if b - a >= 2 * nper - int(round(overlap_fraction * nper)) else None
            if est is None:
                continue
            step = est.segment_length - est.overlap
            k = 1 + (b - a - est.segment_length) // step
            acc = est.power * k if acc is None else acc + est.power * k
            weight += k
            freqs = est.freqs
            seg, ov = est.segment_length, est.overlap
        if acc is None:
            raise DataError(f"no {'task' if want_task else 'rest'} span long enough for Welch segments")
        out.append(dsp.PsdEstimate(freqs, acc / weight, seg, ov))
    return out[0], out[1]


def topography(rec_task: EegRecording, rec_rest: EegRecording, freq_hz: float = 12.0,
               bandwidth_hz: float = 1.0, segment_seconds: float = 4.0,
               overlap_fraction: float = 0.5, exclude=("ECG",)) -> dict:
    """Band power difference (task - rest) per good channel around ``freq_hz``."""
    if rec_task.channel_labels != rec_rest.channel_labels:
        raise MontageMismatch("task and rest recordings use different montages")
    band = (freq_hz - bandwidth_hz / 2, freq_hz + bandwidth_hz / 2)
    pt = dsp.band_power(dsp.welch_psd(rec_task, segment_seconds, overlap_fraction), band)
    pr = dsp.band_power(dsp.welch_psd(rec_rest, segment_seconds, overlap_fraction), band)
    bad = rec_task.bad_channels | rec_rest.bad_channels
    return {
        lab: float(pt[i] - pr[i])
        for i, lab in enumerate(rec_task.channel_labels)
        if i not in bad and lab not in exclude
    }


def topography_from_psd(labels, psd_task: dsp.PsdEstimate, psd_rest: dsp.PsdEstimate,
                        freq_hz: float = 12.0, bandwidth_hz: float = 1.0, bad=frozenset()) -> dict:
    band = (freq_hz - bandwidth_hz / 2, freq_hz + bandwidth_hz / 2)
    diff = dsp.band_power(psd_task, band) - dsp.band_power(psd_rest, band)
    return {lab: float(diff[i]) for i, lab in enumerate(labels) if i not in bad}


def _segment_band_power(rec: EegRecording, spans, nper: int, band) -> np.ndarray:
    """Band power of every non-overlapping Hann segment inside ``spans``; (segments, channels)."""
    win = np.hanning(nper + 1)[:-1]
    freqs = np.fft.rfftfreq(nper, 1.0 / rec.sampling_rate)
    sel = (freqs >= band[0] - 1e-9) & (freqs <= band[1] + 1e-9)
    if sel.sum() < 2:
        raise InvalidBand(f"band {band} narrower than the frequency resolution")
    scale = 2.0 / (rec.sampling_rate * np.sum(win**2))
    rows = []
    for a, b in spans:
        for s in range(a, b - nper + 1, nper):
            seg = rec.data[:, s : s + nper]
            seg = (seg - seg.mean(axis=1, keepdims=True)) * win
            dens = np.abs(np.fft.rfft(seg, axis=1)[:, sel]) ** 2 * scale
            rows.append(trapezoid(dens, freqs[sel], axis=1))
    return np.array(rows)


def topography_test(rec: EegRecording, freq_hz: float = 12.0, bandwidth_hz: float = 1.0,
                    segment_seconds: float = 4.0, guard_s: float = 0.5, alpha: float = 0.05,
                    exclude=("ECG",)) -> dict:
    """Task-minus-rest band power per channel with a segment-level significance test.

    Non-overlapping segments from task and rest spans give per-segment band
    powers; a Welch t statistic on their logarithms is compared with the
    one-sided normal quantile at ``alpha`` Bonferroni-corrected over
    channels. Returns ``{"labels", "diff", "z", "floor", "significant"}``.
    """
    check_recording(rec)
    nper = int(round(segment_seconds * rec.sampling_rate))
    guard = int(round(guard_s * rec.sampling_rate))
    band = (freq_hz - bandwidth_hz / 2, freq_hz + bandwidth_hz / 2)
    task = _segment_band_power(rec, _spans(rec, True, guard), nper, band)
    rest = _segment_band_power(rec, _spans(rec, False, guard), nper, band)
    if len(task) < 2 or len(rest) < 2:
        raise DataError("need at least two task and two rest segments")
    good = [i for i in check_picks(rec, None, exclude) if i not in rec.bad_channels]
    lt = np.log(np.maximum(task[:, good], VARIANCE_FLOOR))
    lr = np.log(np.maximum(rest[:, good], VARIANCE_FLOOR))
    se = np.sqrt(lt.var(axis=0, ddof=1) / len(lt) + lr.var(axis=0, ddof=1) / len(lr))
    z = (lt.mean(axis=0) - lr.mean(axis=0)) / np.maximum(se, VARIANCE_FLOOR)
    floor = float(stats.norm.isf(alpha / len(good)))
    return {
        "labels": [rec.channel_labels[i] for i in good],
        "diff": task[:, good].mean(axis=0) - rest[:, good].mean(axis=0),
        "z": z,
        "floor": floor,
        "significant": z > floor,
    }


class EEGPredictor(BaseEstimator):
    """Estimator wrapper around :func:`build_eeg_predictor`.

    ``fit(rec)`` computes ``predictor_``; ``transform(rec)`` returns the
    z-scored per-TR values.
    """

    def __init__(self, channel="Oz", band_hz=(11.0, 13.0), tr_s=3.0, order=20, n_volumes=None):
        self.channel = channel
        self.band_hz = band_hz
        self.tr_s = tr_s
        self.order = order
        self.n_volumes = n_volumes

    def fit(self, rec, y=None):
        self.predictor_ = build_eeg_predictor(
            rec, self.channel, self.band_hz, self.tr_s, self.n_volumes, self.order
        )
        return self

    def transform(self, rec):
        check_is_fitted(self, "predictor_")
        return build_eeg_predictor(
            rec, self.channel, self.band_hz, self.tr_s, self.n_volumes, self.order
        ).values

    def fit_transform(self, rec, y=None):
        return self.fit(rec).predictor_.values


class ActivationMapper(BaseEstimator):
    """Correlation map plus GLM t map thresholded by FDR, for one predictor.

    Significance comes from the GLM only: with ``ar1=True`` data and design
    are prewhitened with a pooled AR(1) coefficient so the t p-values stay
    calibrated under serially correlated noise. The Pearson map is kept for
    display and spatial comparison.
    """

    def __init__(self, q=0.05, highpass_hz=0.005, fwhm_mm=8.0, ar1=True, n_jobs=None):
        self.q = q
        self.highpass_hz = highpass_hz
        self.fwhm_mm = fwhm_mm
        self.ar1 = ar1
        self.n_jobs = n_jobs

    def fit(self, fmri: FmriSeries, predictor):
        prep, mask = preprocess_fmri(fmri, self.fwhm_mm, self.highpass_hz)
        x = predictor.values if isinstance(predictor, Predictor) else np.asarray(predictor, float)
        self.brain_mask_ = mask
        self.r_map_, _ = pearson_map(prep, x, mask, self.n_jobs)
        self.glm_ = glm_tmap(prep, x, mask=mask, highpass_hz=self.highpass_hz, ar1=self.ar1,
                             n_jobs=self.n_jobs)
        self.t_mask_, self.t_threshold_ = fdr_bh(self.glm_.p_map, self.q, mask)
        return self

    def transform(self, fmri=None):
        """The thresholded t map (zero outside the FDR mask)."""
        check_is_fitted(self, "glm_")
        return np.where(self.t_mask_.values > 0, self.glm_.t_map.values, 0.0)
