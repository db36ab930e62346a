"""Deterministic synthetic EEG-fMRI datasets with ground truth.

Three recording conditions are emitted from one set of truth waveforms:
``Outside`` (clean EEG), ``ScannerOff`` (clean + pulse artifact) and
``ScannerOn`` (clean + pulse + gradient artifact). All EEG components are
rounded to a dyadic grid (2**-24 uV) so the condition differences recover the
injected artifacts bit for bit.

Defaults are desk-scale (500 Hz EEG) rather than recorder-realistic (5 kHz).
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import signal

from .datamodel import EegRecording, EventMarkers, FmriSeries, Marker, MarkerKind
from .errors import InvalidConfig
from .fusion import boxcar_regressor, canonical_hrf, convolve_hrf

__all__ = [
    "MONTAGE_32",
    "PhantomConfig",
    "PhantomTruth",
    "Phantom",
    "Condition",
    "gen_phantom",
    "gen_fmri",
    "emit_condition",
]

# Approximate 2-D azimuthal layout (x to the right, y to the nose), Cz at origin.
MONTAGE_32 = {
    "Fp1": (-0.31, 0.95), "Fp2": (0.31, 0.95), "F7": (-0.81, 0.59), "F3": (-0.40, 0.52),
    "Fz": (0.0, 0.40), "F4": (0.40, 0.52), "F8": (0.81, 0.59), "FC5": (-0.68, 0.26),
    "FC1": (-0.22, 0.20), "FC2": (0.22, 0.20), "FC6": (0.68, 0.26), "T7": (-1.0, 0.0),
    "C3": (-0.50, 0.0), "Cz": (0.0, 0.0), "C4": (0.50, 0.0), "T8": (1.0, 0.0),
    "TP9": (-1.05, -0.35), "CP5": (-0.68, -0.26), "CP1": (-0.22, -0.20), "CP2": (0.22, -0.20),
    "CP6": (0.68, -0.26), "TP10": (1.05, -0.35), "P7": (-0.81, -0.59), "P3": (-0.40, -0.52),
    "Pz": (0.0, -0.40), "P4": (0.40, -0.52), "P8": (0.81, -0.59), "PO9": (-0.60, -0.95),
    "O1": (-0.31, -0.95), "Oz": (0.0, -1.0), "O2": (0.31, -0.95), "PO10": (0.60, -0.95),
}

QUANTUM = 2.0 ** -24
KNEE_HZ = 6.0
VOLUME_LABEL = "R128"
STIM_ON_LABEL = "S  1"
STIM_OFF_LABEL = "S  2"


class Condition(enum.Enum):
    OUTSIDE = "Outside"
    SCANNER_OFF = "ScannerOff"
    SCANNER_ON = "ScannerOn"


@dataclass(frozen=True)
class PhantomConfig:
    seed: int = 7
    duration_s: float = 300.0
    eeg_rate_hz: float = 500.0
    n_channels: int = 32
    occipital_channels: tuple = ("Oz", "O1", "O2")
    ecg_label: str = "ECG"
    # task / SSVEP
    stimulus_hz: float = 12.0
    harmonic_amplitudes: tuple = (1.0, 0.6, 0.45)
    ssvep_amplitude_uv: float = 8.0
    stimulus_jitter_hz: float = 0.06  # frequency wander, keeps the SSVEP off the volume clock
    stimulus_jitter_tau_s: float = 6.0
    block_s: float = 24.0
    first_state: str = "off"
    # spontaneous EEG
    alpha_band_hz: tuple = (8.0, 13.0)
    alpha_peak_hz: float = 10.0
    alpha_width_hz: float = 0.7
    alpha_amplitude_uv: float = 12.0
    alpha_task_suppression: float = 0.3
    background_rms_uv: float = 16.0
    sensor_noise_uv: float = 2.0
    n_background_sources: int = 24
    # scanner
    tr_s: float = 3.0
    n_slices: int = 20
    ga_amplitude_uv: float | None = None  # absolute gradient RMS; None scales to ga_to_eeg_rms
    ga_to_eeg_rms: float = 100.0  # gradient RMS over clean EEG RMS, channel-averaged
    ga_harmonics: int = 10
    emit_slice_triggers: bool = False
    # cardiac
    bcg_amplitude_uv: float = 150.0
    bcg_delay_s: float = 0.21
    bcg_jitter: float = 0.10
    heart_bpm: float = 66.0
    heart_variability: float = 0.04
    ecg_amplitude_uv: float = 800.0
    ecg_polarity: int = 1
    # fMRI
    fmri_dims: tuple = (32, 32, 20)
    voxel_size_mm: tuple = (3.3, 3.3, 4.0)
    active_center: tuple = (0.5, 0.22, 0.5)
    active_radius_mm: float = 14.0
    cnr: float = 1.0
    baseline: float = 1000.0
    noise_sd: float = 10.0
    ar1: float = 0.3
    drift_amplitude: float = 1.0

    def __post_init__(self):
        for name in ("duration_s", "eeg_rate_hz", "tr_s", "block_s", "stimulus_hz",
                     "heart_bpm", "noise_sd"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise InvalidConfig(f"{name} must be positive, got {v!r}")
        if self.cnr < 0:
            raise InvalidConfig("cnr must be non-negative")
        if not 1 <= self.n_channels <= len(MONTAGE_32):
            raise InvalidConfig(f"n_channels must be in [1, {len(MONTAGE_32)}]")
        labels = list(MONTAGE_32)[: self.n_channels]
        missing = [c for c in self.occipital_channels if c not in labels]
        if missing:
            raise InvalidConfig(f"occipital channels {missing} not in the montage")
        if self.n_slices < 1 or self.ga_harmonics < 0:
            raise InvalidConfig("n_slices must be >= 1 and ga_harmonics >= 0")
        if not 0 <= self.ar1 < 1:
            raise InvalidConfig("ar1 must lie in [0, 1)")
        if self.duration_s < self.tr_s * 2:
            raise InvalidConfig("duration must span at least two volumes")
        if self.first_state not in ("on", "off"):
            raise InvalidConfig("first_state must be 'on' or 'off'")
        if len(self.fmri_dims) != 3 or len(self.voxel_size_mm) != 3:
            raise InvalidConfig("fmri_dims and voxel_size_mm must be triples")
        amps = (self.ga_to_eeg_rms, self.bcg_amplitude_uv, self.ssvep_amplitude_uv,
                0.0 if self.ga_amplitude_uv is None else self.ga_amplitude_uv)
        if min(amps) < 0:
            raise InvalidConfig("amplitudes must be non-negative")

    @property
    def labels(self) -> tuple:
        return tuple(list(MONTAGE_32)[: self.n_channels])

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.eeg_rate_hz))

    @property
    def n_volumes(self) -> int:
        return int(math.floor(self.duration_s / self.tr_s + 1e-9))

    @property
    def slice_hz(self) -> float:
        return self.n_slices / self.tr_s

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown phantom settings: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        try:
            return cls(**kw)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from None


@dataclass(frozen=True, eq=False)
class PhantomTruth:
    clean: np.ndarray  # channels (+ECG) x samples
    ga: np.ndarray
    bcg: np.ndarray
    r_peaks: np.ndarray
    ssvep_power_tr: np.ndarray
    task_state: np.ndarray  # per-sample SSVEP gain in [0, 1]
    boxcar: np.ndarray  # per-volume
    bold_regressor: np.ndarray  # boxcar * HRF, peak 1
    activation_mask: np.ndarray
    brain_mask: np.ndarray
    bcg_sources: np.ndarray  # (2, samples) unit-amplitude waveforms with jitter
    bcg_topography: np.ndarray  # (channels+1, 2)
    seed: int


@dataclass(frozen=True, eq=False)
class Phantom:
    config: PhantomConfig
    raw: EegRecording
    fmri: FmriSeries
    truth: PhantomTruth
    stimulus_markers: EventMarkers
    volume_markers: EventMarkers

    @property
    def ecg(self) -> np.ndarray:
        return self.raw.channel(self.config.ecg_label)


def _q(x: np.ndarray) -> np.ndarray:
    return np.round(x / QUANTUM) * QUANTUM


def _colored_noise(rng, n: int, rate: float, shape_fn) -> np.ndarray:
    """Unit-variance Gaussian noise with amplitude spectrum ``shape_fn(f)``."""
    f = np.fft.rfftfreq(n, 1.0 / rate)
    spec = (rng.standard_normal(f.size) + 1j * rng.standard_normal(f.size)) * shape_fn(f)
    x = np.fft.irfft(spec, n)
    sd = x.std()
    return x / sd if sd > 0 else x


def _background_shape(f: np.ndarray, rate: float) -> np.ndarray:
    """1/(f + knee) power, a 1 Hz second-order high-pass and no energy near Nyquist."""
    hp = (f / 1.0) ** 2 / np.sqrt(1.0 + (f / 1.0) ** 4)
    return hp / np.sqrt(f + KNEE_HZ) * (f < 0.45 * rate)


def _task_gain(cfg: PhantomConfig, n: int, rate: float) -> np.ndarray:
    t = np.arange(n) / rate
    block = np.floor(t / cfg.block_s).astype(int)
    on = (block % 2 == 1) if cfg.first_state == "off" else (block % 2 == 0)
    w = max(1, int(round(0.5 * rate)))
    return np.convolve(on.astype(float), np.ones(w) / w, mode="same")


def _stimulus_markers(cfg: PhantomConfig, n: int, rate: float) -> EventMarkers:
    out = []
    n_blocks = int(math.ceil(cfg.duration_s / cfg.block_s))
    for b in range(n_blocks):
        on = (b % 2 == 1) if cfg.first_state == "off" else (b % 2 == 0)
        s = int(round(b * cfg.block_s * rate))
        if s >= n:
            break
        if on:
            out.append(Marker(s, MarkerKind.STIMULUS_ON, STIM_ON_LABEL))
        elif b > 0:
            out.append(Marker(s, MarkerKind.STIMULUS_OFF, STIM_OFF_LABEL))
    return EventMarkers(tuple(out))


def _ssvep(cfg: PhantomConfig, rng, n: int, rate: float) -> np.ndarray:
    """Unit-gain SSVEP with a slowly wandering (AR(1)) instantaneous frequency."""
    a = math.exp(-1.0 / (cfg.stimulus_jitter_tau_s * rate))
    drive = rng.standard_normal(n) * cfg.stimulus_jitter_hz * math.sqrt(1 - a * a)
    wander = signal.lfilter([1.0], [1.0, -a], drive)
    phase = 2 * np.pi * np.cumsum(cfg.stimulus_hz + wander) / rate + rng.uniform(0, 2 * np.pi)
    out = np.zeros(n)
    for k, amp in enumerate(cfg.harmonic_amplitudes, start=1):
        if k * cfg.stimulus_hz < rate / 2:
            out += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    return out


def _ecg(cfg: PhantomConfig, rng, n: int, rate: float):
    rr_mean = 60.0 / cfg.heart_bpm
    peaks = []
    t = 0.35
    while True:
        peaks.append(t)
        rr = rr_mean * (1 + cfg.heart_variability * float(np.clip(rng.standard_normal(), -3, 3)))
        t += rr
        if t > cfg.duration_s - 0.35:
            break
    peaks = np.array(peaks)
    tt = np.arange(n) / rate
    ecg = np.zeros(n)
    # P, Q, R, S, T as Gaussian bumps (offset s, width s, relative amplitude)
    waves = ((-0.18, 0.025, 0.12), (-0.03, 0.008, -0.12), (0.0, 0.010, 1.0),
             (0.03, 0.010, -0.25), (0.25, 0.045, 0.30))
    for p in peaks:
        lo, hi = int(max(0, (p - 0.3) * rate)), int(min(n, (p + 0.5) * rate))
        seg = tt[lo:hi] - p
        for off, wid, amp in waves:
            ecg[lo:hi] += amp * np.exp(-0.5 * ((seg - off) / wid) ** 2)
    ecg *= cfg.ecg_amplitude_uv * cfg.ecg_polarity
    ecg += 0.02 * cfg.ecg_amplitude_uv * np.sin(2 * np.pi * 0.25 * tt + rng.uniform(0, 2 * np.pi))
    ecg += rng.standard_normal(n) * 5.0
    return ecg, np.round(peaks * rate).astype(np.int64)


def _bcg_shapes(rate: float) -> np.ndarray:
    t = np.arange(int(round(0.7 * rate))) / rate
    rise = 1 - np.exp(-t / 0.01)
    shapes = np.stack([
        rise * np.exp(-t / 0.12) * np.sin(2 * np.pi * 3.5 * t),
        rise * np.exp(-t / 0.10) * np.sin(2 * np.pi * 5.5 * t + 0.8),
    ])
    return shapes / np.abs(shapes).max(axis=1, keepdims=True)


def _bcg_sources(cfg: PhantomConfig, rng, n: int, rate: float, r_peaks: np.ndarray) -> np.ndarray:
    """Two damped-sinusoid sources at R + delay with per-beat amplitude jitter."""
    shapes = _bcg_shapes(rate)
    dur = shapes.shape[1]
    onset = int(round(max(cfg.bcg_delay_s - 0.05, 0.0) * rate))
    src = np.zeros((2, n))
    for r in r_peaks:
        s0 = r + onset
        if s0 >= n:
            continue
        k = min(dur, n - s0)
        gains = 1 + cfg.bcg_jitter * rng.uniform(-1, 1, 2)
        src[:, s0 : s0 + k] += gains[:, None] * shapes[:, :k]
    return src


def _fmri(cfg: PhantomConfig, rng, boxcar_vol: np.ndarray):
    nx, ny, nz = (int(d) for d in cfg.fmri_dims)
    nt = cfg.n_volumes
    vx = np.asarray(cfg.voxel_size_mm, float)
    grid = np.stack(np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"), -1)
    center = (np.array([nx, ny, nz]) - 1) / 2.0
    semi = np.array([nx, ny, nz]) * 0.45
    brain = (((grid - center) / semi) ** 2).sum(-1) <= 1.0
    act_c = np.asarray(cfg.active_center) * (np.array([nx, ny, nz]) - 1)
    dist = np.sqrt((((grid - act_c) * vx) ** 2).sum(-1))
    active = (dist <= cfg.active_radius_mm) & brain

    hrf = canonical_hrf(cfg.tr_s)
    reg = convolve_hrf(boxcar_vol, hrf)
    if reg.max() > 0:
        reg = reg / reg.max()

    nb = int(brain.sum())
    noise = np.empty((nb, nt))
    innov = rng.standard_normal((nb, nt))
    noise[:, 0] = innov[:, 0]
    scale = math.sqrt(1 - cfg.ar1 ** 2)
    for k in range(1, nt):
        noise[:, k] = cfg.ar1 * noise[:, k - 1] + scale * innov[:, k]
    noise *= cfg.noise_sd
    # drift confined to cosines slower than 1/(2 * run length)
    tt = np.arange(nt)
    drift_basis = np.stack([np.cos(np.pi * j * (2 * tt + 1) / (2 * nt)) for j in (1, 2)])
    drift = rng.standard_normal((nb, 2)) @ drift_basis * cfg.drift_amplitude * cfg.noise_sd
    base = cfg.baseline * (1 + 0.05 * rng.standard_normal(nb))
    ts = base[:, None] + noise + drift
    act_in_brain = active[brain]
    ts[act_in_brain] += cfg.cnr * cfg.noise_sd * reg[None, :]
    data = np.zeros((nx, ny, nz, nt))
    data[brain] = ts
    return FmriSeries(data, cfg.tr_s, tuple(vx)), reg, active, brain


def _volume_boxcar(cfg: PhantomConfig) -> np.ndarray:
    n_vol = cfg.n_volumes
    if abs(cfg.block_s / cfg.tr_s - round(cfg.block_s / cfg.tr_s)) < 1e-9:
        return boxcar_regressor(cfg.block_s, n_vol, cfg.tr_s, cfg.first_state).values
    spt = cfg.eeg_rate_hz * cfg.tr_s
    gain = _task_gain(cfg, int(round(n_vol * spt)), cfg.eeg_rate_hz)
    starts = np.round(np.arange(n_vol) * spt).astype(np.int64)
    return np.add.reduceat(gain, starts) / np.diff(np.append(starts, gain.size))


def _fmri_parts(cfg: PhantomConfig, rng):
    boxcar = _volume_boxcar(cfg)
    fmri, reg, active, brain = _fmri(cfg, rng, boxcar)
    return fmri, boxcar, reg, active, brain


def gen_fmri(config: PhantomConfig | None = None, **overrides) -> FmriSeries:
    """Only the fMRI part of :func:`gen_phantom` (same values, no EEG synthesis)."""
    cfg = config or PhantomConfig()
    if overrides:
        cfg = PhantomConfig(**{**asdict(cfg), **overrides})
    fmri_seq = np.random.SeedSequence(cfg.seed).spawn(2)[1]
    return _fmri_parts(cfg, np.random.default_rng(fmri_seq))[0]


def gen_phantom(config: PhantomConfig | None = None, **overrides) -> Phantom:
    """Generate a full dataset; identical config gives bit-identical output."""
    cfg = config or PhantomConfig()
    if overrides:
        cfg = PhantomConfig(**{**asdict(cfg), **overrides})
    eeg_seq, fmri_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    rng, fmri_rng = np.random.default_rng(eeg_seq), np.random.default_rng(fmri_seq)
    rate = cfg.eeg_rate_hz
    n = cfg.n_samples
    labels = cfg.labels
    nch = len(labels)
    pos = np.array([MONTAGE_32[l] for l in labels])

    # spontaneous background: spatially smooth mixture of 1/f sources + sensor noise
    src_pos = rng.uniform(-1.1, 1.1, (cfg.n_background_sources, 2))
    d2 = ((pos[:, None, :] - src_pos[None, :, :]) ** 2).sum(-1)
    mix = np.exp(-d2 / (2 * 0.45 ** 2)) * rng.choice([-1.0, 1.0], cfg.n_background_sources)
    pink = lambda f: _background_shape(f, rate)
    bg_src = np.stack([_colored_noise(rng, n, rate, pink) for _ in range(cfg.n_background_sources)])
    background = mix @ bg_src
    background *= cfg.background_rms_uv / background.std(axis=1).mean()
    background += rng.standard_normal((nch, n)) * cfg.sensor_noise_uv

    # alpha: occipital-weighted narrowband noise, blocked during the task
    gain = _task_gain(cfg, n, rate)
    lo, hi = cfg.alpha_band_hz
    fc, bw = cfg.alpha_peak_hz, cfg.alpha_width_hz
    alpha_shape = lambda f: np.exp(-0.5 * ((f - fc) / bw) ** 2) * ((f >= lo) & (f <= hi))
    occ = np.array([MONTAGE_32[c] for c in cfg.occipital_channels]).mean(axis=0)
    alpha_topo = np.exp(-((pos - occ) ** 2).sum(-1) / (2 * 0.5 ** 2))
    alpha_src = _colored_noise(rng, n, rate, alpha_shape) * (1 - cfg.alpha_task_suppression * gain)
    alpha = cfg.alpha_amplitude_uv * alpha_topo[:, None] * alpha_src[None, :]

    # SSVEP at the occipital channels only, gated by the smoothed task boxcar
    ssvep_wave = _ssvep(cfg, rng, n, rate) * gain
    weights = {c: (1.0 if i == 0 else 0.85) for i, c in enumerate(cfg.occipital_channels)}
    ssvep = np.zeros((nch, n))
    for c, w in weights.items():
        ssvep[labels.index(c)] = cfg.ssvep_amplitude_uv * w * ssvep_wave

    ecg, r_peaks = _ecg(cfg, rng, n, rate)
    clean = _q(np.vstack([background + alpha + ssvep, ecg[None, :]]))

    # pulse artifact: two sources with smooth topographies, none on ECG
    bcg_src = _bcg_sources(cfg, rng, n, rate, r_peaks)
    centers = np.array([[-0.3, 0.1], [0.35, -0.2]])
    topo = np.stack([np.exp(-((pos - c) ** 2).sum(-1) / (2 * 0.8 ** 2)) for c in centers], axis=1)
    topo *= np.array([1.0, -0.6])
    unit_peak = np.abs(topo @ _bcg_shapes(rate)).max()
    topo *= cfg.bcg_amplitude_uv / unit_peak
    topo = np.vstack([topo, np.zeros((1, 2))])
    bcg = _q(topo @ bcg_src)

    # gradient artifact: harmonic series of the slice frequency, scanner-on span only
    spt = rate * cfg.tr_s
    n_vol = cfg.n_volumes
    idx = np.arange(n)
    if abs(spt - round(spt)) < 1e-9:
        cyc = (idx % int(round(spt))) * cfg.n_slices / round(spt)
    else:
        cyc = idx * cfg.slice_hz / rate
    cyc = np.mod(cyc, 1.0)
    ga_unit = np.zeros(n)
    for k in range(1, cfg.ga_harmonics + 1):
        if k * cfg.slice_hz >= rate / 2:
            break
        ga_unit += np.sin(2 * np.pi * k * cyc + 0.7 * k) / k
    sd = ga_unit.std()
    if sd > 0:
        ga_unit /= sd
    ga_unit[int(round(n_vol * spt)):] = 0.0
    ch_gain = np.concatenate([rng.uniform(0.5, 1.5, nch), [0.5]])
    ga = ch_gain[:, None] * ga_unit[None, :]
    on = slice(0, int(round(n_vol * spt)))
    ga_rms = np.sqrt(np.mean(ga[:nch, on] ** 2, axis=1)).mean()
    if ga_rms > 0:
        target = cfg.ga_amplitude_uv
        if target is None:
            target = cfg.ga_to_eeg_rms * clean[:nch].std(axis=1).mean()
        ga *= target / ga_rms
    ga = _q(ga)

    vol_samples = np.round(np.arange(n_vol) * spt).astype(np.int64)
    vol_markers = EventMarkers.from_samples(vol_samples, MarkerKind.VOLUME_TRIGGER, VOLUME_LABEL)
    if cfg.emit_slice_triggers:
        per = spt / cfg.n_slices
        sl = np.round(np.arange(n_vol * cfg.n_slices) * per).astype(np.int64)
        vol_markers = vol_markers.merged(EventMarkers.from_samples(sl, MarkerKind.SLICE_TRIGGER, "Slice"))
    stim_markers = _stimulus_markers(cfg, n, rate)

    fmri, boxcar, reg, active, brain = _fmri_parts(cfg, fmri_rng)

    ssvep_oz = ssvep[labels.index(cfg.occipital_channels[0])]
    power_tr = np.add.reduceat(ssvep_oz[: int(round(n_vol * spt))] ** 2, vol_samples) / np.diff(
        np.append(vol_samples, int(round(n_vol * spt))))

    truth = PhantomTruth(
        clean=clean, ga=ga, bcg=bcg, r_peaks=r_peaks, ssvep_power_tr=power_tr,
        task_state=gain, boxcar=boxcar, bold_regressor=reg, activation_mask=active,
        brain_mask=brain, bcg_sources=bcg_src, bcg_topography=topo, seed=cfg.seed,
    )
    raw = EegRecording(
        data=(clean + bcg) + ga,
        sampling_rate=rate,
        channel_labels=labels + (cfg.ecg_label,),
        markers=stim_markers.merged(vol_markers),
    )
    return Phantom(cfg, raw, fmri, truth, stim_markers, vol_markers)


def emit_condition(phantom: Phantom, condition) -> EegRecording:
    """EEG as recorded under ``condition`` (Outside, ScannerOff or ScannerOn)."""
    condition = Condition(condition.value if isinstance(condition, Condition) else condition)
    tr = phantom.truth
    if condition is Condition.SCANNER_ON:
        return phantom.raw
    data = tr.clean if condition is Condition.OUTSIDE else tr.clean + tr.bcg
    return phantom.raw.replace(data=data, markers=phantom.stimulus_markers)
