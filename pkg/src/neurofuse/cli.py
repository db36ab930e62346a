"""``neurofuse`` command line: phantom, denoise, analyze, fuse and report.

Every command reads an optional TOML config (``-c``) whose sections mirror
the commands; flags given on the command line override config keys. Reports
are JSON with a ``schema_version`` field and echo the resolved parameters.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import _svg, artifacts, dsp, fusion, ica, phantom
from ._validation import resolve_threads
from .datamodel import EegRecording, MarkerKind, StatKind, StatMap
from .errors import (
    ConfigError,
    InvalidConfig,
    IoFailure,
    LengthMismatch,
    NeurofuseError,
    NonConvergenceWarning,
)
from .formats import (
    export_table,
    load_brainvision,
    read_nifti,
    write_brainvision,
    write_nifti,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("neurofuse")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_WARN = 0, 6

DEFAULTS: dict[str, dict] = {
    "markers": {
        "volume_trigger": ["R128"],
        "slice_trigger": [],
        "stimulus_on": ["S  1"],
        "stimulus_off": ["S  2"],
        "r_peak": [],
    },
    "phantom": {"condition": "ScannerOn"},
    "denoise": {
        "skip_ga": False,
        "skip_bcg": False,
        "ica": False,
        "ica_reject": [],
        "align": "volume",
        "aas_window": 15,
        "bcg_window": 21,
        "bcg_delay_s": 0.21,
        "ecg_channel": "ECG",
        "n_slices": 20,
        "ica_components": 0,
        "ica_threshold": 0.7,
        "ica_max_iter": 200,
        "binary_format": "IEEE_FLOAT_32",
    },
    "analyze": {
        "channel": "Oz",
        "stimulus_hz": 12.0,
        "n_harmonics": 3,
        "segment_seconds": 4.0,
        "overlap_fraction": 0.5,
        "bandwidth_hz": 1.0,
        "alpha": 0.05,
        "max_freq_hz": 45.0,
    },
    "fuse": {
        "channel": "Oz",
        "band_hz": [11.0, 13.0],
        "order": 20,
        "tr_s": 0.0,
        "q": 0.05,
        "fwhm_mm": 8.0,
        "highpass_hz": 0.005,
        "ar1": True,
    },
}
# PhantomConfig fields are accepted verbatim in [phantom]
PHANTOM_FIELDS = set(phantom.PhantomConfig().to_dict()) | {"condition"}


# ---------------------------------------------------------------- config

def _check_type(section: str, key: str, value, default):
    where = f"[{section}] {key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise InvalidConfig(f"{where} must be true or false")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidConfig(f"{where} must be an integer")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise InvalidConfig(f"{where} must be a finite number")
        value = float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise InvalidConfig(f"{where} must be a string")
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise InvalidConfig(f"{where} must be a list")
    return value


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the TOML file, then ``overrides`` (``{section: {key: value}}``)."""
    cfg = copy.deepcopy(DEFAULTS)
    layers = []
    if path is not None:
        p = Path(path)
        try:
            with open(p, "rb") as fh:
                layers.append(tomllib.load(fh))
        except FileNotFoundError:
            raise ConfigError(f"config file {p} does not exist") from None
        except OSError as exc:
            raise IoFailure(f"cannot read config {p}: {exc.strerror or exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config {p} is not valid TOML: {exc}") from None
    if overrides:
        layers.append(overrides)
    for layer in layers:
        for section, values in layer.items():
            if section not in cfg:
                raise InvalidConfig(f"unknown config section [{section}]")
            if not isinstance(values, dict):
                raise InvalidConfig(f"[{section}] must be a table")
            for key, value in values.items():
                if section == "phantom":
                    if key not in PHANTOM_FIELDS:
                        raise InvalidConfig(f"unknown key {key!r} in [phantom]")
                    cfg[section][key] = value
                    continue
                if key not in cfg[section]:
                    raise InvalidConfig(f"unknown key {key!r} in [{section}]")
                cfg[section][key] = _check_type(section, key, value, DEFAULTS[section][key])
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    d, a, f = cfg["denoise"], cfg["analyze"], cfg["fuse"]
    if d["aas_window"] < 2 or d["bcg_window"] < 2:
        raise InvalidConfig("averaging windows need at least 2 epochs")
    if d["n_slices"] < 1 or d["ica_components"] < 0 or d["ica_max_iter"] < 1:
        raise InvalidConfig("n_slices, ica_components and ica_max_iter must be positive")
    if d["align"] not in ("volume", "slice"):
        raise InvalidConfig("[denoise] align must be 'volume' or 'slice'")
    if not all(isinstance(x, int) and not isinstance(x, bool) and x >= 0 for x in d["ica_reject"]):
        raise InvalidConfig("[denoise] ica_reject must list component indices")
    if d["binary_format"].upper() not in ("IEEE_FLOAT_32", "INT_16"):
        raise InvalidConfig("binary_format must be IEEE_FLOAT_32 or INT_16")
    if not 0 <= a["overlap_fraction"] < 1 or a["segment_seconds"] <= 0:
        raise InvalidConfig("need segment_seconds > 0 and overlap_fraction in [0, 1)")
    if not 0 < a["alpha"] < 1 or a["n_harmonics"] < 1 or a["bandwidth_hz"] <= 0:
        raise InvalidConfig("alpha must be in (0, 1), n_harmonics >= 1, bandwidth_hz > 0")
    if len(f["band_hz"]) != 2 or not 0 < f["band_hz"][0] < f["band_hz"][1]:
        raise InvalidConfig("[fuse] band_hz must be [low, high] with 0 < low < high")
    if not 0 < f["q"] < 1 or f["fwhm_mm"] < 0 or f["highpass_hz"] < 0 or f["tr_s"] < 0:
        raise InvalidConfig("[fuse] needs 0 < q < 1 and non-negative fwhm_mm, highpass_hz, tr_s")
    if f["order"] < 2 or f["order"] % 2:
        raise InvalidConfig("[fuse] order must be an even integer >= 2")
    for key, descs in cfg["markers"].items():
        if not all(isinstance(x, str) for x in descs):
            raise InvalidConfig(f"[markers] {key} must list description strings")
    try:
        phantom.Condition(cfg["phantom"]["condition"])
    except ValueError:
        raise InvalidConfig(
            f"unknown condition {cfg['phantom']['condition']!r} "
            f"(one of {[c.value for c in phantom.Condition]})"
        ) from None


def _description_map(cfg: dict) -> dict:
    kinds = {
        "volume_trigger": MarkerKind.VOLUME_TRIGGER,
        "slice_trigger": MarkerKind.SLICE_TRIGGER,
        "stimulus_on": MarkerKind.STIMULUS_ON,
        "stimulus_off": MarkerKind.STIMULUS_OFF,
        "r_peak": MarkerKind.R_PEAK,
    }
    return {desc: kinds[k] for k, descs in cfg["markers"].items() for desc in descs}


def _phantom_config(cfg: dict) -> phantom.PhantomConfig:
    opts = {k: v for k, v in cfg["phantom"].items() if k != "condition"}
    return phantom.PhantomConfig.from_dict(opts)


# ---------------------------------------------------------------- output helpers

def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if hasattr(obj, "value") and not isinstance(obj, (int, float, str)):
        return obj.value
    return obj


def _write_json(path: Path, payload: dict) -> Path:
    body = {"schema_version": SCHEMA_VERSION, **payload}
    text = json.dumps(_plain(body), indent=2, sort_keys=True) + "\n"
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc.strerror or exc}") from None
    return path


def _write_text(path: Path, text: str) -> Path:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc.strerror or exc}") from None
    return path


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create output directory {out}: {exc.strerror or exc}") from None
    if not os.access(out, os.W_OK):
        raise IoFailure(f"output directory {out} is not writable")
    return out


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise IoFailure(f"{what} {p} does not exist")
    return p


def _read_eeg(path, cfg) -> EegRecording:
    rec, report = load_brainvision(_require_file(path, "EEG header"), _description_map(cfg))
    if report.dropped_markers:
        log.warning("dropped %d malformed marker lines from %s", report.dropped_markers, path)
    return rec


# ---------------------------------------------------------------- phantom

def _rle(mask) -> list[list[int]]:
    """``[start, length]`` runs of true voxels in Fortran (NIfTI) order."""
    flat = np.asarray(mask, bool).ravel(order="F").astype(np.int8)
    edges = np.flatnonzero(np.diff(np.concatenate([[0], flat, [0]])))
    return [[int(a), int(b - a)] for a, b in zip(edges[::2], edges[1::2])]


def cmd_phantom(cfg: dict, out) -> dict:
    """Synthesize a dataset: EEG (BrainVision), fMRI (NIfTI) and a truth sidecar."""
    pcfg = _phantom_config(cfg)
    out = _outdir(out)
    ph = phantom.gen_phantom(pcfg)
    cond = phantom.Condition(cfg["phantom"]["condition"])
    rec = phantom.emit_condition(ph, cond)
    write_brainvision(rec, out / "eeg")
    write_nifti(ph.fmri, out / "fmri.nii")
    vox = ph.fmri.voxel_size
    t = ph.truth
    write_nifti(StatMap(t.activation_mask.astype(float), StatKind.MASK, vox), out / "activation_mask.nii")
    write_nifti(StatMap(t.brain_mask.astype(float), StatKind.MASK, vox), out / "brain_mask.nii")
    files = ["eeg.vhdr", "eeg.vmrk", "eeg.eeg", "fmri.nii", "activation_mask.nii", "brain_mask.nii"]
    truth = {
        "kind": "phantom_truth",
        "files": files,
        "seed": pcfg.seed,
        "activation_mask_rle": _rle(t.activation_mask),
        "brain_mask_rle": _rle(t.brain_mask),
        "mask_dims": list(t.activation_mask.shape),
        "mask_order": "F",
        "markers": [
            {"sample": m.sample, "kind": m.kind.value, "label": m.label}
            for m in rec.markers
        ],
        "condition": cond.value,
        "config": pcfg.to_dict(),
        "n_volumes": pcfg.n_volumes,
        "slice_hz": pcfg.slice_hz,
        "r_peaks": t.r_peaks,
        "boxcar": t.boxcar,
        "bold_regressor": t.bold_regressor,
        "ssvep_power_tr": t.ssvep_power_tr,
        "n_active_voxels": int(t.activation_mask.sum()),
        "occipital_channels": list(pcfg.occipital_channels),
    }
    _write_json(out / "truth.json", truth)
    log.info("phantom written to %s", out)
    return truth


# ---------------------------------------------------------------- denoise

def _eeg_rows(rec: EegRecording, ecg: str) -> list[int]:
    return [i for i, lab in enumerate(rec.channel_labels) if lab != ecg and i not in rec.bad_channels]


def _rms(x) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def _slice_hz(rec: EegRecording, n_slices: int) -> float:
    sl = rec.markers.samples(MarkerKind.SLICE_TRIGGER)
    if sl.size > 1:
        return rec.sampling_rate / float(np.median(np.diff(sl)))
    vol = rec.markers.samples(MarkerKind.VOLUME_TRIGGER)
    if vol.size > 1:
        return n_slices * rec.sampling_rate / float(np.median(np.diff(vol)))
    return float("nan")


def _line_power(data, rate, freqs_hz, seg_s=4.0) -> np.ndarray:
    est = dsp.welch_psd(data, seg_s, 0.5, rate_hz=rate)
    idx = [int(np.argmin(np.abs(est.freqs - f))) for f in freqs_hz]
    return est.power[:, idx].mean(axis=0)


def _band_mean_power(data, rate, band, seg_s=4.0) -> float:
    est = dsp.welch_psd(data, seg_s, 0.5, rate_hz=rate)
    return float(dsp.band_power(est, band).mean())


def _db(before, after):
    before, after = np.asarray(before, float), np.asarray(after, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return 10.0 * np.log10(before / after)


def cmd_denoise(cfg: dict, inp, out) -> dict:
    """Gradient (AAS), R-peak detection, pulse artifact and optional ICA, in that order."""
    d = cfg["denoise"]
    out = _outdir(out)
    rec = _read_eeg(inp, cfg)
    ecg = d["ecg_channel"]
    rows = _eeg_rows(rec, ecg)
    rate = rec.sampling_rate
    stages = []
    cur = rec
    slice_hz = _slice_hz(rec, d["n_slices"])

    if not d["skip_ga"]:
        kind = MarkerKind.SLICE_TRIGGER if d["align"] == "slice" else MarkerKind.VOLUME_TRIGGER
        res = artifacts.aas_correct(cur, kind, d["aas_window"])
        harmonics = [k * slice_hz for k in range(1, 7) if k * slice_hz < rate / 2]
        red = _db(_line_power(cur.data[rows], rate, harmonics),
                  _line_power(res.cleaned.data[rows], rate, harmonics))
        stages.append({
            "stage": "gradient",
            "method": "AAS",
            "alignment": kind.value,
            "window_epochs": d["aas_window"],
            "n_epochs": int(res.template.epoch_starts.size),
            "slice_hz": slice_hz,
            "rms_before_uv": _rms(cur.data[rows]),
            "rms_after_uv": _rms(res.cleaned.data[rows]),
            "median_epoch_residual_rms_uv": float(np.median(res.residual_rms)),
            "power_reduction_db": [{"freq_hz": f, "db": v} for f, v in zip(harmonics, red)],
        })
        cur = res.cleaned

    r_peaks = None
    use_ica = d["ica"] or bool(d["ica_reject"])
    if not d["skip_bcg"] or use_ica:
        r_peaks = artifacts.detect_r_peaks(cur.channel(ecg), rate)
        rr = np.diff(r_peaks.samples()) / rate
        stages.append({
            "stage": "r_peaks",
            "n_peaks": len(r_peaks),
            "mean_heart_rate_bpm": float(60.0 / rr.mean()) if rr.size else None,
        })

    if not d["skip_bcg"]:
        res = artifacts.bcg_correct(cur, r_peaks, d["bcg_delay_s"], d["bcg_window"], exclude=(ecg,))
        band = (0.5, 7.0)
        stages.append({
            "stage": "pulse",
            "method": "template subtraction",
            "window_epochs": d["bcg_window"],
            "delay_s": d["bcg_delay_s"],
            "rms_before_uv": _rms(cur.data[rows]),
            "rms_after_uv": _rms(res.cleaned.data[rows]),
            "median_epoch_residual_rms_uv": float(np.median(res.residual_rms)),
            "power_reduction_db": [{
                "band_hz": list(band),
                "db": float(_db(_band_mean_power(cur.data[rows], rate, band),
                                _band_mean_power(res.cleaned.data[rows], rate, band))),
            }],
        })
        cur = res.cleaned

    if use_ica:
        cleaner = ica.ICACleaner(
            n_components=d["ica_components"] or None,
            threshold=d["ica_threshold"],
            reject=d["ica_reject"] or None,
            max_iter=d["ica_max_iter"],
            ecg_channel=ecg,
            slice_hz=slice_hz if math.isfinite(slice_hz) else None,
        ).fit(cur, r_peaks)
        after = cleaner.transform(cur)
        stages.append({
            "stage": "ica",
            "n_components": cleaner.model_.n_components,
            "converged": np.asarray(cleaner.model_.converged).tolist(),
            "n_iter": np.asarray(cleaner.model_.n_iter).tolist(),
            "rejected": cleaner.rejected_,
            "scores": [
                {"index": s.index, "bcg": s.bcg_score, "gradient": s.gradient_score,
                 "verdict": s.verdict.value}
                for s in cleaner.scores_
            ],
            "rms_before_uv": _rms(cur.data[rows]),
            "rms_after_uv": _rms(after.data[rows]),
        })
        _write_text(out / "ica_model.json", cleaner.model_.to_json())
        cur = after

    write_brainvision(cur, out / "eeg_clean", d["binary_format"])
    report = {
        "kind": "denoise_report",
        "input": Path(inp).name,
        "stages": stages,
        "config": {"denoise": d, "markers": cfg["markers"]},
    }
    _write_json(out / "denoise_report.json", report)
    return report


# ---------------------------------------------------------------- analyze

def _local_peaks(freqs, values, fmax) -> list[tuple[float, float]]:
    sel = np.flatnonzero((freqs > 0) & (freqs <= fmax))
    peaks = [i for i in sel[1:-1] if values[i] > values[i - 1] and values[i] >= values[i + 1] and values[i] > 0]
    peaks.sort(key=lambda i: -values[i])
    return [(float(freqs[i]), float(values[i])) for i in peaks]


def cmd_analyze(cfg: dict, inp, out) -> dict:
    """Task and rest PSDs, their contrast, 12 Hz topography, CSV tables and SVG plots."""
    a = cfg["analyze"]
    out = _outdir(out)
    rec = _read_eeg(inp, cfg)
    ref = rec.index(a["channel"])
    ecg = cfg["denoise"]["ecg_channel"]
    rows = _eeg_rows(rec, ecg)
    labels = [rec.channel_labels[i] for i in rows]
    psd_task, psd_rest = fusion.task_rest_psd(rec, a["segment_seconds"], a["overlap_fraction"])
    contrast = fusion.spectral_contrast(psd_task, psd_rest)
    freqs = psd_task.freqs
    keep = freqs <= a["max_freq_hz"]

    psd_cols = ["freq_hz"] + [f"{lab}_{part}" for lab in labels for part in ("task", "rest")]
    psd_rows = [
        [float(freqs[k])] + [float(p.power[i, k]) for i in rows for p in (psd_task, psd_rest)]
        for k in np.flatnonzero(keep)
    ]
    export_table(psd_rows, psd_cols, out / "psd.csv")
    con_rows = [[float(freqs[k])] + [float(contrast[i, k]) for i in rows] for k in np.flatnonzero(keep)]
    export_table(con_rows, ["freq_hz"] + labels, out / "contrast.csv")

    peaks = _local_peaks(freqs, contrast[ref], a["max_freq_hz"])[:3]
    expected = [k * a["stimulus_hz"] for k in range(1, a["n_harmonics"] + 1)]
    harmonics = fusion.harmonic_peaks(freqs, contrast[ref], expected)

    topo = fusion.topography_test(rec, a["stimulus_hz"], a["bandwidth_hz"], a["segment_seconds"],
                                  alpha=a["alpha"], exclude=(ecg,))
    order = np.argsort(-topo["z"], kind="stable")
    export_table(
        [[lab, float(dv), float(z), bool(sig)] for lab, dv, z, sig in
         zip(topo["labels"], topo["diff"], topo["z"], topo["significant"])],
        ["channel", "power_diff_uv2", "z", "significant"],
        out / "topography.csv",
    )
    _write_text(out / "contrast.svg", _svg.line_plot(
        freqs[keep], {f"{a['channel']} task - rest": contrast[ref, keep]},
        "Task minus rest power", "frequency (Hz)", "uV^2/Hz"))
    _write_text(out / "psd.svg", _svg.line_plot(
        freqs[keep], {f"{a['channel']} task": np.log10(psd_task.power[ref, keep]),
                      f"{a['channel']} rest": np.log10(psd_rest.power[ref, keep])},
        "Power spectral density", "frequency (Hz)", "log10 uV^2/Hz"))
    _write_text(out / "topography.svg", _svg.bar_plot(
        topo["labels"], topo["z"], f"{a['stimulus_hz']:g} Hz task vs rest", "z", topo["floor"]))

    report = {
        "kind": "analysis_report",
        "input": Path(inp).name,
        "reference_channel": a["channel"],
        "contrast_peaks": [{"freq_hz": f, "value": v} for f, v in peaks],
        "expected_harmonics_hz": expected,
        "harmonic_test": harmonics,
        "frequency_resolution_hz": float(freqs[1] - freqs[0]),
        "topography_top3": [topo["labels"][i] for i in order[:3]],
        "topography_floor_z": topo["floor"],
        "n_significant_channels": int(np.sum(topo["significant"])),
        "config": {"analyze": a},
    }
    _write_json(out / "analysis_report.json", report)
    return report


# ---------------------------------------------------------------- fuse

def cmd_fuse(cfg: dict, eeg_path, fmri_path, out, n_jobs=None) -> dict:
    """EEG-informed and boxcar maps on the same fMRI run, plus their comparison."""
    f = cfg["fuse"]
    out = _outdir(out)
    rec = _read_eeg(eeg_path, cfg)
    fmri = read_nifti(_require_file(fmri_path, "fMRI image"))
    tr = f["tr_s"] or fmri.tr
    n_vol = fmri.n_volumes
    vol = rec.markers.samples(MarkerKind.VOLUME_TRIGGER)
    offset = int(vol[0]) if vol.size else 0
    need = int(round(n_vol * tr * rec.sampling_rate))
    have = rec.n_samples - offset
    if have < need:
        raise LengthMismatch(
            f"EEG covers {have / rec.sampling_rate:.2f} s after the first volume, "
            f"fMRI needs {n_vol} x {tr} s = {n_vol * tr:.2f} s"
        )
    eeg_pred = fusion.build_eeg_predictor(rec, f["channel"], tuple(f["band_hz"]), tr, n_vol,
                                          f["order"], offset_sample=offset)
    box = fusion.boxcar_from_markers(rec, tr, n_vol, offset)
    box_pred = fusion.Predictor(
        fusion.convolve_hrf(box.values, fusion.canonical_hrf(tr)), "Boxcar", tr, box.provenance
    )
    mappers = {}
    for name, pred in (("eeg", eeg_pred), ("boxcar", box_pred)):
        mappers[name] = fusion.ActivationMapper(
            q=f["q"], highpass_hz=f["highpass_hz"], fwhm_mm=f["fwhm_mm"], ar1=f["ar1"], n_jobs=n_jobs
        ).fit(fmri, pred)
    for name, m in mappers.items():
        write_nifti(m.r_map_, out / f"r_{name}.nii")
        write_nifti(m.glm_.t_map, out / f"t_{name}.nii")
        write_nifti(m.t_mask_, out / f"mask_{name}.nii")
    e, b = mappers["eeg"], mappers["boxcar"]
    cmp_t = fusion.compare_maps(e.glm_.t_map, b.glm_.t_map, (e.t_mask_, b.t_mask_), e.brain_mask_)
    cmp_r = fusion.compare_maps(e.r_map_, b.r_map_, None, e.brain_mask_)
    n_brain = int(e.brain_mask_.sum())

    export_table(
        [[k, float(k * tr), float(x), float(y)] for k, (x, y) in
         enumerate(zip(eeg_pred.values, box_pred.values))],
        ["volume_index", "time_s", "eeg", "boxcar"],
        out / "predictors.csv",
    )
    _write_text(out / "predictors.svg", _svg.line_plot(
        np.arange(n_vol) * tr,
        {"EEG envelope": eeg_pred.values,
         "boxcar": (box_pred.values - box_pred.values.mean()) / (box_pred.values.std() or 1.0)},
        "BOLD predictors", "time (s)", "z"))

    report = {
        "kind": "comparison",
        "eeg": Path(eeg_path).name,
        "fmri": Path(fmri_path).name,
        "spatial_r": cmp_t["spatial_r"],
        "spatial_r_correlation_maps": cmp_r["spatial_r"],
        "dice": cmp_t["dice"],
        "predictor_r": float(np.corrcoef(eeg_pred.values, box_pred.values)[0, 1]),
        "n_brain_voxels": n_brain,
        "files": {
            f"{prefix}_{name}.nii": kind
            for name in mappers
            for prefix, kind in (("r", "r"), ("t", "t"), ("mask", "mask"))
        },
        "maps": {
            name: {
                "n_significant": int(m.t_mask_.values.sum()),
                "fraction_significant": float(m.t_mask_.values.sum() / max(n_brain, 1)),
                "t_threshold": m.t_threshold_,
                "ar1_rho": m.glm_.ar1_rho,
                "dof": m.glm_.dof,
            }
            for name, m in mappers.items()
        },
        "config": {"fuse": f},
    }
    _write_json(out / "comparison.json", report)
    return report


# ---------------------------------------------------------------- report

REPORT_FILES = ("truth.json", "denoise_report.json", "analysis_report.json", "comparison.json")


def cmd_report(dirs, out=None) -> dict:
    """Collect the JSON reports found in ``dirs`` into one summary."""
    found = {}
    for d in dirs:
        d = Path(d)
        if not d.is_dir():
            raise IoFailure(f"{d} is not a directory")
        for name in REPORT_FILES:
            p = d / name
            if p.is_file():
                try:
                    found[name.removesuffix(".json")] = json.loads(p.read_text(encoding="utf-8"))
                except (OSError, json.JSONDecodeError) as exc:
                    raise IoFailure(f"cannot read report {p}: {exc}") from None
    if not found:
        raise IoFailure("no reports found in " + ", ".join(str(d) for d in dirs))
    summary = {"kind": "summary"}
    if "denoise_report" in found:
        for st in found["denoise_report"]["stages"]:
            if st["stage"] == "gradient":
                summary["ga_reduction_db_min"] = min(r["db"] for r in st["power_reduction_db"])
            if st["stage"] == "pulse":
                summary["bcg_band_reduction_db"] = st["power_reduction_db"][0]["db"]
    if "analysis_report" in found:
        ar = found["analysis_report"]
        summary["contrast_peaks_hz"] = [p["freq_hz"] for p in ar["contrast_peaks"]]
        summary["topography_top3"] = ar["topography_top3"]
    if "comparison" in found:
        summary["spatial_r"] = found["comparison"]["spatial_r"]
        summary["dice"] = found["comparison"]["dice"]
    if "truth" in found:
        occ = set(found["truth"]["occipital_channels"])
        if "topography_top3" in summary:
            summary["topography_matches_truth"] = set(summary["topography_top3"]) == occ
    summary["sources"] = sorted(found)
    if out is not None:
        out = Path(out)
        if out.parent:
            _outdir(out.parent)
        _write_json(out, summary)
    return summary


# ---------------------------------------------------------------- argument parsing

def _flag(p, name, section, key, **kw):
    p.add_argument(name, dest=f"{section}.{key}", default=None, **kw)


def _bool_flag(p, name, section, key, help):
    p.add_argument(name, dest=f"{section}.{key}", action="store_const", const=True, default=None, help=help)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="TOML config file; flags override its keys")
    common.add_argument("--dry-run", action="store_true",
                        help="validate and print the resolved parameters, write nothing")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads for voxel-wise maps (default: NEUROFUSE_THREADS or 1)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="neurofuse", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", parents=[common], help="synthesize a phantom dataset")
    p.add_argument("-o", "--output", required=True, help="output directory")
    _flag(p, "--seed", "phantom", "seed", type=int)
    _flag(p, "--condition", "phantom", "condition", choices=[c.value for c in phantom.Condition])
    _flag(p, "--duration", "phantom", "duration_s", type=float)
    _flag(p, "--cnr", "phantom", "cnr", type=float)
    _flag(p, "--bcg-amplitude", "phantom", "bcg_amplitude_uv", type=float)
    _flag(p, "--ssvep-amplitude", "phantom", "ssvep_amplitude_uv", type=float)

    p = sub.add_parser("denoise", parents=[common], help="remove gradient and pulse artifacts")
    p.add_argument("-i", "--input", required=True, help="BrainVision header (.vhdr)")
    p.add_argument("-o", "--output", required=True, help="output directory")
    _bool_flag(p, "--skip-ga", "denoise", "skip_ga", "skip gradient artifact subtraction")
    _bool_flag(p, "--skip-bcg", "denoise", "skip_bcg", "skip pulse artifact subtraction")
    _bool_flag(p, "--ica", "denoise", "ica", "run ICA after template subtraction")
    _flag(p, "--window-epochs", "denoise", "aas_window", type=int, help="AAS averaging window")
    _flag(p, "--align", "denoise", "align", choices=["volume", "slice"], help="AAS trigger alignment")
    _flag(p, "--bcg-delay", "denoise", "bcg_delay_s", type=float, help="R-peak to pulse artifact delay (s)")
    _flag(p, "--reject", "denoise", "ica_reject", type=int, nargs="+",
          help="explicit ICA components to remove instead of the automatic verdicts")
    _flag(p, "--bcg-window", "denoise", "bcg_window", type=int)
    _flag(p, "--ecg-channel", "denoise", "ecg_channel")
    _flag(p, "--n-slices", "denoise", "n_slices", type=int)

    p = sub.add_parser("analyze", parents=[common], help="spectral contrast and topography")
    p.add_argument("-i", "--input", required=True, help="cleaned BrainVision header (.vhdr)")
    p.add_argument("-o", "--output", required=True, help="output directory")
    _flag(p, "--channel", "analyze", "channel")
    _flag(p, "--stimulus-hz", "analyze", "stimulus_hz", type=float)

    p = sub.add_parser("fuse", parents=[common], help="EEG-informed and boxcar fMRI maps")
    p.add_argument("--eeg", required=True, help="cleaned BrainVision header (.vhdr)")
    p.add_argument("--fmri", required=True, help="4-D NIfTI series")
    p.add_argument("-o", "--output", required=True, help="output directory")
    _flag(p, "--channel", "fuse", "channel")
    _flag(p, "--q", "fuse", "q", type=float)
    _flag(p, "--fwhm", "fuse", "fwhm_mm", type=float)

    p = sub.add_parser("report", parents=[common], help="summarize reports from output directories")
    p.add_argument("dirs", nargs="+", help="directories holding neurofuse reports")
    p.add_argument("-o", "--output", default=None, help="summary JSON path")
    return parser


def _overrides(args) -> dict:
    out: dict[str, dict] = {}
    for dest, value in vars(args).items():
        if "." in dest and value is not None:
            section, key = dest.split(".", 1)
            out.setdefault(section, {})[key] = value
    return out


def _run(args) -> None:
    cfg = load_config(args.config, _overrides(args))
    if args.command == "phantom":
        _phantom_config(cfg)
    if args.dry_run:
        resolved = {"command": args.command, "threads": resolve_threads(args.threads), "config": cfg}
        print(json.dumps(_plain(resolved), indent=2, sort_keys=True))
        return
    if args.command == "phantom":
        cmd_phantom(cfg, args.output)
    elif args.command == "denoise":
        cmd_denoise(cfg, args.input, args.output)
    elif args.command == "analyze":
        cmd_analyze(cfg, args.input, args.output)
    elif args.command == "fuse":
        cmd_fuse(cfg, args.eeg, args.fmri, args.output, n_jobs=args.threads)
    elif args.command == "report":
        summary = cmd_report(args.dirs, args.output)
        print(json.dumps(_plain(summary), indent=2, sort_keys=True))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="neurofuse: %(levelname)s: %(message)s",
    )
    if args.threads is not None and args.threads < 1:
        print("neurofuse: error: --threads must be >= 1", file=sys.stderr)
        return InvalidConfig.exit_code
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NonConvergenceWarning)
        try:
            _run(args)
        except NeurofuseError as exc:
            print(f"neurofuse: error: {type(exc).__name__}: {exc}", file=sys.stderr)
            return exc.exit_code
    flagged = [w for w in caught if issubclass(w.category, NonConvergenceWarning)]
    for w in caught:
        print(f"neurofuse: warning: {w.message}", file=sys.stderr)
    return EXIT_WARN if flagged else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
