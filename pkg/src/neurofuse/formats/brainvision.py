"""BrainVision Core Data Format (.vhdr / .vmrk / .eeg), binary data only.

Marker positions in .vmrk files are 1-based; they are converted to 0-based
sample indices on read and back on write.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..datamodel import EegRecording, EventMarkers, Marker, MarkerKind
from ..errors import (
    BadMarkerLine,
    DataError,
    FormatError,
    IoFailure,
    MissingSection,
    PayloadSizeMismatch,
    UnsupportedFormat,
)

__all__ = [
    "ChannelInfo",
    "BrainVisionHeader",
    "ParseReport",
    "DEFAULT_DESCRIPTION_MAP",
    "DEFAULT_TYPE_MAP",
    "read_header",
    "load_brainvision",
    "parse_brainvision",
    "write_brainvision",
]

HEADER_IDS = (
    "Brain Vision Data Exchange Header File",
    "BrainVision Data Exchange Header File",
)
MARKER_IDS = (
    "Brain Vision Data Exchange Marker File",
    "BrainVision Data Exchange Marker File",
)
DTYPES = {"INT_16": np.dtype("<i2"), "IEEE_FLOAT_32": np.dtype("<f4")}
UNIT_SCALE = {"µV": 1.0, "μV": 1.0, "uV": 1.0, "": 1.0, "mV": 1e3, "V": 1e6, "nV": 1e-3}
SEGMENT = "New Segment"

DEFAULT_DESCRIPTION_MAP = {
    "R128": MarkerKind.VOLUME_TRIGGER,
    "S  1": MarkerKind.STIMULUS_ON,
    "S  2": MarkerKind.STIMULUS_OFF,
}
DEFAULT_TYPE_MAP = {
    "Volume": MarkerKind.VOLUME_TRIGGER,
    "Slice": MarkerKind.SLICE_TRIGGER,
    "Pulse Artifact": MarkerKind.R_PEAK,
}
# kind -> (type, default description) used by the writer
WRITE_TYPES = {
    MarkerKind.VOLUME_TRIGGER: ("Response", "R128"),
    MarkerKind.SLICE_TRIGGER: ("Slice", "Slice"),
    MarkerKind.STIMULUS_ON: ("Stimulus", "S  1"),
    MarkerKind.STIMULUS_OFF: ("Stimulus", "S  2"),
    MarkerKind.R_PEAK: ("Pulse Artifact", "R"),
    MarkerKind.OTHER: ("Comment", ""),
}


@dataclass(frozen=True)
class ChannelInfo:
    label: str
    reference: str = ""
    resolution: float = 1.0
    unit: str = "µV"


@dataclass(frozen=True)
class BrainVisionHeader:
    data_file: str
    marker_file: str
    n_channels: int
    sampling_interval_us: float
    orientation: str  # MULTIPLEXED | VECTORIZED
    binary_format: str  # INT_16 | IEEE_FLOAT_32
    channels: tuple[ChannelInfo, ...]
    data_format: str = "BINARY"

    @property
    def sampling_rate(self) -> float:
        return 1e6 / self.sampling_interval_us


@dataclass(frozen=True)
class ParseReport:
    header: BrainVisionHeader
    n_marker_lines: int
    dropped_markers: int
    segments: tuple[int, ...] = ()
    problems: tuple[str, ...] = field(default_factory=tuple)


def _read_text(path: Path) -> str:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror or exc}") from None
    if raw.startswith(b"\xef\xbb\xbf"):
        raw = raw[3:]
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        return raw.decode("latin-1")


def _sections(text: str, ids) -> dict[str, dict[str, str]]:
    """Split an INI-like document into ``{section: {key: value}}``.

    Lines outside ``key=value`` form (free text in [Comment]) are ignored.
    """
    lines = text.splitlines()
    if not lines or not lines[0].strip().startswith(ids):
        raise FormatError(f"missing identification line (expected {ids[0]!r})")
    out: dict[str, dict[str, str]] = {}
    current = None
    for line in lines[1:]:
        s = line.strip()
        if not s or s.startswith(";"):
            continue
        if s.startswith("[") and s.endswith("]"):
            current = out.setdefault(s[1:-1].strip(), {})
            continue
        if current is None or "=" not in s:
            continue
        key, _, value = s.partition("=")
        current.setdefault(key.strip(), value.strip())
    return out


def _require(sections, name):
    try:
        return sections[name]
    except KeyError:
        raise MissingSection(f"[{name}] section is missing") from None


def _number(value, what, cast=float):
    try:
        out = cast(value)
    except (TypeError, ValueError):
        raise FormatError(f"{what} is not a number: {value!r}") from None
    if cast is float and not np.isfinite(out):
        raise FormatError(f"{what} must be finite")
    return out


def read_header(vhdr_path) -> BrainVisionHeader:
    path = Path(vhdr_path)
    sec = _sections(_read_text(path), HEADER_IDS)
    common = _require(sec, "Common Infos")
    fmt = common.get("DataFormat", "BINARY").upper()
    if fmt != "BINARY":
        raise UnsupportedFormat(f"DataFormat {fmt} is not supported (binary only)")
    orient = common.get("DataOrientation", "MULTIPLEXED").upper()
    if orient not in ("MULTIPLEXED", "VECTORIZED"):
        raise UnsupportedFormat(f"DataOrientation {orient} is not supported")
    if "DataType" in common and common["DataType"].upper() != "TIMEDOMAIN":
        raise UnsupportedFormat(f"DataType {common['DataType']} is not supported")
    for key in ("DataFile", "NumberOfChannels", "SamplingInterval"):
        if key not in common:
            raise MissingSection(f"[Common Infos] lacks {key}")
    n_ch = _number(common["NumberOfChannels"], "NumberOfChannels", int)
    if n_ch < 1:
        raise FormatError("NumberOfChannels must be at least 1")
    interval = _number(common["SamplingInterval"], "SamplingInterval")
    if interval <= 0:
        raise FormatError("SamplingInterval must be positive")
    binfmt = _require(sec, "Binary Infos").get("BinaryFormat", "").upper()
    if binfmt not in DTYPES:
        raise UnsupportedFormat(f"BinaryFormat {binfmt or '<missing>'} is not supported")
    chan_sec = _require(sec, "Channel Infos")
    channels = []
    for i in range(1, n_ch + 1):
        if f"Ch{i}" not in chan_sec:
            raise MissingSection(f"[Channel Infos] lacks Ch{i}")
        parts = chan_sec[f"Ch{i}"].split(",")
        parts += [""] * (4 - len(parts))
        label = parts[0].replace("\\1", ",")
        res = _number(parts[2], f"resolution of Ch{i}") if parts[2].strip() else 1.0
        if binfmt == "INT_16" and res <= 0:
            raise FormatError(f"resolution of Ch{i} must be positive")
        unit = parts[3].strip() or "µV"
        if unit not in UNIT_SCALE:
            raise UnsupportedFormat(f"unit {unit!r} of Ch{i} is not supported")
        channels.append(ChannelInfo(label, parts[1].replace("\\1", ","), res, unit))
    for key in ("DataFile", "MarkerFile"):
        name = common.get(key, "")
        if "\x00" in name or (key == "DataFile" and not name):
            raise FormatError(f"[Common Infos] {key} is not a usable file name")
    labels = [c.label for c in channels]
    if len(set(labels)) != len(labels):
        raise FormatError("channel labels are not unique")
    return BrainVisionHeader(
        data_file=common["DataFile"],
        marker_file=common.get("MarkerFile", ""),
        n_channels=n_ch,
        sampling_interval_us=interval,
        orientation=orient,
        binary_format=binfmt,
        channels=tuple(channels),
    )


KIND_TYPES = {k.value: k for k in MarkerKind}


def _marker_kind(mtype: str, desc: str, desc_map, type_map) -> MarkerKind:
    # types named after a MarkerKind come from our own writer and are exact
    if mtype in KIND_TYPES:
        return KIND_TYPES[mtype]
    if desc in desc_map:
        return desc_map[desc]
    return type_map.get(mtype, MarkerKind.OTHER)


def _read_markers(path: Path, n_samples: int, desc_map, type_map, strict: bool):
    sec = _sections(_read_text(path), MARKER_IDS)
    infos = _require(sec, "Marker Infos")
    keys = sorted(
        (k for k in infos if re.fullmatch(r"Mk[0-9]+", k)), key=lambda k: int(k[2:])
    )
    markers, segments, problems = [], [], []
    for key in keys:
        parts = infos[key].split(",")
        try:
            if len(parts) < 5:
                raise BadMarkerLine(f"{key}: expected at least 5 fields")
            mtype, desc = parts[0].strip(), parts[1].replace("\\1", ",")
            pos = int(parts[2])
            int(parts[3]), int(parts[4])
            if not 1 <= pos <= n_samples:
                raise BadMarkerLine(f"{key}: position {pos} outside [1, {n_samples}]")
        except (ValueError, BadMarkerLine) as exc:
            msg = str(exc) if isinstance(exc, BadMarkerLine) else f"{key}: non-integer field"
            if strict:
                raise BadMarkerLine(msg) from None
            problems.append(msg)
            continue
        if mtype == SEGMENT:
            segments.append(pos - 1)
            continue
        markers.append(Marker(pos - 1, _marker_kind(mtype, desc, desc_map, type_map), desc))
    return EventMarkers(tuple(markers)), len(keys), tuple(segments), tuple(problems)


def load_brainvision(vhdr_path, description_map=None, type_map=None, strict: bool = False):
    """Read a recording; returns ``(EegRecording, ParseReport)``.

    Malformed marker lines are dropped and listed in the report, or raise
    :class:`BadMarkerLine` when ``strict``. "New Segment" entries are
    structural and reported as ``segments`` rather than events.
    """
    path = Path(vhdr_path)
    hdr = read_header(path)
    dtype = DTYPES[hdr.binary_format]
    data_path = path.parent / hdr.data_file
    try:
        raw = data_path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read data file {data_path}: {exc.strerror or exc}") from None
    frame = dtype.itemsize * hdr.n_channels
    if len(raw) % frame:
        raise PayloadSizeMismatch(
            f"{len(raw)} bytes is not a whole number of {hdr.n_channels}-channel samples"
        )
    n = len(raw) // frame
    if n == 0:
        raise PayloadSizeMismatch("data file holds no samples")
    flat = np.frombuffer(raw, dtype=dtype)
    if hdr.orientation == "MULTIPLEXED":
        samples = flat.reshape(n, hdr.n_channels).T
    else:
        samples = flat.reshape(hdr.n_channels, n)
    scale = np.array([c.resolution * UNIT_SCALE[c.unit] for c in hdr.channels])
    with np.errstate(invalid="ignore", over="ignore"):
        data = samples.astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise FormatError("data file holds non-finite samples")
    if hdr.binary_format == "INT_16" or np.any(scale != 1.0):
        data = data * scale[:, None]

    dmap = dict(DEFAULT_DESCRIPTION_MAP if description_map is None else description_map)
    tmap = dict(DEFAULT_TYPE_MAP if type_map is None else type_map)
    markers, n_lines, segments, problems = EventMarkers(), 0, (), ()
    if hdr.marker_file:
        mpath = path.parent / hdr.marker_file
        if not mpath.exists():
            raise IoFailure(f"marker file {mpath} does not exist")
        markers, n_lines, segments, problems = _read_markers(mpath, n, dmap, tmap, strict)
    rec = EegRecording(
        data=data,
        sampling_rate=hdr.sampling_rate,
        channel_labels=tuple(c.label for c in hdr.channels),
        markers=markers,
    )
    return rec, ParseReport(hdr, n_lines, len(problems), segments, problems)


def parse_brainvision(vhdr_path, description_map=None, type_map=None, strict: bool = False) -> EegRecording:
    return load_brainvision(vhdr_path, description_map, type_map, strict)[0]


def _escape(s: str) -> str:
    return s.replace(",", "\\1")


def _fmt_float(x: float) -> str:
    return repr(float(x))


def write_brainvision(
    rec: EegRecording,
    path_stem,
    binary_format: str = "IEEE_FLOAT_32",
    orientation: str = "MULTIPLEXED",
    resolution=None,
) -> tuple[Path, Path, Path]:
    """Write ``<stem>.vhdr``, ``<stem>.vmrk`` and ``<stem>.eeg``.

    Float32 stores microvolts directly. Int16 uses ``resolution`` (scalar or
    per channel, uV/bit); by default each channel gets ``max|x| / 32767``.
    """
    binary_format = binary_format.upper()
    orientation = orientation.upper()
    if binary_format not in DTYPES:
        raise UnsupportedFormat(f"BinaryFormat {binary_format} is not supported")
    if orientation not in ("MULTIPLEXED", "VECTORIZED"):
        raise UnsupportedFormat(f"DataOrientation {orientation} is not supported")
    stem = Path(path_stem)
    if stem.suffix in (".vhdr", ".vmrk", ".eeg"):
        stem = stem.with_suffix("")
    vhdr, vmrk, eeg = (stem.with_name(stem.name + ext) for ext in (".vhdr", ".vmrk", ".eeg"))
    data = rec.data
    n_ch = rec.n_channels
    if binary_format == "INT_16":
        if resolution is None:
            peak = np.abs(data).max(axis=1)
            res = np.where(peak > 0, peak / 32767.0, 1.0)
        else:
            res = np.broadcast_to(np.asarray(resolution, dtype=float), (n_ch,)).copy()
            if np.any(res <= 0):
                raise DataError("Int16 resolution must be positive")
        counts = np.round(data / res[:, None])
        if np.any(np.abs(counts) > 32767):
            raise DataError("values exceed the Int16 range at the chosen resolution")
        payload = counts.astype("<i2")
    else:
        res = np.ones(n_ch)
        payload = data.astype("<f4")
    if orientation == "MULTIPLEXED":
        payload = payload.T
    interval = 1e6 / rec.sampling_rate

    hdr_lines = [
        "Brain Vision Data Exchange Header File Version 1.0",
        "; Data written by neurofuse",
        "",
        "[Common Infos]",
        "Codepage=UTF-8",
        f"DataFile={eeg.name}",
        f"MarkerFile={vmrk.name}",
        "DataFormat=BINARY",
        f"DataOrientation={orientation}",
        "DataType=TIMEDOMAIN",
        f"NumberOfChannels={n_ch}",
        f"SamplingInterval={_fmt_float(interval)}",
        "",
        "[Binary Infos]",
        f"BinaryFormat={binary_format}",
        "",
        "[Channel Infos]",
        "; Ch<n>=<name>,<reference>,<resolution>,<unit>",
    ]
    for i, (label, r) in enumerate(zip(rec.channel_labels, res), start=1):
        hdr_lines.append(f"Ch{i}={_escape(label)},,{_fmt_float(r)},µV")

    mrk_lines = [
        "Brain Vision Data Exchange Marker File, Version 1.0",
        "",
        "[Common Infos]",
        "Codepage=UTF-8",
        f"DataFile={eeg.name}",
        "",
        "[Marker Infos]",
        "; Mk<n>=<type>,<description>,<position>,<size>,<channel>",
        f"Mk1={SEGMENT},,1,1,0",
    ]
    for k, m in enumerate(rec.markers, start=2):
        mtype, default = WRITE_TYPES[m.kind]
        desc = m.label
        if m.kind is MarkerKind.OTHER or desc != default:
            mtype = m.kind.value
        mrk_lines.append(f"Mk{k}={mtype},{_escape(desc)},{m.sample + 1},1,0")

    try:
        vhdr.write_text("\n".join(hdr_lines) + "\n", encoding="utf-8")
        vmrk.write_text("\n".join(mrk_lines) + "\n", encoding="utf-8")
        with open(eeg, "wb") as fh:
            fh.write(np.ascontiguousarray(payload).tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {stem}: {exc.strerror or exc}") from None
    return vhdr, vmrk, eeg
