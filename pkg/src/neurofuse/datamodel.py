"""In-memory containers for EEG recordings, fMRI series and statistic maps.

All containers are frozen; array payloads are copied on construction and
marked read-only, so instances can be shared freely. Marker positions are
integer sample indices, never seconds.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    DataError,
    NoMarkers,
    RateMismatch,
    ShapeMismatch,
    UnknownChannel,
)

__all__ = [
    "MarkerKind",
    "Marker",
    "EventMarkers",
    "EegRecording",
    "FmriSeries",
    "StatKind",
    "StatMap",
    "Epochs",
    "select_channels",
    "epoch_by_markers",
    "concatenate_runs",
]


def _frozen_array(values, ndim: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != ndim:
        raise ShapeMismatch(f"{name} must be {ndim}-D, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


class MarkerKind(enum.Enum):
    VOLUME_TRIGGER = "VolumeTrigger"
    SLICE_TRIGGER = "SliceTrigger"
    STIMULUS_ON = "StimulusOn"
    STIMULUS_OFF = "StimulusOff"
    R_PEAK = "RPeak"
    OTHER = "Other"


@dataclass(frozen=True)
class Marker:
    sample: int
    kind: MarkerKind
    label: str = ""


@dataclass(frozen=True)
class EventMarkers:
    """Ordered, immutable list of ``(sample, kind, label)`` entries."""

    entries: tuple[Marker, ...] = ()

    def __post_init__(self):
        entries = tuple(self.entries)
        for m in entries:
            if not isinstance(m.kind, MarkerKind):
                raise DataError(f"marker kind must be a MarkerKind, got {m.kind!r}")
        samples = [m.sample for m in entries]
        if any(b < a for a, b in zip(samples, samples[1:])):
            entries = tuple(sorted(entries, key=lambda m: m.sample))
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_samples(cls, samples: Iterable[int], kind: MarkerKind, label: str = ""):
        return cls(tuple(Marker(int(s), kind, label) for s in samples))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[Marker]:
        return iter(self.entries)

    def samples(self, kind: MarkerKind | None = None) -> np.ndarray:
        return np.array(
            [m.sample for m in self.entries if kind is None or m.kind is kind],
            dtype=np.int64,
        )

    def of_kind(self, kind: MarkerKind) -> "EventMarkers":
        return EventMarkers(tuple(m for m in self.entries if m.kind is kind))

    def shifted(self, offset: int) -> "EventMarkers":
        return EventMarkers(
            tuple(Marker(m.sample + offset, m.kind, m.label) for m in self.entries)
        )

    def merged(self, other: "EventMarkers") -> "EventMarkers":
        return EventMarkers(tuple(sorted(self.entries + other.entries, key=lambda m: m.sample)))


@dataclass(frozen=True, eq=False)
class EegRecording:
    """Multichannel EEG (channels x samples, microvolts)."""

    data: np.ndarray
    sampling_rate: float
    channel_labels: tuple[str, ...]
    markers: EventMarkers = EventMarkers()
    bad_channels: frozenset[int] = frozenset()

    def __post_init__(self):
        data = _frozen_array(self.data, 2, "data")
        labels = tuple(str(lab) for lab in self.channel_labels)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channel_labels", labels)
        object.__setattr__(self, "bad_channels", frozenset(int(b) for b in self.bad_channels))
        if not isinstance(self.markers, EventMarkers):
            object.__setattr__(self, "markers", EventMarkers(tuple(self.markers)))
        if not (self.sampling_rate > 0 and np.isfinite(self.sampling_rate)):
            raise DataError(f"sampling_rate must be positive, got {self.sampling_rate}")
        if len(labels) != data.shape[0]:
            raise ShapeMismatch(
                f"{len(labels)} channel labels for {data.shape[0]} data rows"
            )
        if len(set(labels)) != len(labels):
            raise DataError("channel labels must be unique")
        if not self.bad_channels <= set(range(len(labels))):
            raise DataError("bad_channels must index existing channels")
        n = data.shape[1]
        for m in self.markers:
            if not 0 <= m.sample < n:
                raise DataError(f"marker at sample {m.sample} outside [0, {n})")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sampling_rate

    @property
    def good_channels(self) -> list[int]:
        return [i for i in range(self.n_channels) if i not in self.bad_channels]

    def index(self, label: str) -> int:
        try:
            return self.channel_labels.index(label)
        except ValueError:
            raise UnknownChannel(f"unknown channel {label!r}") from None

    def channel(self, label: str) -> np.ndarray:
        return self.data[self.index(label)]

    def replace(self, **changes) -> "EegRecording":
        return replace(self, **changes)

    def with_data(self, data: np.ndarray) -> "EegRecording":
        return replace(self, data=data)

    def mark_bad(self, labels: Iterable[str]) -> "EegRecording":
        return replace(self, bad_channels=self.bad_channels | {self.index(l) for l in labels})

    def equals(self, other: "EegRecording") -> bool:
        """Value equality (bit-exact data, labels, markers, rate, bad set)."""
        return (
            self.sampling_rate == other.sampling_rate
            and self.channel_labels == other.channel_labels
            and self.markers == other.markers
            and self.bad_channels == other.bad_channels
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class FmriSeries:
    """4-D BOLD series shaped ``(nx, ny, nz, nt)``."""

    data: np.ndarray
    tr: float
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = _frozen_array(self.data, 4, "fmri data")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "voxel_size", tuple(float(v) for v in self.voxel_size))
        if data.shape[3] < 2:
            raise ShapeMismatch("fMRI series needs at least 2 volumes")
        if not self.tr > 0:
            raise DataError(f"TR must be positive, got {self.tr}")
        if len(self.voxel_size) != 3:
            raise ShapeMismatch("voxel_size must be a triple")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def n_volumes(self) -> int:
        return self.data.shape[3]

    def replace(self, **changes) -> "FmriSeries":
        return replace(self, **changes)

    def equals(self, other: "FmriSeries") -> bool:
        return (
            self.tr == other.tr
            and self.voxel_size == other.voxel_size
            and np.array_equal(self.data, other.data)
        )


class StatKind(enum.Enum):
    R = "r"
    T = "t"
    P = "p"
    Q = "q"
    MASK = "mask"


@dataclass(frozen=True, eq=False)
class StatMap:
    values: np.ndarray
    kind: StatKind
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        values = _frozen_array(self.values, 3, "stat map")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "kind", StatKind(self.kind))
        v = values[np.isfinite(values)]
        if self.kind is StatKind.R and np.any(np.abs(v) > 1.0):
            raise DataError("r map values must lie in [-1, 1]")
        if self.kind in (StatKind.P, StatKind.Q) and np.any((v < 0) | (v > 1)):
            raise DataError("p/q map values must lie in [0, 1]")
        if self.kind is StatKind.MASK and not np.all(np.isin(values, (0.0, 1.0))):
            raise DataError("mask values must be 0 or 1")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class Epochs:
    """Marker-locked windows, ``data`` shaped (epochs, channels, samples)."""

    data: np.ndarray
    origin_indices: np.ndarray
    dropped_count: int = 0

    def __post_init__(self):
        data = _frozen_array(self.data, 3, "epoch data")
        origins = np.array(self.origin_indices, dtype=np.int64)
        origins.flags.writeable = False
        if origins.shape != (data.shape[0],):
            raise ShapeMismatch("one origin index per epoch required")
        if np.any(np.diff(origins) <= 0):
            raise DataError("epoch origins must be strictly increasing")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "origin_indices", origins)

    def __len__(self) -> int:
        return self.data.shape[0]


def select_channels(rec: EegRecording, labels: Sequence[str]) -> EegRecording:
    """Return ``rec`` restricted to ``labels`` in the order given."""
    idx = [rec.index(lab) for lab in labels]
    bad = {idx.index(b) for b in rec.bad_channels if b in idx}
    return EegRecording(
        data=rec.data[idx],
        sampling_rate=rec.sampling_rate,
        channel_labels=tuple(labels),
        markers=rec.markers,
        bad_channels=bad,
    )


def epoch_by_markers(
    rec: EegRecording,
    kind: MarkerKind,
    pre_samples: int,
    post_samples: int,
) -> Epochs:
    """Cut ``[m - pre_samples, m + post_samples)`` around each marker of ``kind``.

    Windows that do not fit inside the record are dropped (never padded);
    the number dropped is reported on the result.
    """
    pre, post = int(pre_samples), int(post_samples)
    if pre + post <= 0:
        raise DataError("pre_samples + post_samples must be positive")
    onsets = np.unique(rec.markers.samples(kind))
    if onsets.size == 0:
        raise NoMarkers(f"no {kind.value} markers in recording")
    starts = onsets - pre
    fits = (starts >= 0) & (onsets + post <= rec.n_samples)
    if not fits.any():
        raise NoMarkers(f"no {kind.value} marker window fits inside the record")
    starts = starts[fits]
    width = pre + post
    windows = starts[:, None] + np.arange(width)
    data = rec.data[:, windows].transpose(1, 0, 2)
    return Epochs(data=data, origin_indices=starts, dropped_count=int((~fits).sum()))


def concatenate_runs(runs):
    """Append EEG recordings or fMRI series end to end.

    Markers of later EEG runs are offset by the cumulative sample count.
    """
    runs = list(runs)
    if not runs:
        raise DataError("nothing to concatenate")
    first = runs[0]
    if len(runs) == 1:
        return first
    if all(isinstance(r, EegRecording) for r in runs):
        for r in runs[1:]:
            if r.channel_labels != first.channel_labels:
                raise ShapeMismatch("runs have different channel sets")
            if not np.isclose(r.sampling_rate, first.sampling_rate, rtol=1e-9, atol=0):
                raise RateMismatch(
                    f"sampling rates differ: {first.sampling_rate} vs {r.sampling_rate}"
                )
        markers = []
        offset = 0
        bad: set[int] = set()
        for r in runs:
            markers.extend(r.markers.shifted(offset).entries)
            offset += r.n_samples
            bad |= r.bad_channels
        return EegRecording(
            data=np.concatenate([r.data for r in runs], axis=1),
            sampling_rate=first.sampling_rate,
            channel_labels=first.channel_labels,
            markers=EventMarkers(tuple(markers)),
            bad_channels=bad,
        )
    if all(isinstance(r, FmriSeries) for r in runs):
        for r in runs[1:]:
            if r.data.shape[:3] != first.data.shape[:3]:
                raise ShapeMismatch("runs have different spatial dims")
            if not np.isclose(r.tr, first.tr, rtol=1e-9, atol=0):
                raise RateMismatch(f"TRs differ: {first.tr} vs {r.tr}")
        return FmriSeries(
            data=np.concatenate([r.data for r in runs], axis=3),
            tr=first.tr,
            voxel_size=first.voxel_size,
        )
    raise DataError("runs must all be EegRecording or all FmriSeries")
