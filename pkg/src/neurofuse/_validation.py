"""Input checks shared by the functional API and the estimator wrappers."""

from __future__ import annotations

import os

from .datamodel import EegRecording, FmriSeries
from .errors import ConfigError, DataError


def check_recording(rec) -> EegRecording:
    if not isinstance(rec, EegRecording):
        raise DataError(f"expected an EegRecording, got {type(rec).__name__}")
    return rec


def check_fmri(series) -> FmriSeries:
    if not isinstance(series, FmriSeries):
        raise DataError(f"expected an FmriSeries, got {type(series).__name__}")
    return series


def check_picks(rec: EegRecording, picks=None, exclude=()) -> list[int]:
    """Channel indices from labels/indices; ``None`` means every channel."""
    if picks is None:
        idx = list(range(rec.n_channels))
    else:
        idx = [rec.index(p) if isinstance(p, str) else int(p) for p in picks]
    drop = {rec.channel_labels.index(e) for e in exclude if e in rec.channel_labels}
    return [i for i in idx if i not in drop]


def resolve_threads(n_jobs=None) -> int:
    """Thread count from the argument, else ``NEUROFUSE_THREADS``, else 1."""
    if n_jobs is None:
        env = os.environ.get("NEUROFUSE_THREADS", "1")
        try:
            n_jobs = int(env)
        except ValueError:
            raise ConfigError(f"NEUROFUSE_THREADS must be an integer, got {env!r}") from None
    return max(1, int(n_jobs))
