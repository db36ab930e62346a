"""Artifact correction for EEG recorded inside an MRI scanner and EEG-informed fMRI mapping.

Subpackages and modules:

``datamodel``  recordings, markers, fMRI series and statistic maps
``formats``    BrainVision, NIfTI-1 and table I/O
``dsp``        filters, envelopes, Welch spectra, smoothing
``artifacts``  gradient (AAS) and pulse artifact subtraction
``ica``        FastICA cleanup of residual artifacts
``fusion``     predictors, GLM/correlation maps and FDR
``phantom``    synthetic datasets with known ground truth
``cli``        the ``neurofuse`` command
"""

__version__ = "0.1.0"

from . import artifacts, datamodel, dsp, errors, formats, fusion, ica, phantom  # noqa: E402
from .datamodel import (  # noqa: E402
    EegRecording,
    EventMarkers,
    FmriSeries,
    Marker,
    MarkerKind,
    StatKind,
    StatMap,
)
from .errors import NeurofuseError  # noqa: E402

__all__ = [
    "__version__",
    "artifacts",
    "datamodel",
    "dsp",
    "errors",
    "formats",
    "fusion",
    "ica",
    "phantom",
    "EegRecording",
    "EventMarkers",
    "FmriSeries",
    "Marker",
    "MarkerKind",
    "StatKind",
    "StatMap",
    "NeurofuseError",
]
