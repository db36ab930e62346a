import sys

import numpy as np
import pytest

from neurofuse import artifacts, phantom
from neurofuse.datamodel import EegRecording, EventMarkers, MarkerKind


@pytest.fixture(scope="session")
def default_phantom():
    return phantom.gen_phantom()


@pytest.fixture(scope="session")
def cleaned_chain(default_phantom):
    """AAS, R-peak detection and pulse subtraction on the default ScannerOn EEG."""
    ga = artifacts.aas_correct(default_phantom.raw)
    rate = default_phantom.raw.sampling_rate
    peaks = artifacts.detect_r_peaks(ga.cleaned.channel("ECG"), rate)
    bcg = artifacts.bcg_correct(ga.cleaned, peaks)
    return {"ga": ga, "r_peaks": peaks, "bcg": bcg, "cleaned": bcg.cleaned}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_recording(n_channels=4, n_samples=2000, rate=250.0, markers=(), seed=0):
    gen = np.random.default_rng(seed)
    labels = tuple(f"C{i}" for i in range(n_channels))
    return EegRecording(gen.normal(size=(n_channels, n_samples)), rate, labels, EventMarkers(tuple(markers)))


def volume_markers(samples):
    return EventMarkers.from_samples(samples, MarkerKind.VOLUME_TRIGGER, "R128")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
