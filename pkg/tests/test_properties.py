import tempfile
from pathlib import Path

import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from neurofuse import artifacts, fusion
from neurofuse.datamodel import EegRecording, EventMarkers, FmriSeries, Marker, MarkerKind, StatKind, StatMap
from neurofuse.formats import parse_brainvision, read_nifti, read_statmap, write_brainvision, write_nifti

from conftest import volume_markers

finite = st.floats(-1e6, 1e6, allow_nan=False, width=64)
f32 = st.floats(-2.0**100, 2.0**100, allow_nan=False, allow_infinity=False, width=32)
pvals = st.floats(0.0, 1.0, allow_nan=False)


def voxel_series(rows):
    rows = np.atleast_2d(rows)
    return FmriSeries(rows.reshape(rows.shape[0], 1, 1, rows.shape[1]), 2.0)


@st.composite
def paired_samples(draw, min_size=5, max_size=40):
    n = draw(st.integers(min_size, max_size))
    x = draw(hnp.arrays(float, n, elements=finite))
    y = draw(hnp.arrays(float, n, elements=finite))
    assume(np.ptp(x) > 1e-3 * (1 + np.abs(x).max()) and np.ptp(y) > 1e-3 * (1 + np.abs(y).max()))
    return x, y


class TestPearsonProperties:
    @given(paired_samples(), st.floats(0.01, 100), st.floats(-100, 100))
    def test_affine_invariance(self, xy, a, b):
        x, y = xy
        r0 = fusion.pearson_map(voxel_series(y), x)[0].values
        r1 = fusion.pearson_map(voxel_series(a * y + b), x)[0].values
        r2 = fusion.pearson_map(voxel_series(y), -a * x + b)[0].values
        np.testing.assert_allclose(r1, r0, atol=1e-9)
        np.testing.assert_allclose(r2, -r0, atol=1e-9)

    @given(paired_samples())
    def test_symmetric_and_bounded(self, xy):
        x, y = xy
        rxy = fusion.pearson_map(voxel_series(y), x)[0].values[0, 0, 0]
        ryx = fusion.pearson_map(voxel_series(x), y)[0].values[0, 0, 0]
        assert abs(rxy - ryx) < 1e-12
        assert -1.0 <= rxy <= 1.0


class TestFdrProperties:
    @given(st.lists(pvals, min_size=1, max_size=60), st.floats(0.001, 0.5), st.floats(0.001, 0.5))
    def test_monotone_in_q(self, p, q1, q2):
        p = np.array(p)
        lo, hi = sorted((q1, q2))
        a, _ = fusion.fdr_bh(p, lo)
        b, _ = fusion.fdr_bh(p, hi)
        assert not np.any(a & ~b)

    @given(st.lists(pvals, min_size=1, max_size=60), st.randoms(use_true_random=False))
    def test_permutation_equivariant(self, p, random):
        p = np.array(p)
        perm = list(range(p.size))
        random.shuffle(perm)
        a, ta = fusion.fdr_bh(p, 0.05)
        b, tb = fusion.fdr_bh(p[perm], 0.05)
        np.testing.assert_array_equal(a[perm], b)
        assert ta == tb

    @given(st.lists(pvals, min_size=1, max_size=60))
    def test_rejects_everything_below_threshold(self, p):
        p = np.array(p)
        rej, thr = fusion.fdr_bh(p, 0.1)
        np.testing.assert_array_equal(rej, p <= thr if rej.any() else np.zeros(p.size, bool))
        # the step-up threshold never exceeds q
        assert thr <= 0.1


class TestLinearity:
    @given(hnp.arrays(float, 40, elements=finite), hnp.arrays(float, 40, elements=finite), finite)
    def test_hrf_convolution(self, a, b, c):
        h = fusion.canonical_hrf(2.0)
        lhs = fusion.convolve_hrf(a + c * b, h)
        rhs = fusion.convolve_hrf(a, h) + c * fusion.convolve_hrf(b, h)
        scale = 1 + np.abs(a).max() + abs(c) * np.abs(b).max()
        np.testing.assert_allclose(lhs, rhs, atol=1e-9 * scale * h.samples.size)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-10, 10))
    def test_aas(self, seed, c):
        gen = np.random.default_rng(seed)
        n_ep, period = 20, 64
        marks = volume_markers(np.arange(n_ep) * period)
        a = EegRecording(gen.normal(size=(2, n_ep * period)), 250.0, ("A", "B"), marks)
        b = a.with_data(gen.normal(size=a.data.shape))
        both = a.with_data(a.data + c * b.data)
        lhs = artifacts.aas_correct(both).cleaned.data
        rhs = artifacts.aas_correct(a).cleaned.data + c * artifacts.aas_correct(b).cleaned.data
        np.testing.assert_allclose(lhs, rhs, atol=1e-10 * (1 + abs(c)))


labels = st.lists(
    st.text(st.characters(min_codepoint=33, max_codepoint=126), min_size=1, max_size=6),
    min_size=1, max_size=5, unique=True,
)
marker_labels = st.text(st.characters(min_codepoint=32, max_codepoint=126), max_size=8)


@st.composite
def recordings(draw):
    chans = draw(labels)
    n = draw(st.integers(1, 60))
    data = draw(hnp.arrays(np.float32, (len(chans), n), elements=f32)).astype(float)
    kinds = st.sampled_from(list(MarkerKind))
    marks = draw(st.lists(st.tuples(st.integers(0, n - 1), kinds, marker_labels), max_size=6))
    markers = EventMarkers(tuple(Marker(s, k, lab) for s, k, lab in sorted(marks, key=lambda m: m[0])))
    return EegRecording(data, draw(st.sampled_from([250.0, 500.0, 1000.0, 5000.0])), tuple(chans), markers)


class TestRoundTrips:
    @settings(max_examples=60, deadline=None)
    @given(recordings(), st.sampled_from(["MULTIPLEXED", "VECTORIZED"]))
    def test_brainvision_float32(self, rec, orientation):
        with tempfile.TemporaryDirectory() as d:
            write_brainvision(rec, Path(d) / "r", orientation=orientation)
            back = parse_brainvision(Path(d) / "r.vhdr")
        assert back.equals(rec)

    @settings(max_examples=40, deadline=None)
    @given(hnp.arrays(np.float32, st.tuples(*[st.integers(1, 5)] * 3, st.integers(2, 6)), elements=f32),
           st.floats(0.5, 5.0), st.floats(0.5, 4.0))
    def test_nifti_series(self, data, vox, tr):
        series = FmriSeries(data.astype(float), tr, (vox, vox, 2 * vox))
        with tempfile.TemporaryDirectory() as d:
            write_nifti(series, Path(d) / "f.nii")
            back = read_nifti(Path(d) / "f.nii")
        assert back.data.shape == series.data.shape
        np.testing.assert_array_equal(back.data, series.data)
        assert back.voxel_size == tuple(np.float32(v) for v in series.voxel_size)

    @settings(max_examples=30, deadline=None)
    @given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=3, max_dims=3, max_side=6), elements=f32),
           st.sampled_from([StatKind.R, StatKind.T, StatKind.P]))
    def test_nifti_statmap(self, values, kind):
        if kind is StatKind.R:
            values = np.clip(values, -1, 1)
        elif kind is StatKind.P:
            values = np.abs(np.clip(values, -1, 1))
        m = StatMap(values.astype(float), kind)
        with tempfile.TemporaryDirectory() as d:
            write_nifti(m, Path(d) / "m.nii")
            back = read_statmap(Path(d) / "m.nii")
        assert back.kind is kind
        np.testing.assert_array_equal(back.values, m.values)
