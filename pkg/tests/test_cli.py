import json

import numpy as np
import pytest

from neurofuse import cli, phantom
from neurofuse.formats import load_brainvision, read_nifti_array


def run(*argv):
    return cli.main([str(a) for a in argv])


def decode_rle(runs, dims):
    flat = np.zeros(int(np.prod(dims)), bool)
    for start, length in runs:
        flat[start:start + length] = True
    return flat.reshape(dims, order="F")


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Full default pipeline: phantom, denoise, analyze, fuse, report."""
    root = tmp_path_factory.mktemp("pipeline")
    assert run("phantom", "-o", root / "ph") == 0
    assert run("denoise", "-i", root / "ph" / "eeg.vhdr", "-o", root / "dn") == 0
    assert run("analyze", "-i", root / "dn" / "eeg_clean.vhdr", "-o", root / "an") == 0
    assert run("fuse", "--eeg", root / "dn" / "eeg_clean.vhdr", "--fmri", root / "ph" / "fmri.nii",
               "-o", root / "fu") == 0
    assert run("report", root / "ph", root / "dn", root / "an", root / "fu", "-o", root / "summary.json") == 0
    return root


@pytest.fixture(scope="module")
def short(tmp_path_factory):
    root = tmp_path_factory.mktemp("short")
    assert run("phantom", "-o", root, "--duration", 60, "--seed", 4) == 0
    return root


class TestPipeline:
    def test_outputs(self, pipeline):
        for name in ("ph/truth.json", "dn/denoise_report.json", "dn/eeg_clean.vhdr",
                     "an/analysis_report.json", "an/contrast.csv", "an/topography.svg",
                     "fu/comparison.json", "fu/t_eeg.nii", "fu/mask_boxcar.nii", "summary.json"):
            assert (pipeline / name).is_file(), name

    def test_truth_sidecar(self, pipeline):
        truth = json.loads((pipeline / "ph" / "truth.json").read_text())
        mask = read_nifti_array(pipeline / "ph" / "activation_mask.nii")[0].astype(bool)
        np.testing.assert_array_equal(decode_rle(truth["activation_mask_rle"], truth["mask_dims"]), mask)
        want = phantom.gen_phantom(seed=truth["seed"]).truth.activation_mask
        np.testing.assert_array_equal(mask, want)
        assert truth["n_active_voxels"] == int(want.sum())
        assert set(truth["files"]) <= {p.name for p in (pipeline / "ph").iterdir()}

    def test_summary(self, pipeline):
        s = json.loads((pipeline / "summary.json").read_text())
        assert s["ga_reduction_db_min"] >= 30
        assert s["contrast_peaks_hz"] == [12.0, 24.0, 36.0]
        assert s["topography_matches_truth"]
        assert s["spatial_r"] >= 0.8 and s["dice"] >= 0.7
        assert s["sources"] == ["analysis_report", "comparison", "denoise_report", "truth"]

    def test_reports_echo_config(self, pipeline):
        dn = json.loads((pipeline / "dn" / "denoise_report.json").read_text())
        assert dn["config"]["denoise"]["aas_window"] == 15
        assert [s["stage"] for s in dn["stages"]] == ["gradient", "r_peaks", "pulse"]
        an = json.loads((pipeline / "an" / "analysis_report.json").read_text())
        assert all(h["passed"] for h in an["harmonic_test"])

    def test_cleaned_eeg_readable(self, pipeline):
        raw, _ = load_brainvision(pipeline / "ph" / "eeg.vhdr")
        clean, _ = load_brainvision(pipeline / "dn" / "eeg_clean.vhdr")
        assert clean.channel_labels == raw.channel_labels
        assert clean.markers == raw.markers
        assert np.std(clean.data) < 0.1 * np.std(raw.data)


class TestDeterminism:
    def test_phantom_rerun_byte_identical(self, short, tmp_path):
        assert run("phantom", "-o", tmp_path, "--duration", 60, "--seed", 4) == 0
        assert tree_bytes(tmp_path) == tree_bytes(short)

    def test_denoise_rerun_byte_identical(self, short, tmp_path):
        for d in ("a", "b"):
            assert run("denoise", "-i", short / "eeg.vhdr", "-o", tmp_path / d) == 0
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_fuse_threads_byte_identical(self, short, tmp_path):
        for d, threads in (("a", 1), ("b", 3)):
            assert run("fuse", "--eeg", short / "eeg.vhdr", "--fmri", short / "fmri.nii",
                       "-o", tmp_path / d, "--threads", threads) == 0
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


class TestOptions:
    def test_dry_run_writes_nothing(self, short, tmp_path, capsys):
        out = tmp_path / "never"
        assert run("denoise", "-i", short / "eeg.vhdr", "-o", out, "--dry-run", "--window-epochs", 11) == 0
        assert not out.exists()
        resolved = json.loads(capsys.readouterr().out)
        assert resolved["config"]["denoise"]["aas_window"] == 11

    def test_skip_everything_is_identity(self, short, tmp_path):
        assert run("denoise", "-i", short / "eeg.vhdr", "-o", tmp_path, "--skip-ga", "--skip-bcg") == 0
        raw, _ = load_brainvision(short / "eeg.vhdr")
        out, _ = load_brainvision(tmp_path / "eeg_clean.vhdr")
        assert out.equals(raw)
        assert json.loads((tmp_path / "denoise_report.json").read_text())["stages"] == []

    def test_config_file_and_flag_precedence(self, short, tmp_path, capsys):
        cfg = tmp_path / "c.toml"
        cfg.write_text("[denoise]\naas_window = 9\nbcg_window = 17\n")
        assert run("denoise", "-c", cfg, "-i", short / "eeg.vhdr", "-o", tmp_path / "o",
                   "--dry-run", "--bcg-window", 13) == 0
        d = json.loads(capsys.readouterr().out)["config"]["denoise"]
        assert (d["aas_window"], d["bcg_window"]) == (9, 13)

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run("--version")
        assert exc.value.code == 0
        assert "neurofuse" in capsys.readouterr().out


class TestExitCodes:
    def test_missing_triggers(self, tmp_path):
        assert run("phantom", "-o", tmp_path / "p", "--duration", 30, "--condition", "Outside") == 0
        assert run("denoise", "-i", tmp_path / "p" / "eeg.vhdr", "-o", tmp_path / "d") == 5

    def test_missing_channel(self, short, tmp_path):
        assert run("analyze", "-i", short / "eeg.vhdr", "-o", tmp_path, "--channel", "Xx") == 4

    def test_missing_input(self, tmp_path):
        assert run("denoise", "-i", tmp_path / "none.vhdr", "-o", tmp_path / "d") == 3

    def test_output_under_a_file(self, short, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert run("denoise", "-i", short / "eeg.vhdr", "-o", blocker / "sub") == 3

    @pytest.mark.parametrize("text", [
        "[denoise]\naas_window = 'many'\n",
        "[denoise]\nunknown_key = 1\n",
        "[nosuchsection]\nx = 1\n",
        "not toml [",
    ])
    def test_bad_config(self, short, tmp_path, text):
        cfg = tmp_path / "bad.toml"
        cfg.write_text(text)
        assert run("denoise", "-c", cfg, "-i", short / "eeg.vhdr", "-o", tmp_path / "d") == 2

    def test_bad_phantom_value(self, tmp_path):
        assert run("phantom", "-o", tmp_path, "--duration", -1) == 2

    def test_threads_zero(self, short, tmp_path):
        assert run("fuse", "--eeg", short / "eeg.vhdr", "--fmri", short / "fmri.nii",
                   "-o", tmp_path, "--threads", 0) == 2

    def test_fuse_length_mismatch(self, short, pipeline, tmp_path):
        # 60 s of EEG cannot cover the 100-volume default run
        assert run("fuse", "--eeg", short / "eeg.vhdr", "--fmri", pipeline / "ph" / "fmri.nii",
                   "-o", tmp_path) == 4

    def test_report_without_reports(self, tmp_path):
        assert run("report", tmp_path) == 3
        assert run("report", tmp_path / "missing") == 3

    def test_ica_non_convergence_flagged(self, short, tmp_path, capsys):
        cfg = tmp_path / "c.toml"
        cfg.write_text("[denoise]\nica_max_iter = 1\n")
        assert run("denoise", "-c", cfg, "-i", short / "eeg.vhdr", "-o", tmp_path / "d", "--ica") == 6
        assert "warning" in capsys.readouterr().err
        assert (tmp_path / "d" / "ica_model.json").is_file()
