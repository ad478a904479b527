"""Exit codes, output contracts, config-file precedence."""

import numpy as np
import pytest

from tapercal.cli import main
from tapercal.io import read_npy, write_npy, write_station_csv

from conftest import make_grid, random_stations


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture
def sample_npy(tmp_path, transform):
    rng = np.random.default_rng(1)
    g = make_grid(rng.uniform(0.25, 3.0, (12, 12)), transform)
    path = tmp_path / "grid.npy"
    write_npy(g, path)
    return path


class TestExitCodes:
    def test_eval_identical_files_perfect(self, capsys, tmp_path, sample_npy):
        code, out, err = run_cli(
            capsys, "eval", "--pred", str(sample_npy), "--truth", str(sample_npy),
            "--threshold", "0.2", "--machine",
        )
        assert code == 0
        assert "pod=1" in out
        assert "far=0" in out

    def test_unknown_flag_usage_error(self, capsys, sample_npy):
        code, out, err = run_cli(capsys, "eval", "--pred", str(sample_npy), "--frobnicate")
        assert code == 1
        assert "usage" in err.lower()

    def test_missing_command_usage_error(self, capsys):
        code, out, err = run_cli(capsys)
        assert code == 1
        assert "usage" in err.lower()

    def test_unreadable_input_data_error(self, capsys, tmp_path):
        code, out, err = run_cli(
            capsys, "eval", "--pred", str(tmp_path / "nope.npy"),
            "--truth", str(tmp_path / "nope.npy"),
        )
        assert code == 2

    def test_malformed_npy_data_error(self, capsys, tmp_path):
        bad = tmp_path / "bad.npy"
        bad.write_bytes(b"garbage file content")
        code, out, err = run_cli(capsys, "eval", "--pred", str(bad), "--truth", str(bad))
        assert code == 2
        assert "error" in err

    def test_degenerate_kernel_numerical_error(self, capsys, tmp_path, transform):
        # linear kernel with huge slope: every station weight is zero
        rng = np.random.default_rng(5)
        g = make_grid(rng.uniform(0.5, 2.0, (16, 16)), transform)
        sat_p = tmp_path / "sat.npy"
        write_npy(g, sat_p)
        st_p = tmp_path / "st.csv"
        write_station_csv(
            random_stations(rng, 8, (38.6, 39.9), (100.1, 101.4)), st_p
        )
        code, out, err = run_cli(
            capsys, "train", "--sat", str(sat_p), "--stations", str(st_p),
            "--kernel", "linear", "--kernel-param", "1e9",
            "--mix-other", "0", "--epochs", "2",
            "--distance-metric", "euclidean_degrees",
            "--out", str(tmp_path / "m.tcal"),
        )
        assert code == 3


class TestLevel:
    @pytest.mark.parametrize("value,want", [("0.05", "0"), ("9.9", "1"), ("250", "6")])
    def test_prints_level(self, capsys, value, want):
        code, out, err = run_cli(capsys, "level", "--value", value)
        assert code == 0
        assert out.strip() == want


class TestStats:
    def test_row_counts(self, capsys, tmp_path, transform):
        rng = np.random.default_rng(2)
        paths = []
        for i in range(2):
            g = make_grid(rng.uniform(0, 5, (6, 6)), transform)
            p = tmp_path / f"g{i}.npy"
            write_npy(g, p)
            paths.append(str(p))
        code, out, err = run_cli(capsys, "stats", *paths)
        assert code == 0
        lines = [l for l in out.strip().split("\n") if l]
        assert len(lines) == 4  # header + one per input + pooled All
        assert lines[-1].split()[0] == "All"

    def test_all_zero_with_drop_zeros_is_data_error(self, capsys, tmp_path, transform):
        g = make_grid(np.zeros((4, 4)), transform)
        p = tmp_path / "z.npy"
        write_npy(g, p)
        code, out, err = run_cli(capsys, "stats", str(p), "--drop-zeros")
        assert code == 2

    def test_q99_of_1_to_100(self, capsys, tmp_path, transform):
        vals = np.arange(1.0, 101.0).reshape(10, 10)
        p = tmp_path / "r.npy"
        write_npy(make_grid(vals, transform), p)
        code, out, err = run_cli(capsys, "stats", str(p), "--machine")
        assert code == 0
        q99 = next(float(l.split("=")[1]) for l in out.split("\n") if ".q99=" in l)
        assert 99.0 <= q99 <= 100.0
        assert q99 == pytest.approx(99.01)  # linear interpolation between ranks


class TestSynthRoundTrip:
    def test_synth_then_eval(self, capsys, tmp_path):
        truth_p = tmp_path / "t.npy"
        sat_p = tmp_path / "s.npy"
        st_p = tmp_path / "st.csv"
        code, out, err = run_cli(
            capsys, "synth", "--rows", "16", "--cols", "16", "--seed", "3",
            "--out-truth", str(truth_p), "--out-sat", str(sat_p),
            "--out-stations", str(st_p),
        )
        assert code == 0
        assert truth_p.exists() and sat_p.exists() and st_p.exists()
        code, out, err = run_cli(
            capsys, "eval", "--pred", str(sat_p), "--truth", str(truth_p), "--machine"
        )
        assert code == 0
        assert "rmse=0" in out  # identity bias, zero noise

    def test_deterministic_stdout(self, capsys, tmp_path):
        args = [
            "synth", "--rows", "8", "--cols", "8", "--seed", "9",
            "--out-truth", str(tmp_path / "t.npy"), "--out-sat", str(tmp_path / "s.npy"),
        ]
        code1, out1, _ = run_cli(capsys, *args)
        code2, out2, _ = run_cli(capsys, *args)
        assert code1 == code2 == 0
        assert out1 == out2


class TestTrainCalibrate:
    def test_full_cycle(self, capsys, tmp_path, transform):
        rng = np.random.default_rng(4)
        truth_vals = rng.uniform(0.0, 1.0, (16, 16))
        sat_vals = np.clip(2.0 * truth_vals + 0.1, 0.0, None)
        sat_p = tmp_path / "sat.npy"
        truth_p = tmp_path / "truth.npy"
        write_npy(make_grid(sat_vals, transform), sat_p)
        write_npy(make_grid(truth_vals, transform), truth_p)
        pixels = [(int(rng.integers(0, 16)), int(rng.integers(0, 16))) for _ in range(12)]
        from conftest import make_stations

        stations = make_stations(
            [(*transform.index_to_coords(r, c), truth_vals[r, c]) for r, c in pixels]
        )
        st_p = tmp_path / "st.csv"
        write_station_csv(stations, st_p)
        model_p = tmp_path / "model.tcal"

        code, out, _ = run_cli(
            capsys, "train", "--sat", str(sat_p), "--stations", str(st_p),
            "--truth", str(truth_p), "--epochs", "600", "--lr", "0.02",
            "--distance-metric", "euclidean_degrees", "--no-early-stop",
            "--out", str(model_p),
        )
        assert code == 0
        assert model_p.exists()
        loss_final = float(next(l.split("=")[1] for l in out.split("\n") if l.startswith("loss_final")))
        assert loss_final < 1e-3

        pred_p = tmp_path / "pred.npy"
        code, out, _ = run_cli(
            capsys, "calibrate", "--model", str(model_p), "--in", str(sat_p),
            "--out", str(pred_p),
        )
        assert code == 0
        pred = read_npy(pred_p)
        assert float(np.mean(np.abs(pred.values - truth_vals))) < 0.02


class TestConfigFile:
    def test_config_supplies_defaults_flags_override(self, capsys, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("value=9.9\n")
        code, out, _ = run_cli(capsys, "level", "--config", str(cfg))
        assert code == 0 and out.strip() == "1"
        # explicit flag wins over the config value
        code, out, _ = run_cli(capsys, "level", "--config", str(cfg), "--value", "250")
        assert code == 0 and out.strip() == "6"

    def test_unknown_config_key(self, capsys, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("no_such_key=1\n")
        code, out, err = run_cli(capsys, "level", "--config", str(cfg), "--value", "1")
        assert code == 1
        assert "no_such_key" in err

    def test_missing_config_file(self, capsys, tmp_path):
        code, out, err = run_cli(
            capsys, "level", "--config", str(tmp_path / "nope.cfg"), "--value", "1"
        )
        assert code == 1


class TestNormalizeResampleCrop:
    def test_normalize_invert_round_trip(self, capsys, tmp_path, sample_npy):
        norm_p = tmp_path / "n.npy"
        code, *_ = run_cli(
            capsys, "normalize", "--in", str(sample_npy), "--x-max", "6.22",
            "--out", str(norm_p),
        )
        assert code == 0
        back_p = tmp_path / "b.npy"
        code, *_ = run_cli(
            capsys, "normalize", "--in", str(norm_p), "--x-max", "6.22",
            "--invert", "--out", str(back_p),
        )
        assert code == 0
        src = read_npy(sample_npy)
        back = read_npy(back_p)
        np.testing.assert_allclose(back.values, src.values, atol=1e-12)

    def test_resample_halves_grid(self, capsys, tmp_path, sample_npy):
        out_p = tmp_path / "half.npy"
        code, out, _ = run_cli(
            capsys, "resample", "--in", str(sample_npy), "--rows", "6", "--cols", "6",
            "--dlat", "-0.2", "--dlon", "0.2", "--out", str(out_p),
        )
        assert code == 0
        assert read_npy(out_p).shape == (6, 6)

    def test_crop_reports_window(self, capsys, tmp_path, sample_npy, transform):
        rng = np.random.default_rng(8)
        st_p = tmp_path / "st.csv"
        write_station_csv(random_stations(rng, 10, (38.95, 39.95), (100.05, 101.05)), st_p)
        out_p = tmp_path / "crop.npy"
        code, out, _ = run_cli(
            capsys, "crop", "--in", str(sample_npy), "--stations", str(st_p),
            "--size", "6", "--out", str(out_p),
        )
        assert code == 0
        assert "row0=" in out and "stations=" in out
        assert read_npy(out_p).shape == (6, 6)


class TestSweepCommand:
    def test_sweep_tsv_output(self, capsys, tmp_path):
        out_p = tmp_path / "sweep.tsv"
        code, out, _ = run_cli(
            capsys, "sweep", "--parameter", "mix_taper", "--values", "0,1",
            "--repeats", "2", "--rows", "16", "--cols", "16",
            "--stations-count", "12", "--epochs", "10",
            "--distance-metric", "euclidean_degrees",
            "--seed", "5", "--out", str(out_p),
        )
        assert code == 0
        lines = out_p.read_text().strip().split("\n")
        assert lines[0] == "value\tmetric\tmean\tstd"
        assert len(lines) == 1 + 2 * 3


class TestInterpTimeCommand:
    def test_series_refinement(self, capsys, tmp_path):
        series_p = tmp_path / "series.npz"
        code, *_ = run_cli(
            capsys, "synth", "--rows", "8", "--cols", "8", "--frames", "3",
            "--advect-row", "1", "--step-minutes", "60", "--seed", "2",
            "--out-truth", str(series_p), "--out-sat", str(tmp_path / "sat.npz"),
        )
        assert code == 0
        out_p = tmp_path / "half.npz"
        code, out, _ = run_cli(
            capsys, "interp-time", "--in", str(series_p),
            "--source-step-minutes", "60", "--target-step-minutes", "30",
            "--out", str(out_p),
        )
        assert code == 0
        assert "frames_in=3 frames_out=5" in out
        from tapercal.io import read_series_npz

        assert len(read_series_npz(out_p)) == 5

    def test_step_mismatch_is_data_error(self, capsys, tmp_path):
        series_p = tmp_path / "series.npz"
        run_cli(
            capsys, "synth", "--rows", "8", "--cols", "8", "--frames", "2",
            "--step-minutes", "60", "--seed", "2",
            "--out-truth", str(series_p), "--out-sat", str(tmp_path / "sat.npz"),
        )
        code, out, err = run_cli(
            capsys, "interp-time", "--in", str(series_p),
            "--source-step-minutes", "90", "--target-step-minutes", "30",
            "--out", str(tmp_path / "x.npz"),
        )
        assert code == 2


class TestEvalStations:
    def test_station_mode(self, capsys, tmp_path, sample_npy, transform):
        grid = read_npy(sample_npy)
        from conftest import make_stations

        stations = make_stations(
            [(*transform.index_to_coords(r, c), grid.values[r, c]) for r, c in [(0, 0), (3, 4)]]
        )
        st_p = tmp_path / "st.csv"
        write_station_csv(stations, st_p)
        code, out, _ = run_cli(
            capsys, "eval", "--pred", str(sample_npy), "--stations", str(st_p), "--machine"
        )
        assert code == 0
        assert "rmse=0" in out


class TestThreadsEnv:
    def test_invalid_value_is_usage_error(self, capsys, monkeypatch):
        monkeypatch.setenv("TAPER_CALIB_THREADS", "lots")
        code, out, err = run_cli(capsys, "level", "--value", "1")
        assert code == 1
        monkeypatch.setenv("TAPER_CALIB_THREADS", "-1")
        code, *_ = run_cli(capsys, "level", "--value", "1")
        assert code == 1

    def test_valid_value_accepted(self, capsys, monkeypatch):
        monkeypatch.setenv("TAPER_CALIB_THREADS", "0")
        code, out, _ = run_cli(capsys, "level", "--value", "1")
        assert code == 0 and out.strip() == "1"


class TestCliMatchesLibrary:
    def test_eval_machine_output_reproducible_from_library(self, capsys, tmp_path, sample_npy):
        other = tmp_path / "other.npy"
        rng = np.random.default_rng(12)
        src = read_npy(sample_npy)
        write_npy(src._with_values(np.clip(src.values + rng.normal(0, 0.2, src.shape), 0, None)), other)
        code, out, _ = run_cli(
            capsys, "eval", "--pred", str(sample_npy), "--truth", str(other), "--machine"
        )
        assert code == 0
        from tapercal.metrics import PairedSamples, regression_metrics, table_a1_metrics

        pairs = PairedSamples.from_grids(read_npy(sample_npy), read_npy(other))
        rep = table_a1_metrics(pairs, 0.2)
        rep.mse, rep.mae, rep.r2 = regression_metrics(pairs)
        want = {l.split("=")[0]: l.split("=", 1)[1] for l in rep.to_kv_lines()}
        got = {l.split("=")[0]: l.split("=", 1)[1] for l in out.strip().split("\n")}
        for key in ("pod", "far", "cc", "rmse", "tb", "mse", "mae", "r2", "hits"):
            assert got[key] == want[key]
