import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gamma_ica.cli import parse_and_dispatch
from gamma_ica.errors import InputError
from gamma_ica.io import file_digest, read_matrix_csv, read_pgm, read_table_csv, write_matrix_csv, write_pgm


class TestCsv:
    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 4)),
                  elements=st.floats(allow_nan=False, allow_infinity=False)))
    def test_round_trip_exact(self, tmp_path_factory, M):
        path = tmp_path_factory.mktemp("csv") / "m.csv"
        write_matrix_csv(path, M)
        np.testing.assert_array_equal(read_matrix_csv(path), M)

    def test_crlf(self, tmp_path):
        path = tmp_path / "crlf.csv"
        path.write_bytes(b"1,2\r\n3,4.5\r\n")
        np.testing.assert_array_equal(read_matrix_csv(path), [[1, 2], [3, 4.5]])

    def test_ragged_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,2\n3,4\n5\n")
        with pytest.raises(InputError, match="row 3"):
            read_matrix_csv(path)

    def test_non_numeric(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,2\nx,4\n")
        with pytest.raises(InputError, match="row 2"):
            read_matrix_csv(path)

    def test_missing_and_empty(self, tmp_path):
        with pytest.raises(InputError):
            read_matrix_csv(tmp_path / "nope.csv")
        (tmp_path / "empty.csv").write_text("\n")
        with pytest.raises(InputError):
            read_matrix_csv(tmp_path / "empty.csv")


class TestPgm:
    def test_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(7, 11)).astype(np.uint8)
        write_pgm(tmp_path / "a.pgm", img)
        np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), img)
        data = (tmp_path / "a.pgm").read_bytes()
        write_pgm(tmp_path / "b.pgm", read_pgm(tmp_path / "a.pgm"))
        assert (tmp_path / "b.pgm").read_bytes() == data

    def test_header_comment(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x01\x02")
        np.testing.assert_array_equal(read_pgm(path), [[1, 2]])

    def test_rejects_16_bit(self, tmp_path):
        path = tmp_path / "d.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n\x00\x01")
        with pytest.raises(InputError, match="maxval"):
            read_pgm(path)

    def test_rejects_ascii_and_truncated(self, tmp_path):
        (tmp_path / "e.pgm").write_bytes(b"P2\n1 1\n255\n7\n")
        with pytest.raises(InputError):
            read_pgm(tmp_path / "e.pgm")
        (tmp_path / "f.pgm").write_bytes(b"P5\n4 4\n255\n\x00")
        with pytest.raises(InputError):
            read_pgm(tmp_path / "f.pgm")


def run(*argv):
    return parse_and_dispatch([str(a) for a in argv])


@pytest.fixture
def sample_dir(tmp_path):
    assert run("sample-data", "--outdir", tmp_path / "data", "--quiet") == 0
    return tmp_path / "data"


class TestCli:
    def test_help(self, capsys):
        assert run("--help") == 0
        assert "prewhiten" in capsys.readouterr().out

    def test_unknown_flag(self, capsys):
        assert run("prewhiten", "--input", "x.csv", "--out", "m.json", "--bogus") == 1
        assert "--bogus" in capsys.readouterr().err

    def test_malformed_csv(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("1,2\n3,4\n5,6,7\n")
        assert run("prewhiten", "--input", bad, "--out", tmp_path / "m.json") == 1
        assert "row 3" in capsys.readouterr().err

    def test_numerical_failure(self, tmp_path, capsys):
        flat = tmp_path / "flat.csv"
        flat.write_text("".join(f"{k},{2 * k}\n" for k in range(10)))
        assert run("prewhiten", "--input", flat, "--gamma", "0", "--out", tmp_path / "m.json") == 2
        assert "numerical" in capsys.readouterr().err

    def test_pipeline(self, sample_dir, tmp_path):
        data = sample_dir / "sample_mixture.csv"
        before = data.read_bytes()
        out = tmp_path / "run"
        assert run("prewhiten", "--input", data, "--gamma", "0.2", "--out", out / "model.json",
                   "--whitened", out / "z.csv", "--quiet") == 0
        assert run("ica", "--whitened", out / "z.csv", "--gamma", "0.15", "--model", "subgauss",
                   "--seed", "7", "--out", out / "west.json", "--trace", out / "trace.csv",
                   "--sources-out", out / "shat.csv", "--quiet") == 0
        assert run("diagnose", "--sources", out / "shat.csv", "--model", "subgauss",
                   "--gamma-grid", "0.05:0.05:0.5", "--out", out / "scan.csv", "--quiet") == 0
        assert data.read_bytes() == before
        model = json.loads((out / "model.json").read_text())
        assert model["p"] == 2 and len(model["sigma"]) == 4
        west = json.loads((out / "west.json").read_text())
        W = np.array(west["w"]).reshape(2, 2)
        np.testing.assert_allclose(W.T @ W, np.eye(2), atol=1e-12)
        trace = read_table_csv(out / "trace.csv")
        assert list(trace[0]) == ["iter", "objective", "step", "grad_norm"]
        scan = read_table_csv(out / "scan.csv")
        assert list(scan[0]) == ["gamma", "lambda_max", "condA_max_abs_z", "condB_min_z"]
        assert len(scan) == 10
        manifest = json.loads((out / "scan.csv.manifest.json").read_text())
        assert manifest["command"] == "diagnose"
        assert manifest["outputs"][str(out / "scan.csv")] == file_digest(out / "scan.csv")

    def test_select_gamma(self, sample_dir, tmp_path, capsys):
        data = sample_dir / "sample_mixture.csv"
        assert run("select-gamma", "--stage", "prewhiten", "--input", data, "--grid", "0.1:0.1:0.5",
                   "--seed", "11", "--out", tmp_path / "cv.csv", "--quiet") == 0
        rows = read_table_csv(tmp_path / "cv.csv")
        assert [r["gamma"] for r in rows] == ["0.1", "0.2", "0.3", "0.4", "0.5"]
        assert list(rows[0]) == ["gamma", "score", "n_failed_folds"]
        assert run("select-gamma", "--stage", "ica", "--input", data, "--prewhiten-gamma", "0.3",
                   "--grid", "0.2,0.6", "--model", "subgauss", "--out", tmp_path / "cv2.csv", "--quiet") == 0
        assert "chosen_gamma=" in capsys.readouterr().out

    def test_prewhiten_cv(self, sample_dir, tmp_path):
        assert run("prewhiten", "--input", sample_dir / "sample_mixture.csv", "--gamma", "cv",
                   "--grid", "0.1,0.5", "--out", tmp_path / "m.json", "--quiet") == 0
        assert json.loads((tmp_path / "m.json").read_text())["gamma"] in (0.1, 0.5)

    def test_simulate_and_replay(self, tmp_path):
        spec = tmp_path / "spec.toml"
        spec.write_text('source_kind = "uniform"\nn_outliers = 30\nreplications = 2\n'
                        'gamma_grid = [0.2, 0.6]\nmethods = ["gamma_ica", "mle_ica"]\nseed = 5\n')
        out = tmp_path / "res.csv"
        assert run("simulate", "--spec", spec, "--out", out, "--summary", tmp_path / "sum.csv",
                   "--threads", "2", "--quiet") == 0
        rows = read_table_csv(out)
        assert len(rows) == 8
        first = out.read_bytes()
        os.remove(out)
        assert run("replay", tmp_path / "res.csv.manifest.json", "--quiet") == 0
        assert out.read_bytes() == first

    def test_simulate_bad_spec(self, tmp_path, capsys):
        spec = tmp_path / "spec.toml"
        spec.write_text("n_clean = 100\nunknown_field = 3\n")
        assert run("simulate", "--spec", spec, "--out", tmp_path / "r.csv") == 1
        assert "unknown_field" in capsys.readouterr().err

    def test_unmix_images(self, tmp_path):
        out = tmp_path / "img"
        manifest = tmp_path / "manifest.json"
        assert run("unmix-images", "--seed", "3", "--contamination", "0", "--methods", "mle_ica",
                   "--outdir", out, "--manifest", manifest, "--quiet") == 0
        report = read_table_csv(out / "report.csv")
        assert list(report[0]) == ["method", "channel", "matched_source", "correlation"]
        assert len(report) == 4
        assert read_pgm(out / "mle_ica_source1.pgm").shape == (128, 128)
        assert json.loads(manifest.read_text())["seeds"]["seed"] == 3

    def test_identical_runs_are_byte_identical(self, sample_dir, tmp_path):
        data = sample_dir / "sample_mixture.csv"
        for name in ("a", "b"):
            assert run("prewhiten", "--input", data, "--out", tmp_path / name / "m.json",
                       "--whitened", tmp_path / name / "z.csv", "--quiet") == 0
        assert (tmp_path / "a" / "z.csv").read_bytes() == (tmp_path / "b" / "z.csv").read_bytes()
        assert (tmp_path / "a" / "m.json").read_bytes() == (tmp_path / "b" / "m.json").read_bytes()
