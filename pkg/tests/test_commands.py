import json
import math

import pytest

import main
from disclab.commands import COMMANDS, CommandResult, RunConfig, parse_grid
from disclab.errors import UsageError
from disclab.fixtures import write_fixture
from disclab.randmat_core import RngStream, sample_goe


def _rows(text):
    lines = text.strip().split("\n")
    header = lines[1].split(",")
    return json.loads(lines[0][2:]), [dict(zip(header, line.split(","))) for line in lines[2:]]


class TestGrid:
    def test_default_phase_grid(self):
        grid = parse_grid("0.05:1.99:0.01")
        assert len(grid) == 195
        assert grid[0] == 0.05 and grid[-1] == 1.99

    @pytest.mark.parametrize("text", ["1:2", "a:b:c", "1:2:0", "2:1:0.1"])
    def test_malformed(self, text):
        with pytest.raises(UsageError):
            parse_grid(text)


class TestRunConfig:
    def test_require(self):
        with pytest.raises(UsageError):
            RunConfig(command="rho", seed=1).require("kappa")

    def test_echo_skips_execution_fields(self):
        echo = RunConfig(command="rho", seed=1, kappa=1.0, workers=4, out="x.csv").echo()
        assert "workers" not in echo and "out" not in echo
        assert echo["kappa"] == 1.0


class TestMain:
    def test_laplace(self, capsys):
        assert main.main(["laplace", "--seed", "1", "--n", "4000", "--c", "0.5"]) == 0
        meta, rows = _rows(capsys.readouterr().out)
        assert meta["command"] == "laplace" and meta["config"]["seed"] == 1
        assert float(rows[0]["value"]) == pytest.approx(math.sqrt(2.0), rel=0.02)
        assert float(rows[0]["gaussian_limit"]) == pytest.approx(math.sqrt(2.0))

    def test_rho_table(self, capsys):
        assert main.main(["rho", "--seed", "1", "--kappa", "2"]) == 0
        _, rows = _rows(capsys.readouterr().out)
        assert len(rows) == 201
        middle = rows[100]
        assert float(middle["x"]) == pytest.approx(0.0, abs=1e-12)
        assert float(middle["rho"]) == pytest.approx(1.0 / math.pi, rel=1e-12)
        assert float(middle["cdf"]) == pytest.approx(0.5, abs=1e-12)

    def test_disc_on_duplicated_fixture(self, tmp_path, capsys):
        w = sample_goe(3, RngStream(seed=5))
        path = tmp_path / "dup.bin"
        write_fixture(path, [w, w])
        assert main.main(["disc", "--seed", "1", "--fixture", str(path), "--grid", "0.5:1.0:0.5"]) == 0
        _, rows = _rows(capsys.readouterr().out)
        assert [float(r["disc"]) for r in rows] == [0.0, 0.0]
        assert all(int(r["Z"]) >= 2 for r in rows)

    def test_output_is_reproducible(self, capsys):
        args = ["disc", "--seed", "7", "--n", "5", "--d", "3", "--instances", "3"]
        assert main.main(args + ["--workers", "1"]) == 0
        first = capsys.readouterr().out
        assert main.main(args + ["--workers", "3"]) == 0
        assert capsys.readouterr().out == first

    def test_fast_disc_matches_eigensolve(self, capsys):
        args = ["disc", "--seed", "7", "--n", "8", "--d", "3", "--instances", "2"]
        assert main.main(args) == 0
        _, full = _rows(capsys.readouterr().out)
        assert main.main(args + ["--fast"]) == 0
        meta, fast = _rows(capsys.readouterr().out)
        assert meta["config"]["fast"] is True
        assert [r["Z"] for r in fast] == [r["Z"] for r in full]

    def test_json_format(self, capsys):
        assert main.main(["laplace", "--seed", "1", "--n", "10", "--format", "json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["rows"][0]["value"] == pytest.approx(1.0)

    def test_artifact_and_manifest(self, tmp_path):
        out = tmp_path / "lap.csv"
        assert main.main(["laplace", "--seed", "3", "--n", "50", "--out", str(out)]) == 0
        manifest = json.loads((tmp_path / "lap.csv.manifest.json").read_text())
        assert manifest["command"] == "laplace" and manifest["seed"] == 3
        assert list(manifest["checksums"]) == [str(out)]

    def test_failed_check_exits_one(self, monkeypatch):
        monkeypatch.setitem(COMMANDS, "laplace", lambda cfg: CommandResult(text="x\n", passed=False))
        assert main.main(["laplace", "--seed", "1", "--n", "10"]) == 1


class TestExitCodes:
    def test_missing_seed(self):
        with pytest.raises(SystemExit) as exc:
            main.main(["laplace", "--n", "10"])
        assert exc.value.code == 2

    def test_missing_parameter(self):
        assert main.main(["rho", "--seed", "1"]) == 2

    def test_margin_out_of_domain(self):
        assert main.main(["rho", "--seed", "1", "--kappa", "3"]) == 2

    def test_invalid_dimension(self):
        assert main.main(["disc", "--seed", "1", "--n", "3", "--d", "0"]) == 2

    def test_enumeration_budget(self):
        assert main.main(["disc", "--seed", "1", "--n", "27", "--d", "2", "--instances", "2"]) == 3

    def test_zero_hits(self):
        args = ["moments", "--seed", "1", "--kappa", "0.3", "--n", "2", "--d", "10"]
        assert main.main(args + ["--instances", "2", "--samples", "100"]) == 4

    def test_chain_out_of_band(self, tmp_path):
        out = tmp_path / "esd.csv"
        args = ["esd", "--seed", "1", "--kappa", "1", "--d", "2", "--out", str(out)]
        assert main.main(args + ["--burn-in", "0", "--sweeps", "40", "--thin", "1", "--chains", "1"]) == 5
        payload = json.loads((tmp_path / "esd.csv.diagnostics.json").read_text())
        assert payload["error"] == "ChainConvergenceError"
        assert payload["metadata"]["config"]["seed"] == 1
        diagnostics = payload["diagnostics"]
        assert diagnostics["stream"] == [0] and diagnostics["seed"] == 1
        assert not 0.2 <= diagnostics["acceptance"] <= 0.5
        assert diagnostics["tau_int_sum_sq"] >= 1.0

    def test_chain_diagnostics_on_stdout(self, capsys):
        args = ["esd", "--seed", "1", "--kappa", "1", "--d", "2"]
        assert main.main(args + ["--burn-in", "0", "--sweeps", "40", "--thin", "1", "--chains", "1"]) == 5
        payload = json.loads(capsys.readouterr().out)
        assert "acceptance" in payload["diagnostics"]

    def test_help_lists_exit_codes(self):
        text = main.build_parser().format_help()
        for code in range(6):
            assert f"\n  {code}  " in text


@pytest.mark.slow
def test_phase_single_row(capsys):
    assert main.main(["phase", "--seed", "1", "--grid", "1.0:1.0:0.1", "--tau", "0.14", "--format", "json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    (row,) = payload["rows"]
    assert row["region"] == "UNKNOWN"
    assert row["tau1"] == pytest.approx(0.128055, abs=1e-6)
