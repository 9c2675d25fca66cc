import csv
import json
import subprocess
import sys

import pytest

from tema_tta.cli import main

SMALL_CONFIG = """\
seed = 3

[world]
n_classes = 5
input_dim = 8
n_layers = 3
n_corruptions = 3
source_samples = 4000
reference_samples = 4000

[scenario]
corruptions = [0, 1, 2]
samples_per_segment = 40

[run]
modes = ["tbn", "full", "fixed_alpha(0.5)"]
batch_sizes = [8, 2]
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(SMALL_CONFIG)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestDiversity:
    @pytest.mark.parametrize("k, n, out", [(10, 128, "9.3431"), (1, 5, "1.0000"), (10, 2, "1.8182")])
    def test_single(self, capsys, k, n, out):
        assert main(["diversity", "--k", str(k), "--n", str(n)]) == 0
        assert capsys.readouterr().out == out + "\n"

    def test_range_and_csv(self, capsys, tmp_path):
        path = tmp_path / "d.csv"
        assert main(["diversity", "--k", "10", "--n", "1:4", "--csv", str(path)]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 5 and lines[2].split() == ["2", "1.8182"]
        rows = read_csv(path)
        assert [int(r["N"]) for r in rows] == [1, 2, 3, 4]
        assert float(rows[1]["expected_diversity"]) == 20 / 11

    def test_list(self, capsys):
        assert main(["diversity", "--k", "10", "--n", "128,200"]) == 0
        assert "9.5694" in capsys.readouterr().out

    @pytest.mark.parametrize("args", [["--k", "0", "--n", "3"], ["--k", "3", "--n", "0"], ["--k", "3", "--n", "x"], ["--k", "3"]])
    def test_invalid(self, capsys, args):
        assert main(["diversity", *args]) == 2


class TestSelectMomentum:
    @pytest.mark.parametrize(
        "args, m",
        [
            (["--nt", "2", "--k", "10"], "0.01"),
            (["--nt", "200", "--k", "10"], "1.0"),
            (["--nt", "200", "--k", "10", "--lambda", "0", "--grid", "1.0"], "1.0"),
        ],
    )
    def test_choice(self, capsys, args, m):
        assert main(["select-momentum", "--ns", "128", *args]) == 0
        out = capsys.readouterr().out
        assert out.splitlines()[0].startswith(f"m* = {m} ")

    def test_table_lists_grid(self, capsys):
        main(["select-momentum", "--nt", "16", "--k", "10"])
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 6
        assert lines[3].split()[:3] == ["0.1", "21", "336"] and lines[3].endswith("*")

    def test_stable_output(self, capsys):
        main(["select-momentum", "--nt", "16", "--k", "10"])
        first = capsys.readouterr().out
        main(["select-momentum", "--nt", "16", "--k", "10"])
        assert capsys.readouterr().out == first

    @pytest.mark.parametrize("extra", [["--epsilon", "2"], ["--grid", "0.0"], ["--lambda", "-1"], ["--grid", "a,b"]])
    def test_invalid(self, extra):
        assert main(["select-momentum", "--nt", "2", "--k", "10", *extra]) == 2


class TestSimulateReport:
    def test_outputs(self, config_file, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["simulate", str(config_file), "--out-dir", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["runs"]) == 6
        assert manifest["config"]["seed"] == 3
        for run in manifest["runs"]:
            rows = read_csv(out / run["file"])
            assert len(rows) == run["n_batches"]
            assert float(rows[-1]["cum_error"]) == run["overall_error"]
        snap = json.loads((out / "source_stats_s3.json").read_text())
        assert len(snap["layers"]) == 3

    def test_config_flag_and_seed_override(self, config_file, tmp_path):
        out = tmp_path / "out"
        assert main(["--seed", "9", "--out-dir", str(out), "simulate", "--config", str(config_file)]) == 0
        assert (out / "tbn_n8_s9.csv").is_file()
        assert (out / "fixed_alpha_0.5_n2_s9.csv").is_file()

    def test_byte_identical(self, config_file, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["simulate", str(config_file), "--out-dir", str(a)])
        main(["simulate", str(config_file), "--out-dir", str(b)])
        names = sorted(p.name for p in a.glob("*.csv"))
        assert names == sorted(p.name for p in b.glob("*.csv")) and len(names) == 6
        for name in names:
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_report(self, config_file, tmp_path, capsys):
        out = tmp_path / "out"
        main(["simulate", str(config_file), "--out-dir", str(out)])
        capsys.readouterr()
        assert main(["report", str(out)]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[1].split() == ["Mode", "8", "2", "Avg."]
        assert [l.split()[0] for l in lines[2:]] == ["tbn", "full", "fixed_alpha(0.5)"]

    def test_report_averages_seeds(self, config_file, tmp_path, capsys):
        config_file.write_text(SMALL_CONFIG.replace('[run]\n', '[run]\nreplicates = 2\n'))
        out = tmp_path / "out"
        main(["simulate", str(config_file), "--out-dir", str(out)])
        capsys.readouterr()
        main(["report", str(out)])
        row = next(l for l in capsys.readouterr().out.splitlines() if l.startswith("tbn"))
        finals = [float(read_csv(out / f"tbn_n8_s{s}.csv")[-1]["cum_error"]) for s in (3, 4)]
        assert float(row.split()[1]) == pytest.approx(100 * (finals[0] + finals[1]) / 2, abs=0.005)

    def test_unknown_mode(self, config_file, tmp_path, capsys):
        config_file.write_text(SMALL_CONFIG.replace('"tbn"', '"warp"'))
        assert main(["simulate", str(config_file), "--out-dir", str(tmp_path / "o")]) == 2
        assert "run.modes" in capsys.readouterr().err

    def test_unknown_key(self, config_file, tmp_path, capsys):
        config_file.write_text(SMALL_CONFIG + "[engine]\nwarp = 1\n")
        assert main(["simulate", str(config_file), "--out-dir", str(tmp_path / "o")]) == 2
        assert "engine.warp" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert main(["simulate"]) == 2
        assert main(["simulate", str(tmp_path / "none.toml")]) == 2

    def test_report_empty_dir(self, tmp_path):
        assert main(["report", str(tmp_path)]) == 1

    def test_report_incomplete_run(self, config_file, tmp_path):
        out = tmp_path / "out"
        main(["simulate", str(config_file), "--out-dir", str(out)])
        (out / "full_n2_s3.csv").write_text("step\n")
        assert main(["report", str(out)]) == 1
        (out / "full_n2_s3.csv").unlink()
        assert main(["report", str(out)]) == 1


class TestEntryPoints:
    def test_no_command(self):
        assert main([]) == 2

    def test_print_defaults(self, capsys):
        from tema_tta.config import loads

        assert main(["--print-defaults"]) == 0
        assert loads(capsys.readouterr().out) == loads("")

    def test_verbose_after_subcommand(self, capsys):
        assert main(["diversity", "--k", "3", "--n", "3", "-v"]) == 0

    def test_module_invocation(self):
        proc = subprocess.run(
            [sys.executable, "-m", "tema_tta", "diversity", "--k", "10", "--n", "128"],
            capture_output=True,
            text=True,
            check=True,
        )
        assert proc.stdout == "9.3431\n"
