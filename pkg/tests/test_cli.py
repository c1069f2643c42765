import csv
import io

import pytest

from shardsched.adversary import AdversaryParams, Injection, InjectionTrace, token_bucket_generator, write_trace
from shardsched.cli import SWEEP_COLUMNS, main, parse_rho_list
from shardsched.engine import ROUND_COLUMNS


def test_run_zero_rounds(capsys):
    assert main(["run", "--rounds", "0"]) == 0
    assert capsys.readouterr().out == ",".join(ROUND_COLUMNS) + "\n"


def test_dump_config_round_trip(tmp_path, capsys):
    flags = ["--scheduler", "fds", "--topology", "line", "--s", "8", "--rho", "0.03", "--rounds", "200",
             "--seed", "5"]
    assert main(["run", *flags, "--dump-config"]) == 0
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text(capsys.readouterr().out)
    assert main(["run", *flags]) == 0
    direct = capsys.readouterr().out
    assert main(["run", "--config", str(cfg_file)]) == 0
    assert capsys.readouterr().out == direct


def test_flags_override_file(tmp_path, capsys):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("s = 8\nrounds = 50\nseed = 1\n")
    assert main(["run", "--config", str(cfg_file), "--rounds", "7", "--dump-config"]) == 0
    out = capsys.readouterr().out
    assert "rounds = 7" in out and "s = 8" in out and "seed = 1" in out


@pytest.mark.parametrize("argv", [
    ["run", "--rho", "1.5"],
    ["run", "--s", "zero"],
    ["run", "--scheduler", "nope"],
    ["run", "--scheduler", "bds", "--topology", "line", "--s", "8"],
    ["run", "--retry-aborts", "maybe"],
    ["run", "--config", "/nonexistent/file.cfg"],
    ["sweep", "--rho", "0.3..0.1", "--b", "2"],
    ["sweep", "--rho", "0.1", "--b", "0"],
    ["frobnicate"],
])
def test_config_errors_exit_1(argv, capsys):
    assert main(argv) == 1


def test_bad_config_line(tmp_path):
    f = tmp_path / "bad.cfg"
    f.write_text("s 8\n")
    assert main(["run", "--config", str(f)]) == 1
    f.write_text("colour = red\n")
    assert main(["run", "--config", str(f)]) == 1


def test_check_adversary(tmp_path, capsys):
    ok = token_bucket_generator(AdversaryParams("1/20", 2, 3, 0), 6, 300, strategy="uniform_random")
    path = tmp_path / "ok.trace"
    write_trace(ok, path)
    assert main(["check-adversary", str(path), "--rho", "1/20", "--b", "2"]) == 0
    bad = InjectionTrace(4, 10, 1, [Injection(3, i, 2, (2,)) for i in range(1, 5)])
    path = tmp_path / "bad.trace"
    write_trace(bad, path)
    assert main(["check-adversary", str(path), "--rho", "0.1", "--b", "2"]) == 2
    out = capsys.readouterr().out
    assert "violation: shard S2, rounds [3, 3]" in out


def test_verify(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 8


def test_run_check_bounds(capsys):
    argv = ["run", "--scheduler", "bds", "--s", "16", "--k", "4", "--rho", "1/72", "--b", "2",
            "--rounds", "800", "--check-bounds"]
    assert main(argv) == 0


def test_run_outputs_to_files(tmp_path):
    out, summ = tmp_path / "r.csv", tmp_path / "s.csv"
    assert main(["run", "--s", "8", "--rounds", "100", "--csv", str(out), "--summary", str(summ)]) == 0
    rows = list(csv.reader(out.open()))
    assert tuple(rows[0]) == ROUND_COLUMNS and len(rows) == 101
    head, vals = list(csv.reader(summ.open()))
    assert "avg_latency" in head and len(head) == len(vals)


def test_parse_rho_list():
    assert [float(x) for x in parse_rho_list("0.05..0.30")] == pytest.approx([0.05, 0.1, 0.15, 0.2, 0.25, 0.3])
    assert len(parse_rho_list("0.1..0.2:0.01")) == 11
    assert [str(x) for x in parse_rho_list("1/72,0.5")] == ["1/72", "1/2"]


@pytest.mark.parametrize("workers", ["1", "2"])
def test_small_sweep(tmp_path, capsys, workers):
    out = tmp_path / "sweep.csv"
    svg = tmp_path / "sweep.svg"
    argv = ["sweep", "--s", "8", "--k", "3", "--rounds", "150", "--rho", "0.05,0.1", "--b", "1,4",
            "--workers", workers, "--out", str(out), "--plot", str(svg)]
    assert main(argv) == 0
    rows = list(csv.DictReader(out.open()))
    assert tuple(rows[0]) == SWEEP_COLUMNS
    assert [(r["rho"], r["b"]) for r in rows] == [("0.05", "1"), ("0.1", "1"), ("0.05", "4"), ("0.1", "4")]
    assert svg.read_text().lstrip().startswith(("<?xml", "<svg"))


def test_sweep_to_stdout(capsys):
    assert main(["sweep", "--s", "4", "--rounds", "40", "--rho", "0.1", "--b", "1"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 1 and rows[0]["growing"] in ("True", "False")
