from __future__ import annotations

import csv
import json
import shutil

import pytest

from fixinfer.cli import main, resolve_config, build_parser
from fixinfer.fxnum import OverflowMode

from conftest import PROGRAMS


@pytest.fixture
def progs(tmp_path):
    d = tmp_path / "progs"
    shutil.copytree(PROGRAMS, d)
    return d


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_analyze_writes_outputs(progs, tmp_path, capsys):
    out_dir = tmp_path / "out"
    code, out, err = run(capsys, "analyze", progs / "sine.sig", "--out-dir", out_dir)
    assert code == 0
    data = json.loads((out_dir / "sine.formats.json").read_text())
    by_label = {n["label"]: (n["m"], n["l"]) for n in data["nodes"]}
    assert by_label["add"] == (1, -38) and by_label["0.015625"] == (-6, -38)
    assert (out_dir / "sine.dot").read_text().startswith("digraph")
    assert "provenance" in out
    assert "widening" in err  # the phasor loop exhausts its budget


def test_analyze_is_byte_identical(progs, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    run(capsys, "analyze", progs / "karplus.sig", "--out-dir", a)
    run(capsys, "analyze", progs / "karplus.sig", "--out-dir", b)
    for name in ("karplus.formats.json", "karplus.dot"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_analyze_json_and_max_msb(progs, tmp_path, capsys):
    code, out, _ = run(capsys, "analyze", progs / "karplus.sig", "--json", "--max-msb", 15,
                       "--out-dir", tmp_path)
    assert code == 0
    nodes = json.loads(out)["nodes"]
    assert max(n["m"] for n in nodes) == 15
    assert any(n["provenance"] == "MsbCap" for n in nodes)


def test_simulate_outputs(progs, tmp_path, capsys):
    code, out, _ = run(capsys, "simulate", progs / "sine.sig", "--out-dir", tmp_path)
    assert code == 0
    snr = json.loads((tmp_path / "sine.snr.json").read_text())
    assert set(snr) == {"phase", "out"}
    assert snr["out"]["snr"] > 0 and snr["out"]["window"] == 200
    with open(tmp_path / "sine.out.trace.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 200 and rows[0]["output"] == "out"
    assert "log10(S/N)" in out


def test_simulate_window_defaults_to_samples(progs, tmp_path, capsys):
    code, _, _ = run(capsys, "simulate", progs / "const.sig", "-n", 50, "--json",
                     "--out-dir", tmp_path)
    assert code == 0
    rep = json.loads((tmp_path / "const.snr.json").read_text())["out"]
    assert rep["window"] == 50 and rep["exact"]


def _trace(path):
    with open(path) as fh:
        return [float(r["fixed"]) for r in csv.DictReader(fh)]


def test_ramp_wrap_and_saturate(progs, tmp_path, capsys):
    cfg = progs / "ramp.cfg"
    code, _, _ = run(capsys, "simulate", progs / "ramp.sig", "--config", cfg, "-n", 20,
                     "--out-dir", tmp_path / "w")
    assert code == 0
    w = _trace(tmp_path / "w" / "ramp.trace.csv")
    assert w[:9] == [0.5, 1, 1.5, 2, 2.5, 3, 3.5, -4, -3.5]
    code, _, _ = run(capsys, "simulate", progs / "ramp.sig", "--config", cfg, "-n", 20,
                     "--overflow", "saturate", "--out-dir", tmp_path / "s")
    assert code == 0
    s = _trace(tmp_path / "s" / "ramp.trace.csv")
    assert s[6:] == [3.5] * 14


def test_ramp_error_mode_exit_code(progs, tmp_path, capsys):
    code, _, err = run(capsys, "simulate", progs / "ramp.sig", "--config", progs / "ramp.cfg",
                       "--overflow", "error", "--out-dir", tmp_path)
    assert code == 2 and "sample 7" in err


def test_emit(progs, tmp_path, capsys):
    code, out, _ = run(capsys, "emit", progs / "const.sig")
    assert code == 0 and out == "out = sfx(-1,-33)(0.5);\n"
    assert not list(tmp_path.glob("*.annotated.txt"))
    code, out, _ = run(capsys, "emit", progs / "karplus.sig", "--json", "--out-dir", tmp_path)
    assert code == 0
    rows = json.loads(out)["formats"]
    assert any(r["l"] == -57 for r in rows)
    assert "sfx(-1,-33)(0.5)" in (tmp_path / "karplus.annotated.txt").read_text()


def test_user_errors(progs, tmp_path, capsys):
    code, _, err = run(capsys, "analyze", tmp_path / "missing.sig")
    assert code == 1 and "cannot read" in err
    bad = tmp_path / "bad.sig"
    bad.write_text("out = sin(1 +)\n")
    code, _, err = run(capsys, "analyze", bad, "--out-dir", tmp_path)
    assert code == 1 and "bad.sig:1:" in err
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("no_such_key = 3\n")
    code, _, err = run(capsys, "analyze", progs / "const.sig", "--config", cfg)
    assert code == 1
    code, _, _ = run(capsys, "simulate", progs / "const.sig", "-n", 5, "--window", 10,
                     "--out-dir", tmp_path)
    assert code == 1


def test_analysis_errors(tmp_path, capsys):
    p = tmp_path / "unbounded.sig"
    p.write_text("out = sin(1 / input(0))\n")
    code, _, err = run(capsys, "analyze", p, "--out-dir", tmp_path)
    assert code == 2 and "error" in err


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\nmax-msb = 12\noverflow = saturate\nfeedback_lsb = -16\n")
    args = build_parser().parse_args(["analyze", "x.sig", "--config", str(cfg), "--max-msb", "9"])
    c = resolve_config(args)
    assert c.max_msb == 9 and c.overflow is OverflowMode.SATURATE and c.feedback_lsb == -16
    args = build_parser().parse_args(["analyze", "x.sig"])
    assert resolve_config(args).max_msb == 31


def test_usage_errors_are_user_errors(capsys):
    assert main(["frobnicate"]) == 1
    assert main(["analyze", "x.sig", "--overflow", "clip"]) == 1
    assert main(["--help"]) == 0
