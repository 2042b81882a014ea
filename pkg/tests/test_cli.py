import csv
import io

import pytest

from netvd import cli
from netvd.estimator import REPORT_COLUMNS

MINIMAL = """schema: 1
runs:
  tiny:
    impl: CR
    n: 2
    N: 2
    K: 2
    mode: exact
    noise: {p1Q: 0, p2Q: 0, pBell: 0, pDetect: 0, pMidPrep: 0, idleRate: 0}
"""


def _rows(text):
    lines = [l for l in text.splitlines() if not l.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


def _write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_minimal_run(tmp_path, capsys):
    code = cli.main(["run", "--config", _write(tmp_path, MINIMAL), "--no-timestamp"])
    out = capsys.readouterr()
    assert code == 0
    rows = _rows(out.out)
    assert len(rows) == 1 and tuple(rows[0]) == REPORT_COLUMNS
    assert abs(float(rows[0]["deltaE"])) < 1e-12
    assert rows[0]["seed"] == "0" and rows[0]["c"] == "1.0" and rows[0]["mode"] == "exact"
    assert "CR n=2 N=2" in out.err


def test_output_is_byte_identical(tmp_path):
    cfg = _write(tmp_path, MINIMAL.replace("mode: exact", "mode: mc\n    M: 200")
                 .replace("p2Q: 0", "p2Q: 0.05"))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert cli.main(["run", "--config", cfg, "--seed", "3", "--no-timestamp", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()
    cli.main(["run", "--config", cfg, "--seed", "3", "--out", str(a)])
    first, rest = a.read_text().split("\n", 1)
    assert first.startswith("# generated") and rest == b.read_text()


def test_fig6_qecr_grid():
    cfg = cli.load_config("fig6#qecr-N4")
    cells = cli.config_cells(cfg)
    assert len(cells) == 30
    assert {(c.n, c.c) for c in cells} == {(n, c) for n in range(1, 6)
                                           for c in (0.125, 0.25, 0.5, 1, 2, 4)}
    assert all(c.impl == "QECR" and c.preset == "h4" for c in cells)


@pytest.mark.parametrize("name", cli.RECIPES)
def test_recipes_parse(name):
    cfg = cli.load_config(name)
    if name != "table1":
        assert cli.config_cells(cfg)


def test_mc_m150_rejected(tmp_path, capsys):
    cfg = _write(tmp_path, MINIMAL.replace("mode: exact", "mode: mc\n    M: 150"))
    assert cli.main(["run", "--config", cfg]) == 1
    assert "runs.tiny.M" in capsys.readouterr().err


@pytest.mark.parametrize("patch,field", [
    ("impl: CR", "runs.tiny.impl"),
    ("n: 2", "runs.tiny.n"),
    ("K: 2", "runs.tiny"),
])
def test_field_level_messages(tmp_path, capsys, patch, field):
    bad = {"impl: CR": "impl: XY", "n: 2": "n: {from: 3, to: 2}", "K: 2": "K: 2\n    colour: red"}[patch]
    cfg = _write(tmp_path, MINIMAL.replace(patch, bad))
    assert cli.main(["run", "--config", cfg]) == 1
    assert field in capsys.readouterr().err


def test_unknown_run_and_file(capsys):
    assert cli.main(["run", "--config", "fig6#nope"]) == 1
    assert cli.main(["run", "--config", "/nonexistent.yaml"]) == 1


def test_runtime_failure_exit_code(tmp_path):
    cfg = _write(tmp_path, MINIMAL.replace("K: 2", "K: 2\n    h: [0.1]"))
    # the h length check fires at config time
    assert cli.main(["run", "--config", cfg]) == 1
    # field strength outside [-1, 1] only fails when the cell runs
    cfg = _write(tmp_path, MINIMAL.replace("K: 2", "K: 2\n    h: [5.0, 0.1]"))
    buf = tmp_path / "out.csv"
    assert cli.main(["run", "--config", cfg, "--no-timestamp", "--out", str(buf)]) == 2
    (row,) = _rows(buf.read_text())
    assert row["error"].startswith("ValueError")


def test_resources_rows(capsys):
    assert cli.main(["resources", "--impl", "BW", "--n", "4", "--N", "6", "--no-timestamp"]) == 0
    (row,) = _rows(capsys.readouterr().out)
    assert (row["qubits"], row["cswap"], row["bsm"]) == ("25", "6", "12")
    cli.main(["resources", "--impl", "QECR", "--n", "2:8", "--N", "4", "--no-timestamp"])
    rows = _rows(capsys.readouterr().out)
    assert len(rows) == 7 and {r["qubits"] for r in rows} == {"9"}
    cli.main(["resources", "--impl", "CR,BW", "--n", "1", "--N", "3", "--mode", "as-built",
              "--no-timestamp"])
    rows = _rows(capsys.readouterr().out)
    assert all(r["cswap"] == "0" and r["bsm"] == "0" for r in rows)


def test_resources_table1_recipe(capsys):
    assert cli.main(["resources", "--config", "table1", "--no-timestamp"]) == 0
    rows = _rows(capsys.readouterr().out)
    assert len(rows) == 3 * 7 * 8 * 2


def test_resources_bad_range(capsys):
    assert cli.main(["resources", "--n", "x:y"]) == 1


def _topo(tmp_path, text):
    return _write(tmp_path, text, "net.txt")


def test_validate_examples(tmp_path, capsys):
    two = _topo(tmp_path, "node 0 ancilla\nnode 1\nlink 0 1\n")
    assert cli.main(["validate", two, "--impl", "QECR", "--n", "9", "--no-timestamp"]) == 0
    assert capsys.readouterr().out.startswith("ok QECR n=9")
    path = _topo(tmp_path, "node 0 ancilla\nnode 1\nnode 2\nlink 0 1\nlink 1 2\n")
    assert cli.main(["validate", path, "--impl", "CR", "--n", "6", "--no-timestamp"]) == 1
    assert "deficiency:" in capsys.readouterr().out
    empty = _topo(tmp_path, "")
    assert cli.main(["validate", empty, "--impl", "CR", "--n", "2"]) == 1
    assert "line 1" in capsys.readouterr().err


def test_validate_parse_error_line(tmp_path, capsys):
    p = _topo(tmp_path, "node 0\nnode 1\nlinx 0 1\n")
    assert cli.main(["validate", p, "--impl", "CR", "--n", "2"]) == 1
    assert "line 3" in capsys.readouterr().err


def test_scaling_command(tmp_path, capsys):
    cfg = _write(tmp_path, """schema: 1
runs:
  s:
    impl: CR
    N: 2
    K: 1
    n: 2
    c: 4
    Ms: [100, 300, 1000]
""")
    assert cli.main(["scaling", "--config", cfg]) == 1      # three points are too few
    cfg = _write(tmp_path, open(cfg).read().replace("[100, 300, 1000]", "[200, 500, 1000, 2000]"))
    assert cli.main(["scaling", "--config", cfg, "--no-timestamp"]) == 0
    out = capsys.readouterr().out
    assert len(_rows(out)) == 4 and "# slope=" in out
