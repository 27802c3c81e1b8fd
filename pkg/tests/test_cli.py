import csv
import math
import subprocess
import sys

import numpy as np
import pytest

from gradbound.cli import main, read_grid_csv, write_grid_csv
from gradbound.harness import CSV_HEADER, read_csv


def test_constants_table(capsys):
    assert main(["constants", "--p-min", "1.5", "--p-max", "3", "--steps", "4"]) == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[0] == ["p", "C_p", "K_p", "xi_p", "S1", "sbar_p", "factor", "Lambda",
                       "Lambda_literal"]
    assert len(rows) == 5
    last = dict(zip(rows[0], map(float, rows[-1])))
    assert last["p"] == 3.0 and last["C_p"] == 3.0
    assert last["factor"] == pytest.approx(3**2.5)


def test_constants_to_file(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["constants", "--dim", "2", "--space", "lebesgue_q", "--theta", "3",
                 "--regime", "boundary", "--steps", "3", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 4


def test_constants_bad_range():
    with pytest.raises(SystemExit):
        main(["constants", "--p-min", "0.5"])


def test_constants_mismatched_space(capsys):
    assert main(["constants", "--dim", "2", "--space", "lorentz_N1"]) == 2
    assert "error" in capsys.readouterr().err


def test_solve_writes_grids(tmp_path, capsys):
    assert main(["solve", "--shape", "square", "--n", "16", "--p", "2", "--eps", "0",
                 "--source", "sine", "--out", str(tmp_path)]) == 0
    u, h = read_grid_csv(tmp_path / "u.csv")
    g, _ = read_grid_csv(tmp_path / "gradmag.csv")
    assert u.shape == (17, 17) and g.shape == (17, 17) and h == 1 / 16
    assert u.max() == pytest.approx(1.0, abs=0.01)
    first = (tmp_path / "u.csv").read_text().splitlines()[0]
    assert first == "# shape: 17,17; h: 0.0625"
    assert "grad_sup=" in capsys.readouterr().out


def test_solve_reads_source_csv(tmp_path):
    x = np.linspace(0.0, 1.0, 17)
    X, Y = np.meshgrid(x, x, indexing="ij")
    f = 2 * math.pi**2 * np.sin(math.pi * X) * np.sin(math.pi * Y)
    write_grid_csv(tmp_path / "f.csv", f, 1 / 16)
    out = tmp_path / "run"
    assert main(["solve", "--n", "16", "--p", "2", "--eps", "0",
                 "--source", str(tmp_path / "f.csv"), "--out", str(out)]) == 0
    u, _ = read_grid_csv(out / "u.csv")
    assert u.max() == pytest.approx(1.0, abs=0.01)


def test_solve_budget_exhausted(tmp_path):
    assert main(["solve", "--n", "16", "--p", "6", "--max-iter", "1",
                 "--out", str(tmp_path)]) == 1
    assert (tmp_path / "u.csv").exists()


def test_solve_3d_grid_round_trip(tmp_path):
    a = np.arange(60.0).reshape(3, 4, 5) / 7
    write_grid_csv(tmp_path / "a.csv", a, 0.125)
    b, h = read_grid_csv(tmp_path / "a.csv")
    assert np.array_equal(a, b) and h == 0.125


def test_grid_csv_bad_header(tmp_path):
    (tmp_path / "x.csv").write_text("1,2\n3,4\n")
    with pytest.raises(ValueError):
        read_grid_csv(tmp_path / "x.csv")


def test_sweep(tmp_path, capsys):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("p_list = 1.5, 2, 3\ngrid_levels = 16, 24\n")
    out = tmp_path / "s.csv"
    assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "PASS bound shape" in text and "PASS energy lemma" in text
    reports = read_csv(out)
    assert len(reports) == 6
    assert out.read_text().splitlines()[0] == ",".join(CSV_HEADER)


def test_sweep_single_grid_skips_shape(tmp_path, capsys):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("p_list = 1.5, 2\ngrid_levels = 16\n")
    assert main(["sweep", "--config", str(cfg)]) == 0
    assert (tmp_path / "s.csv").exists()
    assert "bound shape" not in capsys.readouterr().out


def test_sweep_too_few_p_fails(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("p_list = 1.5, 2\ngrid_levels = 16, 24\n")
    assert main(["sweep", "--config", str(cfg)]) == 1


def test_sweep_bad_config(tmp_path, capsys):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("p_list = 0.5\n")
    assert main(["sweep", "--config", str(cfg)]) == 2
    assert main(["sweep", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_check_lemmas(capsys):
    assert main(["check-lemmas", "--trials", "500", "--seed", "2"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 2


def test_installed_entry_point():
    proc = subprocess.run([sys.executable, "-m", "gradbound.cli", "check-lemmas",
                           "--trials", "50"], capture_output=True, text=True)
    assert proc.returncode == 0 and "PASS" in proc.stdout
