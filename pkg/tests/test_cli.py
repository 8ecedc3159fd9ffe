import json

import numpy as np
import pytest

from mdshaping._io import read_csv
from mdshaping.cli import THREADS_ENV, main
from mdshaping.constellation import (
    FirstOrthantSet,
    LabeledConstellation,
    make_qam,
    make_sp_qam,
    read_constellation,
    write_constellation,
)


def run(tmp_path, *argv):
    return main(["--out-dir", str(tmp_path), *map(str, argv)])


def manifest(tmp_path, cmd):
    return json.loads((tmp_path / f"{cmd}.manifest.json").read_text())


def test_generate_qam(tmp_path):
    assert run(tmp_path, "generate", "qam", "--bits", 4, "--name", "QAM16") == 0
    c = read_constellation(tmp_path / "QAM16.txt")
    np.testing.assert_array_equal(c.points, make_qam(4).points)
    m = manifest(tmp_path, "generate")
    assert m["outputs"] == [str(tmp_path / "QAM16.txt")]
    assert m["version"] and m["seeds"]["seed"] == 0


def test_generate_sp_qam(tmp_path):
    assert run(tmp_path, "generate", "sp-qam", "--bits", 7, "--out", "sp.txt") == 0
    assert read_constellation(tmp_path / "sp.txt") == make_sp_qam(7)


def test_generate_os_expand(tmp_path):
    s1 = tmp_path / "s1.txt"
    write_constellation(LabeledConstellation([[0.3, 0.6], [0.7, 0.2]], [[0], [1]]), s1)
    assert run(tmp_path, "generate", "os-expand", "--in", s1, "--out", "os.txt") == 0
    c = read_constellation(tmp_path / "os.txt")
    assert c.M == 8 and c.m == 3
    assert isinstance(FirstOrthantSet(c.points[:2], c.labels[:2, 2:]), FirstOrthantSet)


def test_evaluate_csv(tmp_path):
    q = tmp_path / "q.txt"
    write_constellation(make_qam(2), q)
    assert run(tmp_path, "evaluate", q, "--snr-db", "30") == 0
    header, rows = read_csv(tmp_path / "evaluate.csv")
    assert header == ["snr_db", "gmi_gh_bit"]
    assert float(rows[0][1]) >= 1.999


def test_evaluate_gh_and_mc_agree(tmp_path):
    q = tmp_path / "q.txt"
    write_constellation(make_qam(4), q)
    assert run(tmp_path, "evaluate", q, "--snr-sweep", "10:10:1", "--method", "both") == 0
    header, rows = read_csv(tmp_path / "evaluate.csv")
    r = dict(zip(header, map(float, rows[0])))
    assert abs(r["gmi_gh_bit"] - r["gmi_mc_bit"]) < 0.01


def test_optimize_reproducible(tmp_path):
    args = ["optimize", "--snr-db", 9.5, "--constraint", "os", "--init", "random-orthant",
            "--bits", 5, "--dims", 4, "--max-iter", 15, "--restarts", 2, "--name", "OS32"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(a, *args) == 0
    assert main(["--threads", "2", "--out-dir", str(b), *map(str, args)]) == 0
    assert (a / "OS32.txt").read_bytes() == (b / "OS32.txt").read_bytes()
    assert (a / "OS32.trace.csv").read_bytes() == (b / "OS32.trace.csv").read_bytes()
    header, _ = read_csv(a / "OS32.trace.csv")
    assert "effective_snr_db" in header


def test_rerun_from_manifest(tmp_path):
    q = tmp_path / "q.txt"
    write_constellation(make_qam(2), q)
    out = tmp_path / "o"
    assert run(out, "evaluate", q, "--snr-db", "3,6", "--method", "mc", "--samples", 20000) == 0
    first = (out / "evaluate.csv").read_bytes()
    (out / "evaluate.csv").unlink()
    assert main(["rerun", str(out / "evaluate.manifest.json")]) == 0
    assert (out / "evaluate.csv").read_bytes() == first


def test_simulate_and_config(tmp_path):
    c = tmp_path / "pm.txt"
    main(["--out-dir", str(tmp_path), "generate", "pm-product", "--bits", "2", "--out", "pm.txt"])
    cfg = tmp_path / "link.cfg"
    cfg.write_text("span_length_km = 80\nn_symbols = 1024  # short\nsteps_per_span = 10\n")
    assert run(tmp_path, "simulate", c, "--config", cfg, "--power-sweep=-2,2",
               "--set", "amplifier=ideal") == 0
    header, rows = read_csv(tmp_path / "simulate.csv")
    assert header[0] == "launch_power_dbm" and len(rows) == 2
    m = manifest(tmp_path, "simulate")
    assert m["config"]["link"]["amplifier"] == "ideal"
    assert m["config"]["tx"]["n_symbols"] == 1024


def test_errors_exit_nonzero(tmp_path, capsys):
    assert run(tmp_path, "evaluate", tmp_path / "missing.txt", "--snr-db", "1") == 1
    assert "error" in capsys.readouterr().err
    assert run(tmp_path, "generate", "qam") == 1
    q = tmp_path / "q.txt"
    write_constellation(make_qam(2), q)
    assert run(tmp_path, "simulate", q) == 1
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("span_length = 3\n")
    assert run(tmp_path, "fit-eta", q, "--config", cfg) == 1
    with pytest.raises(SystemExit):
        run(tmp_path, "generate", "hex")


def test_threads_env(tmp_path, monkeypatch):
    q = tmp_path / "q.txt"
    write_constellation(make_qam(2), q)
    monkeypatch.setenv(THREADS_ENV, "3")
    assert run(tmp_path, "evaluate", q, "--snr-db", "5") == 0
    assert manifest(tmp_path, "evaluate")["threads"] == 3
    monkeypatch.setenv(THREADS_ENV, "zero")
    assert run(tmp_path, "evaluate", q, "--snr-db", "5") == 1
