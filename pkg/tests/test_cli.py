import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from delta_metrology.io.cli import main, parse_measurement
from delta_metrology.io.formats import pixel_filename, read_map_csv, write_transport_file
from delta_metrology.io.pgm import read_pgm
from delta_metrology.transport.fitting import MagnetoTrace
from delta_metrology.transport.hall import hall_slope
from delta_metrology.transport.models import (delta_sigma_parallel, delta_sigma_perp,
                                              delta_sigma_tilt)

SMALL = """seed = 4
[scan]
nx = 6
ny = 4
pitch_um = 12.0
origin_um = [94.0, 42.0]
[reference]
nx = 3
ny = 3
[analysis]
region_um = [90.0, 52.0, 170.0, 68.0]
[snr]
seeds = 2
length_um = 5.0
[transport]
n_cm2 = 1.31e14
n_error_cm2 = 3e12
sigma_sheet_S = 5.33e-4
[external]
t_sims_nm = 1.0
t_sims_error_nm = 0.1
"""


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "run.toml").write_text(SMALL)
    b = np.linspace(0.01, 9.0, 50)
    write_transport_file(root / "perp.csv",
                         MagnetoTrace("perpendicular", b, delta_sigma_perp(b, 4.8, 73.6)))
    write_transport_file(root / "par.csv",
                         MagnetoTrace("parallel", b, delta_sigma_parallel(b, 0.0077483)))
    ang = np.concatenate((np.linspace(0, 3, 31), np.linspace(4, 90, 20)))
    write_transport_file(root / "tilt.csv",
                         MagnetoTrace("tilt", np.full(ang.size, 9.0),
                                      delta_sigma_tilt(9.0, ang, 4.8, 73.6, 0.0077483, 1.9),
                                      angle=ang))
    bh = np.linspace(-9, 9, 19)
    write_transport_file(root / "rxy.csv",
                         MagnetoTrace("perpendicular", bh, hall_slope(1.31e14) * bh,
                                      quantity="R_xy"))
    return root


@pytest.fixture(scope="module")
def simulated(workspace):
    out = workspace / "sim"
    assert main(["simulate", "--config", str(workspace / "run.toml"), "--out", str(out)]) == 0
    return out


def test_parse_measurement_forms():
    for text in ("1.5+-0.1", "1.5+/-0.1", "1.5,0.1"):
        m = parse_measurement(text)
        assert (m.value, m.error) == (1.5, 0.1)
    assert parse_measurement("2").error == 0.0


def test_simulate_writes_scan_previews_and_report(simulated):
    assert (simulated / "scan" / "index.json").exists()
    assert (simulated / "scan" / pixel_filename(5, 3)).exists()
    for stem in ("preview_total", "preview_As"):
        assert (simulated / f"{stem}.csv").exists()
        assert read_pgm(simulated / f"{stem}.pgm").shape == (4, 6)
    rep = json.loads((simulated / "simulate.json").read_text())
    assert rep["seed"] == 4 and rep["command"] == "simulate"
    assert rep["results"]["scan"]["nx"] == 6
    assert rep["defaults"]["beam.dwell_s"] == 0.2
    assert rep["tool"]["version"]


def test_simulate_is_byte_identical(workspace, simulated):
    again = workspace / "sim2"
    main(["simulate", "--config", str(workspace / "run.toml"), "--out", str(again)])
    files = sorted(p.relative_to(simulated) for p in simulated.rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (again / rel).read_bytes() == (simulated / rel).read_bytes(), rel


def test_packed_format_and_seed_override(workspace, capsys):
    out = workspace / "packed"
    code, _, _ = run(["simulate", "--config", workspace / "run.toml", "--out", out,
                      "--format", "packed", "--seed", 9], capsys)
    assert code == 0 and (out / "scan.dmscan").exists()
    assert json.loads((out / "simulate.json").read_text())["seed"] == 9


def test_map_and_threads(workspace, simulated, capsys):
    outs = []
    for threads in ("1", "3"):
        out = workspace / f"map{threads}"
        code, text, _ = run(["map", simulated / "scan", "--config", workspace / "run.toml",
                             "--out", out, "--threads", threads], capsys)
        assert code == 0 and "As: mean" in text
        outs.append(out)
    a = (outs[0] / "map_As.csv").read_bytes()
    assert a == (outs[1] / "map_As.csv").read_bytes()
    values, errors, flags, meta = read_map_csv(outs[0] / "map_As.csv")
    assert values.shape == (4, 6) and meta["unit"] == "counts" and not flags.any()


def test_threads_from_environment(workspace, simulated, capsys, monkeypatch):
    monkeypatch.setenv("DELTA_METROLOGY_THREADS", "2")
    out = workspace / "envthreads"
    code, _, _ = run(["map", simulated / "scan", "--config", workspace / "run.toml",
                      "--out", out], capsys)
    assert code == 0
    assert json.loads((out / "map.json").read_text())["threads"] == 2
    monkeypatch.setenv("DELTA_METROLOGY_THREADS", "many")
    code, _, err = run(["map", simulated / "scan", "--out", out], capsys)
    assert code == 5 and json.loads(err)["error"] == "ConfigError"


def test_fit_spectrum_on_pixel(workspace, simulated, capsys):
    code, text, _ = run(["fit-spectrum", simulated / "scan" / pixel_filename(2, 1),
                         "--config", workspace / "run.toml", "--out", workspace / "fs"],
                        capsys)
    assert code == 0 and text.startswith("As:")
    rep = json.loads((workspace / "fs" / "fit-spectrum.json").read_text())
    assert rep["results"]["amplitudes"]["As"]["unit"] == "counts"
    assert list(rep["inputs"].values())[0]


def test_quantify_and_activation(workspace, simulated, capsys):
    out = workspace / "q"
    code, text, _ = run(["quantify", simulated / "scan", "--config", workspace / "run.toml",
                         "--out", out], capsys)
    assert code == 0 and text.startswith("n_xrf(As)")
    res = json.loads((out / "quantify.json").read_text())["results"]
    assert res["n_xrf"]["unit"] == "cm^-2" and res["n_xrf"]["value"] > 0
    assert res["activation"]["unit"] == "%"
    assert res["calibration"]["reference"] == "simulated"
    assert (out / "density_As.pgm").exists()


def test_quantify_rejects_foreign_reference(workspace, simulated, capsys):
    other = workspace / "other.toml"
    other.write_text(SMALL + "[beam]\ndwell_s = 0.5\n")
    ref = workspace / "ref_other"
    assert main(["simulate", "--config", str(other), "--out", str(ref)]) == 0
    code, _, err = run(["quantify", simulated / "scan", "--config", workspace / "run.toml",
                        "--reference", ref / "scan", "--out", workspace / "qbad"], capsys)
    assert code == 4
    assert json.loads(err)["error"] == "CalibrationError"


def test_snr_ensemble(workspace, capsys):
    code, text, _ = run(["snr", "--config", workspace / "run.toml", "--out", workspace / "snr"],
                        capsys)
    assert code == 0 and "over 2 trace pair(s)" in text
    res = json.loads((workspace / "snr" / "snr.json").read_text())["results"]
    assert len(res["snr"]) == 2 and res["trace_points"] == 11


def test_transport_commands_and_report(workspace, simulated, capsys):
    cfg = workspace / "run.toml"
    code, text, _ = run(["wl-fit", "--perp", workspace / "perp.csv", "--parallel",
                         workspace / "par.csv", "--tilt", workspace / "tilt.csv",
                         "--config", cfg, "--out", workspace / "wl"], capsys)
    assert code == 0, text
    wl = json.loads((workspace / "wl" / "wl-fit.json").read_text())["results"]
    assert wl["L"]["value"] == pytest.approx(4.8, rel=1e-6)
    assert wl["L_phi"]["value"] == pytest.approx(73.6, rel=1e-6)
    assert wl["p"]["value"] == pytest.approx(1.9, rel=1e-6)
    assert wl["t"]["value"] == pytest.approx(0.98, rel=1e-3)

    code, text, _ = run(["hall", workspace / "rxy.csv", "--config", cfg,
                         "--out", workspace / "hall"], capsys)
    assert code == 0
    hall = json.loads((workspace / "hall" / "hall.json").read_text())["results"]
    assert hall["n"]["value"] == pytest.approx(1.31e14, rel=1e-9)
    assert hall["L_hall"]["unit"] == "nm"

    code, text, _ = run(["thickness", "--L-phi", "73.6+-0.4", "--L", "4.8+-0.1", "--n",
                         "1.31e14+-3e12", "--gamma", "0.0077483", "--out",
                         workspace / "th"], capsys)
    assert code == 0 and text.startswith("t = 0.98")

    before = [workspace / "wl" / "wl-fit.json", workspace / "hall" / "hall.json"]
    code, text, _ = run(["compare", "--before", *before, "--after", *before,
                         "--out", workspace / "cmp"], capsys)
    assert code == 0 and text.startswith("unchanged within 2 sigma")
    cmp = json.loads((workspace / "cmp" / "compare.json").read_text())["results"]
    assert all(e["z"]["value"] == 0.0 for e in cmp["entries"].values())
    assert cmp["thickness_difference"]["value"] == 0.0

    assert main(["quantify", str(simulated / "scan"), "--config", str(cfg),
                 "--out", str(workspace / "q2")]) == 0
    capsys.readouterr()
    q = workspace / "q2" / "quantify.json"
    code, text, _ = run(["report", "--quantify", q, "--hall", workspace / "hall" / "hall.json",
                         "--wl", workspace / "wl" / "wl-fit.json", "--compare",
                         workspace / "cmp" / "compare.json", "--config", cfg,
                         "--out", workspace / "rep"], capsys)
    assert code == 0
    head = text.splitlines()[0]
    for col in ("n_xrf", "n_hall", "activation", "t_mr", "t_sims"):
        assert col in head
    res = json.loads((workspace / "rep" / "report.json").read_text())["results"]
    assert res["t_sims"] == {"value": 1.0, "error": 0.1, "unit": "nm"}
    assert res["comparison"]["consistent"] is True


def test_compare_detects_change(workspace, capsys, tmp_path):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    a.write_text(json.dumps({"results": {"L_phi": {"value": 73.6, "error": 0.4, "unit": "nm"}}}))
    b.write_text(json.dumps({"results": {"L_phi": {"value": 80.0, "error": 0.4, "unit": "nm"}}}))
    code, text, _ = run(["compare", "--before", a, "--after", b, "--out", tmp_path], capsys)
    assert code == 0 and text.startswith("changed: L_phi")


@pytest.mark.parametrize("case,code", [
    ("parse", 2), ("fit", 3), ("config", 5), ("domain", 6), ("missing", 2),
])
def test_exit_codes(workspace, tmp_path, capsys, case, code):
    if case == "parse":
        bad = tmp_path / "bad.csv"
        bad.write_text("1.0,5\n2.0,-1\n")
        argv = ["fit-spectrum", bad]
    elif case == "fit":
        b = np.linspace(1.0, 5.0, 20)
        p = write_transport_file(tmp_path / "narrow.csv",
                                 MagnetoTrace("perpendicular", b, delta_sigma_perp(b, 4.8, 73.6)))
        argv = ["wl-fit", "--perp", p]
    elif case == "config":
        cfg = tmp_path / "c.toml"
        cfg.write_text("[scan]\npitch = 3\n")
        argv = ["simulate", "--config", cfg]
    elif case == "domain":
        argv = ["thickness", "--L-phi", "-1", "--L", "4.8", "--n", "1e14", "--gamma", "0.01"]
    else:
        argv = ["map", tmp_path / "nothing"]
    got, _, err = run(argv + ["--out", tmp_path / "o"], capsys)
    assert got == code
    rec = json.loads(err)
    assert rec["exit_code"] == code and rec["message"]
    if case == "parse":
        assert rec["line"] == 2


def test_console_script_module_entry(tmp_path):
    env = dict(os.environ, DELTA_METROLOGY_NUMBA="0")
    r = subprocess.run([sys.executable, "-m", "delta_metrology.io.cli", "thickness",
                        "--L-phi", "73.6", "--L", "4.8", "--n", "1.31e14", "--gamma",
                        "0.0077483", "--out", str(tmp_path)], capture_output=True, text=True,
                       env=env, timeout=300)
    assert r.returncode == 0, r.stderr
    rep = json.loads(Path(tmp_path / "thickness.json").read_text())
    assert rep["tool"]["backend"] == "numpy"
