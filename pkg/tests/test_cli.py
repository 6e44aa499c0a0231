from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from fisherstefan import cli
from fisherstefan.config import ConfigError, from_mapping, parse_text, sweep_from_mapping

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """
kappa = -0.5
lambda = 0
ic.alpha = 1.0
t_end = 0.05
mesh.n_nodes = 201
snapshots = 0.01, 0.02
"""


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    root = tmp_path / "out"
    monkeypatch.setenv(cli.OUT_ENV, str(root))
    return root


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def files_in(d: Path):
    return sorted(p.name for p in d.iterdir())


# ------------------------------------------------------------ config parsing

def test_parse_text_types_and_ranges():
    d = parse_text("kappa = -1  # comment\n\nsnapshots = 0:1:0.25\nmesh.n_nodes = 101\nic.kind = ramp\n")
    assert d == {"kappa": -1.0, "snapshots": [0.0, 0.25, 0.5, 0.75, 1.0], "mesh.n_nodes": 101,
                 "ic.kind": "ramp"}


@pytest.mark.parametrize("text,field", [("kappa = -1\nkappa = -2", "kappa"), ("bogus = 1", "bogus"),
                                        ("kappa = abc", "kappa"), ("kappa", "line 1"),
                                        ("mesh.n_nodes = 10.5", "mesh.n_nodes")])
def test_parse_text_errors_name_field(text, field):
    with pytest.raises(ConfigError, match=field):
        parse_text(text)


@pytest.mark.parametrize("d,field", [
    ({"kappa": -1, "lambda": -1, "t_end": 1}, "lambda"),
    ({"kappa": 0, "lambda": 1, "t_end": 1}, "kappa"),
    ({"kappa": -1, "t_end": 1}, "lambda"),
    ({"kappa": -1, "lambda": 1, "s0": 10, "t_end": 1}, "s0"),
    ({"kappa": -1, "lambda": 1}, "t_end"),
    ({"kappa": -1, "lambda": 1, "t_end": 1, "ic.alpha": 1.5}, "ic.alpha"),
    ({"kappa": -1, "lambda": 1, "t_end": 1, "ic.kind": "gauss"}, "ic.kind"),
    ({"kappa": -1, "lambda": 1, "t_end": 1, "stepper.dt": 0}, "stepper.dt"),
    ({"kappa": -1, "lambda": 1, "t_end": 1, "mesh.n_nodes": 2}, "mesh"),
])
def test_from_mapping_errors_name_field(d, field):
    with pytest.raises(ConfigError, match=field):
        from_mapping(d)


def test_s0_sets_lambda_and_units():
    spec = from_mapping({"kappa": -1.01, "s0": 1000, "t_end": 6.4, "stepper.dt": 1e-4})
    cfg, p = spec.problem()
    assert cfg.lam == 1e6 and cfg.t_end == pytest.approx(6.4e-6) and p.dt == pytest.approx(1e-10)
    assert cfg.blowup_speed_threshold == pytest.approx(1e7)


def test_sweep_config_validation():
    base = {"kappa": -1, "lambda": 0, "t_end": 1}
    with pytest.raises(ConfigError, match="empty"):
        sweep_from_mapping({**base, "sweep.parameter": "kappa", "sweep.values": []})
    with pytest.raises(ConfigError, match="sweep.parameter"):
        sweep_from_mapping({**base, "sweep.parameter": "mesh.dy_min", "sweep.values": [1]})
    with pytest.raises(ConfigError, match="ic.alpha"):
        sweep_from_mapping({**base, "sweep.parameter": "ic.alpha", "sweep.values": [0.5, 2.0]})
    _, param, values = sweep_from_mapping({**base, "sweep.parameter": "kappa", "sweep.values": [-0.5, -0.9]})
    assert param == "kappa" and values == [-0.9, -0.5]


# ------------------------------------------------------------ simulate

def test_simulate_writes_complete_manifest(tmp_path, out_root, capsys):
    cfg = write(tmp_path, "small.cfg", SMALL)
    assert cli.main(["simulate", str(cfg)]) == 0
    d = out_root / "small"
    manifest = json.loads((d / "manifest.json").read_text())
    assert sorted(manifest["files"]) == files_in(d)
    assert manifest["version"] and manifest["wall_seconds"] >= 0
    lines = (d / "trace.csv").read_text().splitlines()
    assert lines[0] == "t,s,dsdt,M"
    # full double precision round-trips
    t, s, v, m = (float(x) for x in lines[-1].split(","))
    summary = json.loads((d / "summary.json").read_text())
    assert s == summary["final"]["s"]
    assert (d / "profile_000.csv").read_text().startswith("y,x,u\n")
    assert summary["termination"]["kind"] == "ReachedTEnd"
    assert {"config", "termination", "final", "newton", "classification"} <= set(summary)


def test_simulate_is_deterministic_and_round_trips(tmp_path, out_root):
    cfg = write(tmp_path, "small.cfg", SMALL)
    assert cli.main(["simulate", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["simulate", str(cfg), "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "trace.csv").read_bytes()
    assert a == (tmp_path / "b" / "trace.csv").read_bytes()
    # feed the summary back in as the config
    echo = tmp_path / "a" / "summary.json"
    assert cli.main(["simulate", str(echo), "--out", str(tmp_path / "c")]) == 0
    assert a == (tmp_path / "c" / "trace.csv").read_bytes()


def test_simulate_bad_config_exit_1(tmp_path, out_root, capsys):
    cfg = write(tmp_path, "bad.cfg", "kappa = -1\nlambda = -3\nt_end = 1\n")
    assert cli.main(["simulate", str(cfg)]) == 1
    assert "lambda" in capsys.readouterr().err
    assert not out_root.exists()


def test_simulate_missing_file_exit_1(tmp_path, out_root):
    assert cli.main(["simulate", str(tmp_path / "nope.cfg")]) == 1


def test_unwritable_output_exit_1(tmp_path, out_root, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = write(tmp_path, "small.cfg", SMALL)
    assert cli.main(["simulate", str(cfg), "--out", str(blocker / "sub")]) == 1
    assert "not writable" in capsys.readouterr().err
    assert blocker.read_text() == "x"


def test_failed_write_leaves_no_partial_files(tmp_path, out_root, monkeypatch):
    cfg = write(tmp_path, "small.cfg", SMALL)
    calls = {"n": 0}
    real = Path.write_text

    def flaky(self, *a, **k):
        calls["n"] += 1
        if calls["n"] == 4:
            raise OSError(28, "No space left on device")
        return real(self, *a, **k)

    monkeypatch.setattr(Path, "write_text", flaky)
    target = tmp_path / "run"
    assert cli.main(["simulate", str(cfg), "--out", str(target)]) == 1
    assert not target.exists()


def test_solver_failure_exit_2(tmp_path, out_root, capsys):
    cfg = write(tmp_path, "hot.cfg", "kappa = -1.25\nlambda = 0\nic.alpha = 1\nt_end = 1\nmesh.n_nodes = 201\n")
    assert cli.main(["simulate", str(cfg)]) == 2
    summary = json.loads((out_root / "hot" / "summary.json").read_text())
    assert summary["termination"]["kind"] == "NewtonFailed"
    assert summary["classification"]["verdict"] == "FiniteTimeBlowup"


def test_travelling_wave_config(out_root, capsys):
    assert cli.main(["simulate", str(CONFIGS / "travelling_wave.cfg")]) == 0
    d = out_root / "travelling_wave"
    profiles = [n for n in files_in(d) if n.startswith("profile_")]
    assert len(profiles) == 14
    summary = json.loads((d / "summary.json").read_text())
    assert summary["classification"]["verdict"] == "TravellingWave"
    assert summary["classification"]["estimates"]["speed"] == pytest.approx(-4.868, rel=0.01)
    times = [p["t"] for p in summary["profiles"] if p["file"].startswith("profile_")]
    np.testing.assert_allclose(times, np.arange(14), atol=1e-9)


def test_blowup_config(out_root, capsys):
    assert cli.main(["simulate", str(CONFIGS / "blowup.cfg")]) == 0
    summary = json.loads((out_root / "blowup" / "summary.json").read_text())
    assert summary["classification"]["verdict"] == "FiniteTimeBlowup"
    assert summary["units"] == "unscaled"


# ------------------------------------------------------------ sweep

def test_extinction_sweep(out_root, capsys):
    assert cli.main(["sweep", str(CONFIGS / "extinction_sweep.cfg"), "--jobs", "2"]) == 0
    rows = list(csv.DictReader((out_root / "extinction_sweep" / "aggregate.csv").open()))
    assert [float(r["ic.alpha"]) for r in rows] == [0.25, 0.5, 0.75, 1.0]
    s_e = [float(r["s_e"]) for r in rows]
    np.testing.assert_allclose(s_e, [0.8125, 0.625, 0.4375, 0.25], atol=1e-2)
    assert all(r["verdict"] == "Extinction" for r in rows)


def test_single_element_sweep_matches_simulate(tmp_path, out_root):
    sim = write(tmp_path, "one.cfg", SMALL)
    swp = write(tmp_path, "one_sweep.cfg", SMALL.replace("kappa = -0.5", "")
                + "sweep.parameter = kappa\nsweep.values = -0.5\n")
    assert cli.main(["simulate", str(sim)]) == 0
    assert cli.main(["sweep", str(swp)]) == 0
    sub = out_root / "one_sweep" / "kappa_-0.5"
    for name in ("trace.csv", "profile_000.csv", "profile_001.csv", "summary.json"):
        assert (sub / name).read_bytes() == (out_root / "one" / name).read_bytes()


def test_sweep_parallel_matches_serial(tmp_path, out_root):
    text = SMALL.replace("kappa = -0.5", "") + "sweep.parameter = kappa\nsweep.values = -0.3, -0.7, -0.5\n"
    cfg = write(tmp_path, "fam.cfg", text)
    assert cli.main(["sweep", str(cfg), "--out", str(tmp_path / "serial")]) == 0
    assert cli.main(["sweep", str(cfg), "--jobs", "3", "--out", str(tmp_path / "par")]) == 0
    a = (tmp_path / "serial" / "aggregate.csv").read_text()
    assert a == (tmp_path / "par" / "aggregate.csv").read_text()
    assert [l.split(",")[0] for l in a.splitlines()[1:]] == ["-0.69999999999999996", "-0.5", "-0.29999999999999999"]


def test_sweep_empty_list_exit_1(tmp_path, out_root):
    cfg = write(tmp_path, "e.cfg", SMALL + "sweep.parameter = kappa\nsweep.values =\n")
    assert cli.main(["sweep", str(cfg)]) == 1


# ------------------------------------------------------------ phaseplane

def test_phaseplane_table(tmp_path, capsys):
    out = tmp_path / "pp.csv"
    assert cli.main(["phaseplane", "--c", "-0.1", "-1", "-2", "-5", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    v = [float(r["v_star"]) for r in rows]
    k = [float(r["kappa"]) for r in rows]
    np.testing.assert_allclose(v, [-0.643, -1.32, -2.21, -5.10], rtol=0.01)
    np.testing.assert_allclose(k, [-0.156, -0.753, -0.904, -0.981], atol=0.005)
    assert float(rows[3]["kappa_asymptotic"]) == pytest.approx(-0.98)


def test_phaseplane_dense_grid_in_range(tmp_path, capsys):
    out = tmp_path / "pp.csv"
    grid = ",".join(f"{c:g}" for c in -np.geomspace(0.1, 20, 12))
    assert cli.main(["phaseplane", f"--c={grid}", "--out", str(out), "--trajectories"]) == 0
    k = np.array([float(r["kappa"]) for r in csv.DictReader(out.open())])
    assert k.size == 12 and np.all((k > -1) & (k < 0))
    assert len(list(tmp_path.glob("trajectory_c*.csv"))) == 12


@pytest.mark.parametrize("argv", [["phaseplane"], ["phaseplane", "--c", "1"], ["phaseplane", "--c", "x"],
                                  ["phaseplane", "--c", "-1", "--dz", "0.1"]])
def test_phaseplane_bad_grid_exit_1(argv, out_root):
    assert cli.main(argv) == 1


# ------------------------------------------------------------ check

def test_check_subset_report(tmp_path, capsys):
    rep = tmp_path / "r.json"
    assert cli.main(["check", "--only", "2,3", "--json", str(rep)]) == 0
    data = json.loads(rep.read_text())
    assert data["passed"] and [c["id"] for c in data["criteria"]] == [2, 3]
    assert "[PASS]" in capsys.readouterr().out


def test_check_mutation_is_caught(capsys):
    assert cli.main(["check", "--only", "5", "--mutate"]) == 1
    assert "[FAIL]  5" in capsys.readouterr().out


def test_check_unknown_criterion():
    assert cli.main(["check", "--only", "99"]) == 1
