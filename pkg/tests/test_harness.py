import csv
import json
import math

import numpy as np
import pytest

from blochpacket.errors import ConfigError
from blochpacket.harness.cli import _eps_list, main
from blochpacket.harness.config import apply_overrides, load_config, resolve
from blochpacket.harness.outputs import emit_outputs
from blochpacket.harness.validation import bz_grid, fit_slope, run_simulation, run_validation
from blochpacket.lattice import cubic_lattice

SMALL_RUN = {"epsilons": [1 / 4, 1 / 8, 1 / 16], "horizon": 0.25, "checkpoints": [0.125, 0.25],
             "n_points": [1024], "dt_field": 0.02, "workers": 1}


def small(**run):
    return resolve({"scenario": "mathieu-1d", "run": {**SMALL_RUN, **run}})


@pytest.fixture(scope="module")
def sweep():
    return run_validation(small())


# ---------------------------------------------------------------------------
# configuration


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown key 'colour'"):
        resolve({"scenario": "free", "colour": 1})
    with pytest.raises(ConfigError, match="run.speed"):
        resolve({"scenario": "free", "run": {"speed": 1.0}})
    with pytest.raises(ConfigError, match="must be a number"):
        resolve({"scenario": "free", "run": {"horizon": "long"}})
    with pytest.raises(ConfigError, match="unknown scenario"):
        resolve({"scenario": "nowhere"})


def test_ehrenfest_guard_and_ranges():
    with pytest.raises(ConfigError, match="Ehrenfest"):
        resolve({"scenario": "free", "run": {"horizon": 3.0, "epsilons": [1 / 16]}})
    resolve({"scenario": "free", "run": {"horizon": 2.7, "epsilons": [1 / 16]}})
    with pytest.raises(ConfigError, match="epsilon"):
        resolve({"scenario": "free", "run": {"epsilons": [0.5]}})
    with pytest.raises(ConfigError, match="checkpoints"):
        resolve({"scenario": "free", "run": {"checkpoints": [2.0]}})
    with pytest.raises(ConfigError, match="lattice.dim"):
        resolve({})
    with pytest.raises(ConfigError, match="system"):
        resolve({"scenario": "free", "run": {"system": "lagrangian"}})


def test_toml_loading(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('scenario = "mathieu-1d"\n[run]\nhorizon = 0.5\ncheckpoints = [0.5]\n[band]\nindex = 2\n')
    cfg = load_config(p)
    assert cfg["run"]["horizon"] == 0.5 and cfg["band"]["index"] == 2
    assert cfg["potential"]["cutoff"] == 10.0
    p.write_text("[run\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_overrides_and_eps_parsing():
    assert _eps_list("1/16, 1/32,0.015625") == [1 / 16, 1 / 32, 1 / 64]
    cfg = apply_overrides(resolve({"scenario": "free"}), out="x", workers=3, dt=5e-4, eps=[1 / 8])
    assert cfg["output"]["directory"] == "x" and cfg["run"]["workers"] == 3
    assert cfg["run"]["dt_particle"] == cfg["run"]["dt_envelope"] == 5e-4
    assert cfg["run"]["epsilons"] == [1 / 8]
    with pytest.raises(ConfigError):
        apply_overrides(resolve({"scenario": "free"}), eps=[0.3])


def test_bz_grid_is_cell_centred():
    pts = bz_grid(cubic_lattice(2), 4)
    assert pts.shape == (16, 2)
    np.testing.assert_allclose(np.sort(np.unique(pts[:, 0])), [-0.375, -0.125, 0.125, 0.375])


# ---------------------------------------------------------------------------
# sweeps and persistence


def test_fit_slope_recovers_power_law():
    e = np.array([1 / 16, 1 / 32, 1 / 64])
    fit = fit_slope(e, 3 * e**0.75)
    assert fit.slope == pytest.approx(0.75, abs=1e-12)
    assert fit.ci_low <= fit.slope <= fit.ci_high
    assert fit_slope(e[:2], e[:2]) is None
    assert fit_slope(e, [1.0, 0.0, 1.0]) is None


def test_empty_sweep_manifest(tmp_path):
    res = run_validation(small(epsilons=[]))
    path = emit_outputs(res, tmp_path)
    man = json.loads(open(path).read())
    assert man["files"] == []
    assert man["config"]["name"] == "mathieu-1d"
    assert man["config"]["run"]["epsilons"] == []


def test_single_epsilon_has_no_slope_plot(tmp_path):
    res = run_validation(small(epsilons=[1 / 8]))
    emit_outputs(res, tmp_path)
    assert not res.slopes
    assert (tmp_path / "error_vs_epsilon.csv").exists()
    assert not (tmp_path / "error_vs_epsilon.svg").exists()
    assert res.checks["corrected_slope"]["skipped"]


def test_slope_refit_from_csv(sweep, tmp_path):
    emit_outputs(sweep, tmp_path)
    with open(tmp_path / "error_vs_epsilon.csv") as fh:
        rows = list(csv.DictReader(fh))
    e = [float(r["epsilon"]) for r in rows]
    for key in ("corrector", "corrector_leading"):
        refit = fit_slope(e, [float(r[key]) for r in rows])
        assert abs(refit.slope - sweep.slopes[key].slope) <= 1e-12
    man = json.loads((tmp_path / "manifest.json").read_text())
    names = {f["path"] for f in man["files"]}
    assert {"error_vs_epsilon.svg", "trajectory_eps16.csv", "checkpoints.csv", "slopes.csv"} <= names


def test_outputs_are_deterministic(sweep, tmp_path):
    emit_outputs(sweep, tmp_path / "a")
    emit_outputs(run_validation(small()), tmp_path / "b")
    for name in ("error_vs_epsilon.csv", "observables.csv", "trajectory_eps8.csv", "envelope_eps4.csv",
                 "error_vs_epsilon.svg", "manifest.json"):
        a, b = (tmp_path / "a" / name).read_bytes(), (tmp_path / "b" / name).read_bytes()
        if name == "manifest.json":
            strip = lambda m: {k: v for k, v in json.loads(m).items() if k != "runtimes"}  # noqa: E731
            assert strip(a) == strip(b)
        else:
            assert a == b, name


def test_simulation_grid_mode():
    res = run_simulation(small(mode="grid", epsilons=[1 / 8]))
    assert not res.errors
    rec = res.records[0]
    assert rec["hamiltonian_drift"] < 1e-6 and math.isfinite(rec["Q_corrected"][0])


# ---------------------------------------------------------------------------
# command line


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["validate", "no-such-thing", "--out", str(tmp_path / "x")]) == 2
    cfg = tmp_path / "c.toml"
    cfg.write_text('scenario = "mathieu-1d"\n[run]\nhorizon = 0.25\ncheckpoints = [0.25]\n'
                   'n_points = [1024]\ndt_field = 0.02\n[checks]\ncorrector_max = 1e-30\n')
    assert main(["validate", str(cfg), "--eps", "1/8", "--out", str(tmp_path / "v")]) == 1
    out = capsys.readouterr().out
    assert "[FAIL] corrector_max" in out
    assert main(["simulate", str(cfg), "--eps", "1/8", "--out", str(tmp_path / "s")]) == 0
    assert main(["bands", "mathieu-1d", "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / "bands.csv").exists()
    cfg.write_text('scenario = "mathieu-1d"\n[run]\nhorizon = 9.0\n')
    assert main(["simulate", str(cfg)]) == 2
