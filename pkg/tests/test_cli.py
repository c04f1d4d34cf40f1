import csv
import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from symplab.cli import (ExperimentConfig, config_hash, dump_config, emit_plot_data, main,
                         parse_config)
from symplab.errors import EmptyCensusError

CAP = """
[surface]
kind = "disk"
area = 1.0
[cap]
target_area = 2.0
delta = 0.1
"""

TWIST = """
seed = 0
[surface]
kind = "disk"
[map]
name = "radial-twist"
params = { coeffs = [3.141592653589793, -3.141592653589793] }
[orbits]
d_max = 2
seeds = 6
[action]
n_mc = 500
"""

SHEAR = """
[surface]
kind = "annulus"
[map]
name = "shear"
params = { c = 0.3 }
[flux]
cycles = ["radial", "core"]
"""


def _cfg(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _stderr_json(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


def test_cap_check(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["cap-check", "-c", _cfg(tmp_path, CAP), "-o", str(out)]) == 0
    rep = json.loads((out / "cap_check.json").read_text())
    assert rep["r0"] == pytest.approx(math.sqrt(1 / math.pi), abs=1e-15)
    assert rep["r1"] == pytest.approx(math.sqrt(1.1 / math.pi), abs=1e-15)
    assert rep["pullback_defect"] < 1e-10
    assert rep["schema_version"] == 1
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok" and man["artifacts"] == ["cap_check.json"]
    assert "r0 = 0.56418958354775" in capsys.readouterr().out


def test_calabi_of_twist(tmp_path):
    out = tmp_path / "out"
    assert main(["calabi", "-c", _cfg(tmp_path, TWIST), "-o", str(out)]) == 0
    rep = json.loads((out / "calabi.json").read_text())
    assert rep["calabi"]["value"] == pytest.approx(1 / 6, abs=1e-9)
    with open(out / "level_set.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and set(rows[0]) == {"chart", "u", "v", "f"}


def test_flux_of_shear(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["flux", "-c", _cfg(tmp_path, SHEAR), "-o", str(out)]) == 0
    rep = json.loads((out / "flux.json").read_text())
    assert rep["fluxes"][0] == pytest.approx(0.3, abs=1e-9)
    assert abs(rep["fluxes"][1]) < 1e-12
    assert rep["cycle_verdicts"][0] == "rational 3/10"
    assert "rational 3/10" in capsys.readouterr().out


def test_non_exact_form_exits_2(tmp_path, capsys):
    text = '[surface]\nkind = "annulus"\n[map]\nname = "swap"\n[action]\ngamma = 0\n'
    assert main(["calabi", "-c", _cfg(tmp_path, text), "-o", str(tmp_path / "o")]) == 2
    diag = _stderr_json(capsys)
    assert diag["error"] == "NonExactFormError" and diag["exit_code"] == 2
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["status"] == "error: NonExactFormError"


def test_integrator_failure_exits_3(tmp_path, capsys):
    text = """
[surface]
kind = "disk"
[map]
name = "hamiltonian"
params = { expression = "-20*r2^2" }
[integrator]
steps = 8
max_steps = 16
tol = 1e-14
"""
    assert main(["calabi", "-c", _cfg(tmp_path, text), "-o", str(tmp_path / "o")]) == 3
    assert _stderr_json(capsys)["exit_code"] == 3


@pytest.mark.parametrize("text", [
    '[surface]\nkind = "disk"\ncolour = "red"\n',
    'schema_version = 2\n',
    '[surface]\nkind = "torus"\n',
    '[surface\n',
    '[map]\nname = "rotation"\nparams = { speed = 1.0 }\n[cap]\ntarget_area = 2.0\n',
])
def test_bad_configs_exit_2(tmp_path, capsys, text):
    assert main(["extend", "-c", _cfg(tmp_path, text), "-o", str(tmp_path / "o")]) == 2
    assert _stderr_json(capsys)["exit_code"] == 2


def test_missing_gamma_on_annulus(tmp_path, capsys):
    text = '[surface]\nkind = "annulus"\n[map]\nname = "shear"\n'
    assert main(["calabi", "-c", _cfg(tmp_path, text), "-o", str(tmp_path / "o")]) == 2
    assert "gamma" in _stderr_json(capsys)["message"]


def test_empty_census_exits_2(tmp_path, capsys):
    text = """
[surface]
kind = "annulus"
[map]
name = "rotation"
params = { rho = 0.38196601125010515 }
[action]
gamma = 0
n_mc = 200
[orbits]
d_max = 2
seeds = 4
"""
    assert main(["census", "-c", _cfg(tmp_path, text), "-o", str(tmp_path / "o")]) == 2
    assert _stderr_json(capsys)["error"] == "EmptyCensusError"
    with pytest.raises(EmptyCensusError):
        emit_plot_data([], tmp_path / "x.csv")


def test_output_dir_precedence(tmp_path, monkeypatch):
    cfg = _cfg(tmp_path, CAP + f'\n[output]\ndir = "{tmp_path / "from_config"}"\n')
    assert main(["cap-check", "-c", cfg]) == 0
    assert (tmp_path / "from_config" / "cap_check.json").exists()
    monkeypatch.setenv("SYMPLAB_OUTPUT_DIR", str(tmp_path / "from_env"))
    assert main(["cap-check", "-c", cfg]) == 0
    assert (tmp_path / "from_env" / "cap_check.json").exists()
    assert main(["cap-check", "-c", cfg, "-o", str(tmp_path / "from_flag")]) == 0
    assert (tmp_path / "from_flag" / "cap_check.json").exists()


def test_mean_actions_order_and_census(tmp_path):
    out = tmp_path / "out"
    assert main(["census", "-c", _cfg(tmp_path, TWIST), "-o", str(out)]) == 0
    with open(out / "mean_actions.csv") as fh:
        rows = list(csv.DictReader(fh))
    keys = [(int(r["period"]), int(r["orbit_id"])) for r in rows]
    assert keys == sorted(keys)
    rep = json.loads((out / "census.json").read_text())
    assert rep["inequality"]["verdict"] == "HOLDS-on-census"
    assert rep["fractions"]["minus"] == pytest.approx(1.0)


def test_equidist_rows(tmp_path):
    text = """
[surface]
kind = "disk"
[map]
name = "rotation"
params = { angle = 2.0943951023931953 }
[orbits]
d_max = 3
seeds = 4
"""
    out = tmp_path / "out"
    assert main(["equidist", "-c", _cfg(tmp_path, text), "-o", str(out)]) == 0
    with open(out / "defects.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 15
    assert [r["function"] for r in rows[:5]] == ["one", "radial-1", "angular-cos-1",
                                                  "angular-sin-1", "radial-2"]
    assert float(rows[0]["defect"]) == 0.0


def test_reports_are_byte_deterministic(tmp_path):
    cfg = _cfg(tmp_path, TWIST)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["inequality", "-c", cfg, "-o", str(a)]) == 0
    assert main(["inequality", "-c", cfg, "-o", str(b)]) == 0
    names = sorted(p.name for p in a.iterdir() if p.name != "manifest.json")
    assert names == ["inequality.json", "mean_actions.csv"]
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_dump_config_round_trip(tmp_path, capsys):
    assert main(["dump-config", "-c", _cfg(tmp_path, TWIST)]) == 0
    text = capsys.readouterr().out
    assert parse_config(text) == parse_config(TWIST)


@settings(max_examples=25)
@given(seed=st.integers(0, 2**31), d_max=st.integers(1, 9), area=st.floats(0.1, 10.0),
       size=st.sampled_from([5, 10, 20]), eps=st.floats(0.01, 2.0),
       gamma=st.one_of(st.none(), st.integers(0, 1)),
       coeffs=st.lists(st.floats(-5, 5), min_size=1, max_size=3))
def test_config_round_trip_property(seed, d_max, area, size, eps, gamma, coeffs):
    cfg = ExperimentConfig.model_validate({
        "seed": seed, "surface": {"kind": "disk", "area": area},
        "map": {"name": "radial-twist", "params": {"coeffs": coeffs}},
        "orbits": {"d_max": d_max}, "dictionary": {"size": size},
        "action": {"eps": eps, "gamma": gamma},
    })
    back = parse_config(dump_config(cfg))
    assert back == cfg
    assert config_hash(back) == config_hash(cfg)
