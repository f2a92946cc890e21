import json
import math
from pathlib import Path

import pytest

from polyfr import cli
from polyfr import mesh as pm

CASES = Path(__file__).resolve().parent.parent / "cases"


def _write_case(tmp_path, **overrides):
    pm.save_mesh(pm.structured_triangles(2), tmp_path / "m.json")
    cfg = {
        "case": "test",
        "mesh": "m.json",
        "law": "advection",
        "law_params": {"velocity": [1.0, 0.0]},
        "degree": 1,
        "variant": "fr",
        "flux": "rusanov",
        "solver": {"cfl": 0.8, "max_iters": 4000, "residual_tol": 1e-11},
        "boundary": {"boundary": {"profile": "linear", "a0": 0.0, "ax": 0.0, "ay": 1.0}},
        "exact": {"profile": "linear", "a0": 0.0, "ax": 0.0, "ay": 1.0},
    }
    cfg.update(overrides)
    path = tmp_path / "case.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


def test_run_linear_exact_case(tmp_path):
    path = _write_case(tmp_path)
    report = cli.run(path, tmp_path / "out", seed=0)
    level = report["levels"][0]
    assert level["converged"]
    assert level["l2_error"] <= 1e-8
    assert report["orders"] == []  # single level: order column empty
    assert (tmp_path / "out" / "report.json").exists()
    assert (tmp_path / "out" / "levels.csv").exists()
    assert (tmp_path / "out" / "diagnostics.csv").exists()
    for key in ("eq5", "eq6", "eq21", "eq27", "eq32", "eq44"):
        assert report["defects"][key] <= cli.DEFECT_TOLS[key]


def test_run_refinement_study_orders(tmp_path):
    sine = {"profile": "sine", "amplitude": 1.0, "kx": -math.pi, "ky": 2 * math.pi}
    path = _write_case(
        tmp_path,
        law_params={"velocity": [1.0, 0.5]},
        boundary={"boundary": sine},
        exact=sine,
        solver={"cfl": 0.6, "max_iters": 20000, "residual_tol": 1e-9},
        study={"levels": 3},
    )
    report = cli.run(path, tmp_path / "out", seed=0)
    assert len(report["levels"]) == 3
    assert len(report["orders"]) == 2
    # orders sharpen toward second order under refinement; the mesh here is
    # very coarse (8 -> 128 elements), so only the finer pair is judged
    assert 1.7 <= report["orders"][-1] <= 2.3


def test_invalid_mesh_path_exits_nonzero(tmp_path):
    cfg = {"case": "x", "mesh": "missing.json", "law": "advection", "degree": 1}
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    rc = cli.main(["run", str(path)])
    assert rc == 4


def test_malformed_config_reports_error(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{", encoding="utf-8")
    rc = cli.main(["run", str(path)])
    assert rc == 4
    path.write_text(json.dumps({"law": "advection"}), encoding="utf-8")
    rc = cli.main(["run", str(path)])
    assert rc == 4


def test_unknown_profile_rejected():
    with pytest.raises(cli.ConfigError):
        cli._profile({"profile": "sawtooth"})


def test_invariant_violation_exit_code(tmp_path, monkeypatch):
    path = _write_case(tmp_path)

    def broken(*args, **kwargs):
        return {k: (0.5 if k not in ("ck_bdk_min",) else None) for k in cli.DEFECT_KEYS}

    monkeypatch.setattr(cli, "defect_battery", broken)
    rc = cli.main(["run", str(path), "--output-dir", str(tmp_path / "o")])
    assert rc == 3


def test_violation_message_names_the_check(tmp_path, capsys, monkeypatch):
    path = _write_case(tmp_path)

    def broken(*args, **kwargs):
        vals = {k: 0.0 for k in cli.DEFECT_KEYS}
        vals["eq5"] = 3.2e-6
        vals["ck_bdk_min"] = None
        return vals

    monkeypatch.setattr(cli, "defect_battery", broken)
    rc = cli.main(["run", str(path), "--output-dir", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert rc == 3
    assert "Eq. (5)" in err
    assert "3.2" in err


@pytest.mark.parametrize("suite", cli.SUITES)
def test_verify_suites_pass_on_default_case(tmp_path, suite):
    path = _write_case(tmp_path, law="burgers", law_params={})
    report = cli.verify(path, suite, seed=0, n_draws=10)
    assert report["passed"], report["checks"]


def test_verify_unknown_suite_rejected(tmp_path):
    path = _write_case(tmp_path)
    with pytest.raises(cli.ConfigError):
        cli.verify(path, "everything")


def test_reports_are_bit_identical_between_runs(tmp_path):
    path = _write_case(tmp_path)
    r1 = cli.run(path, tmp_path / "a", seed=7)
    r2 = cli.run(path, tmp_path / "b", seed=7)
    a = json.loads((tmp_path / "a" / "report.json").read_text())
    b = json.loads((tmp_path / "b" / "report.json").read_text())
    a.pop("timing")
    b.pop("timing")
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_shipped_cases_parse():
    for name in (
        "advection_linear_k1.json",
        "advection_sine_k1.json",
        "burgers_verify.json",
        "burgers_hexagon.json",
    ):
        cfg = cli.load_config(CASES / name)
        assert cli._mesh_path(cfg, CASES / name).exists()


def test_cli_entrypoint_verify(tmp_path, capsys):
    path = _write_case(tmp_path, law="burgers", law_params={})
    rc = cli.main(["verify", str(path), "--suite", "tadmor", "--output-dir",
                   str(tmp_path / "v"), "--draws", "5"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "PASS" in out
    assert (tmp_path / "v" / "verify_tadmor.json").exists()
