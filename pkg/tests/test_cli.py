import json
from pathlib import Path

import pytest

from kuhnfem.cli import main

CONFIGS = Path(__file__).parent.parent / "configs"


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def _read_outputs(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir())}


def test_schema_error_exit_code_and_pointer(tmp_path, capsys):
    cfg = _write(tmp_path, {"version": "1", "seed": 1, "grid": {"r": -1.0}})
    code = main(["verify-basis", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 2
    err = capsys.readouterr().err
    assert "config error /grid/r" in err


def test_missing_config_file(tmp_path):
    assert main(["assemble", "--config", str(tmp_path / "none.json")]) == 2


def test_missing_measure_is_config_error(tmp_path, capsys):
    cfg = _write(tmp_path, {"version": "1", "seed": 1, "grid": {"r": 0.5}})
    assert main(["assemble", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "/measure" in capsys.readouterr().err


def test_verify_basis_deterministic_across_threads(tmp_path):
    doc = {"version": "1", "seed": 3, "grid": {"d": [1, 2], "r": [1.0, 0.5], "samples": 2000,
                                               "volume_samples": 20000, "half_width": 1.0}}
    cfg = _write(tmp_path, doc)
    assert main(["verify-basis", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["verify-basis", "--config", str(cfg), "--out", str(tmp_path / "b"), "--threads", "3"]) == 0
    a, b = _read_outputs(tmp_path / "a"), _read_outputs(tmp_path / "b")
    assert a == b
    text = a["verify_basis.csv"].decode()
    assert text.startswith("# config_sha256=")
    assert "r [length]" in text.splitlines()[1]
    summary = json.loads(a["verify_basis.json"])
    assert summary["passed"] is True
    assert "runtime_ms" not in summary


def test_timings_flag_adds_runtime(tmp_path):
    doc = {"version": "1", "seed": 3, "grid": {"d": 1, "r": 1.0, "samples": 100, "volume_samples": 100}}
    cfg = _write(tmp_path, doc)
    assert main(["verify-basis", "--config", str(cfg), "--out", str(tmp_path / "a"), "--timings"]) == 0
    assert "runtime_ms" in json.loads((tmp_path / "a" / "verify_basis.json").read_text())


def test_env_output_dir_and_precedence(tmp_path, monkeypatch):
    doc = {"version": "1", "seed": 3, "grid": {"d": 1, "r": 1.0, "samples": 100, "volume_samples": 100},
           "output": {"dir": str(tmp_path / "from_config")}}
    cfg = _write(tmp_path, doc)
    monkeypatch.setenv("KUHNFEM_OUTPUT_DIR", str(tmp_path / "from_env"))
    assert main(["verify-basis", "--config", str(cfg)]) == 0
    assert (tmp_path / "from_env" / "verify_basis.csv").exists()
    assert main(["verify-basis", "--config", str(cfg), "--out", str(tmp_path / "from_flag")]) == 0
    assert (tmp_path / "from_flag" / "verify_basis.csv").exists()
    monkeypatch.delenv("KUHNFEM_OUTPUT_DIR")
    assert main(["verify-basis", "--config", str(cfg)]) == 0
    assert (tmp_path / "from_config" / "verify_basis.csv").exists()


def test_seed_override_recorded(tmp_path):
    doc = {"version": "1", "seed": 3, "grid": {"d": 1, "r": 1.0, "samples": 100, "volume_samples": 100}}
    cfg = _write(tmp_path, doc)
    assert main(["verify-basis", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "11"]) == 0
    assert json.loads((tmp_path / "a" / "verify_basis.json").read_text())["seed"] == 11


def test_assemble_resolvent_semigroup(tmp_path):
    doc = {"version": "1", "seed": 4, "grid": {"r": 0.125},
           "measure": {"kind": "gaussian", "mean": [0.0], "var": [1.0]},
           "diagnostics": {"alpha": [1.0, 2.0], "t": [0.5], "markov_trials": 50, "steps": 16}}
    cfg = _write(tmp_path, doc)
    out = tmp_path / "o"
    for cmd in ("assemble", "resolvent", "semigroup"):
        assert main([cmd, "--config", str(cfg), "--out", str(out)]) == 0, cmd
    for name in ("stiffness.mtx", "mass.mtx", "nodes.csv", "resolvent.csv", "semigroup.csv"):
        assert (out / name).exists()
    res = json.loads((out / "resolvent.json").read_text())
    assert res["resolvent_identity_rel"][0] <= 1e-8


def test_delta_sweep_and_envelopes(tmp_path):
    doc = {"version": "1", "seed": 4, "measure": {"kind": "gaussian", "mean": [0.0], "var": [1.0]},
           "diagnostics": {"m_schedule": [2, 4, 8]},
           "bv": {"f": {"kind": "staircase", "breaks": [-1.0, 0.5], "jumps": [1.0, -2.0]}, "points": 2000}}
    cfg = _write(tmp_path, doc)
    out = tmp_path / "o"
    assert main(["delta-sweep", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["envelopes", "--config", str(cfg), "--out", str(out)]) == 0
    sweep = json.loads((out / "delta_sweep.json").read_text())
    assert sweep["flags"] == {"C_bounded": True, "delta_decreasing": True}


def test_mosco_truncated_exits_nonzero(tmp_path):
    doc = json.loads((CONFIGS / "mosco_truncated.json").read_text())
    doc["mosco"]["grid"]["points_per_sigma"] = [4]
    doc["mosco"]["mc"] = {"samples": 2000, "oracle_samples": 4000}
    doc["mosco"]["m_schedule"] = [2, 4]
    doc["mosco"]["envelope_m"] = [2, 4]
    cfg = _write(tmp_path, doc)
    out = tmp_path / "o"
    assert main(["mosco", "--config", str(cfg), "--out", str(out)]) == 1
    rep = json.loads((out / "report.json").read_text())
    assert rep["flags"]["sufficient_tail"] is False
    assert (out / "report.csv").read_text().startswith("# config_sha256=")


def test_bad_threads(tmp_path):
    cfg = _write(tmp_path, {"version": "1", "seed": 1})
    assert main(["verify-basis", "--config", str(cfg), "--threads", "0"]) == 2


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
