import json

import pytest
import yaml

from kfpspec.cli import ConfigError, RunConfig, load_config, main


def _write(tmp_path, data):
    p = tmp_path / "run.yaml"
    p.write_text(yaml.safe_dump(data))
    return str(p)


def test_defaults_validate():
    cfg = load_config(None)
    assert isinstance(cfg, RunConfig) and cfg.weights.s == 0.6


def test_unknown_key_rejected(tmp_path, capsys):
    path = _write(tmp_path, {"grid": {"M": 32, "bogus": 1}})
    with pytest.raises(ConfigError):
        load_config(path)
    code = main(["fiber-spectrum", "--config", path, "--out", str(tmp_path / "o")])
    assert code == 1
    payload = json.loads(capsys.readouterr().out)
    assert payload["status"] == "error" and "bogus" in payload["message"]


def test_weight_outside_window_rejected(tmp_path):
    path = _write(tmp_path, {"weights": {"s": 0.4}})
    assert main(["free-lap", "--config", path, "--out", str(tmp_path / "o")]) == 1


def test_fiber_spectrum_run(tmp_path):
    out = tmp_path / "fs"
    path = _write(tmp_path, {"fiber": {"N": 16, "xi": [0.0, 0.5]}, "cache": {"enabled": True, "dir": str(tmp_path / "c")}})
    assert main(["fiber-spectrum", "--config", path, "--out", str(out)]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["schema_version"] == "1.0" and s["status"] == "ok"
    assert {"config", "versions", "timings", "files", "diagnostics"} <= set(s)
    assert (out / "fiber_spectrum.csv").exists() and (out / "fiber_spectrum.dat").exists()
    first = (out / "fiber_spectrum.csv").read_text()
    assert main(["fiber-spectrum", "--config", path, "--out", str(out)]) == 0
    assert (out / "fiber_spectrum.csv").read_text() == first


def test_smoothing_check_run(tmp_path):
    out = tmp_path / "sm"
    path = _write(tmp_path, {"smoothing": {"N": 12, "xi": [0.0, 1.0]}})
    assert main(["smoothing-check", "--config", path, "--out", str(out)]) == 0
    d = json.loads((out / "summary.json").read_text())["diagnostics"]
    assert d["exploratory"] == ["t|k=1"]
    assert d["bounds"]["1|k=0"] == pytest.approx(4.0, rel=1e-3)


def test_semigroup_check_run(tmp_path):
    out = tmp_path / "sg"
    path = _write(tmp_path, {"semigroup": {"N": 32, "M": 128, "L": 24, "t_values": [1.0], "s_fractions": [0.5],
                                           "states": 1, "sum_t": [1.0], "sum_xi": [0.5], "sum_N": 24}})
    assert main(["semigroup-check", "--config", path, "--out", str(out)]) == 0
    d = json.loads((out / "summary.json").read_text())["diagnostics"]
    assert d["commutation_ok"] and d["projection_sum_violations"] == 0


def test_threshold_energy_is_flagged(tmp_path):
    # a probe at an integer energy runs, diverges and carries the threshold flag
    out = tmp_path / "o"
    path = _write(tmp_path, {"lap": {"lam": 1.0}, "grid": {"M": 16}, "hermite_N": 4})
    assert main(["free-lap", "--config", path, "--out", str(out)]) == 0
    d = json.loads((out / "summary.json").read_text())["diagnostics"]
    assert "threshold" in d["flags"] and not d["cauchy_ok"]
    assert "path_difference" not in d
