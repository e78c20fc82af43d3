"""End-to-end driver tests: exit codes, outputs, manifest, determinism.

Every run goes through main(argv) in process.  Configs are small
versions of the real experiments, sized to keep this file fast.
"""
import hashlib
import json

import pytest

from qsdsim.cli import (EXIT_CONFIG, EXIT_FAIL, EXIT_NUMERICAL, EXIT_PASS,
                        main)


def _write(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def _run(tmp_path, command, cfg, *extra):
    cpath = _write(tmp_path, cfg)
    out = tmp_path / "out"
    return main([command, "--config", str(cpath), "--out", str(out),
                 *extra]), out


def _stationary_cfg(**over):
    cfg = {
        "params": {"m": 1.0, "omega": 1.0, "gamma": 0.2, "nbar": 0.5},
        "fock": {"n_fock": 32},
        "integrator": {"dt": 1e-3, "t_end": 2.0, "record_stride": 20},
        "initial": {"kind": "coherent", "alpha": 1.0},
    }
    cfg.update(over)
    return cfg


def test_missing_config_is_config_error(tmp_path):
    code = main(["stationary", "--config", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "out")])
    assert code == EXIT_CONFIG


def test_unparseable_config(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    code = main(["stationary", "--config", str(path),
                 "--out", str(tmp_path / "out")])
    assert code == EXIT_CONFIG


def test_schema_rejects_unknown_key(tmp_path):
    cfg = _stationary_cfg()
    cfg["surprise"] = {"x": 1}
    code, _ = _run(tmp_path, "stationary", cfg)
    assert code == EXIT_CONFIG


def test_temperature_and_nbar_conflict(tmp_path):
    cfg = _stationary_cfg()
    cfg["params"]["temperature"] = 1.0   # nbar is also set
    code, _ = _run(tmp_path, "stationary", cfg)
    assert code == EXIT_CONFIG


def test_stationary_smoke(tmp_path):
    code, out = _run(tmp_path, "stationary", _stationary_cfg())
    assert code == EXIT_PASS
    csv = out / "trajectory.csv"
    assert csv.exists()
    header = csv.read_text().splitlines()[0]
    assert header.startswith("t,q_mean,p_mean")
    assert (out / "plot.gp").exists()

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "stationary"
    assert manifest["passed"] is True
    assert manifest["checks"] and all(c["passed"] for c in manifest["checks"])
    digest = hashlib.sha256((tmp_path / "config.json").read_bytes())
    assert manifest["config_sha256"] == digest.hexdigest()
    for name in manifest["outputs"]:
        assert (out / name).exists()


def test_gnuplot_stub_can_be_disabled(tmp_path):
    cfg = _stationary_cfg(output={"gnuplot": False})
    code, out = _run(tmp_path, "stationary", cfg)
    assert code == EXIT_PASS
    assert not (out / "plot.gp").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert "plot.gp" not in manifest["outputs"]


def test_stationary_expect_fail_mode(tmp_path):
    cfg = {
        "params": {"m": 1.0, "omega": 1.0, "gamma": 0.5, "nbar": 0.5},
        "fock": {"n_fock": 32},
        "integrator": {"dt": 1e-3, "t_end": 12.0, "record_stride": 50},
        "initial": {"kind": "fock", "n": 2},
    }
    code, _ = _run(tmp_path, "stationary", cfg, "--expect-fail")
    assert code == EXIT_PASS


def test_seed_override_controls_noise(tmp_path):
    cfg = _stationary_cfg()
    code_a, out_a = _run(tmp_path, "stationary", cfg, "--seed", "42")
    body_a = (out_a / "trajectory.csv").read_bytes()
    (out_a / "trajectory.csv").unlink()
    code_b, out_b = _run(tmp_path, "stationary", cfg, "--seed", "42")
    assert code_a == code_b == EXIT_PASS
    assert (out_b / "trajectory.csv").read_bytes() == body_a
    _, out_c = _run(tmp_path, "stationary", cfg, "--seed", "43")
    assert (out_c / "trajectory.csv").read_bytes() != body_a


def test_tail_overflow_is_numerical_error(tmp_path):
    # a high Fock start in a tiny basis pumps the guarded tail at once
    cfg = {
        "params": {"m": 1.0, "omega": 1.0, "gamma": 0.5, "nbar": 1.0},
        "fock": {"n_fock": 8},
        "integrator": {"dt": 1e-3, "t_end": 1.0},
        "initial": {"kind": "fock", "n": 6},
    }
    code, _ = _run(tmp_path, "stationary", cfg)
    assert code == EXIT_NUMERICAL


def test_localize_fock_rate_beats_bound(tmp_path):
    cfg = {
        "params": {"m": 1.0, "omega": 1.0, "gamma": 0.2, "nbar": 0.5},
        "fock": {"n_fock": 24},
        "integrator": {"dt": 1e-3, "t_end": 8.0, "record_stride": 20},
        "ensemble": {"m": 64, "base_seed": 9},
        "initial": {"kind": "fock", "n": 1},
    }
    code, out = _run(tmp_path, "localize", cfg)
    assert code == EXIT_PASS
    report = json.loads((out / "localize_report.json").read_text())
    assert report["rate"] - report["ci95"] > 0.0
    assert report["rate"] + report["ci95"] >= report["rate_bound"]
    assert (out / "localize_main.csv").exists()


def test_localize_rejects_coherent_initial(tmp_path):
    cfg = {
        "params": {"m": 1.0, "omega": 1.0, "gamma": 0.2, "nbar": 0.5},
        "fock": {"n_fock": 24},
        "integrator": {"dt": 1e-3, "t_end": 2.0, "record_stride": 20},
        "ensemble": {"m": 8},
        "initial": {"kind": "coherent", "alpha": 1.0},
    }
    code, _ = _run(tmp_path, "localize", cfg)
    assert code == EXIT_CONFIG


def test_localize_requires_ensemble_section(tmp_path):
    cfg = {
        "params": {"m": 1.0, "omega": 1.0, "gamma": 0.2, "nbar": 0.5},
        "fock": {"n_fock": 24},
        "integrator": {"dt": 1e-3, "t_end": 2.0},
        "initial": {"kind": "fock", "n": 1},
    }
    code, _ = _run(tmp_path, "localize", cfg)
    assert code == EXIT_CONFIG


def _thermalize_cfg():
    return {
        "params": {"m": 1.0, "omega": 1.0, "gamma": 1.0, "nbar": 0.8},
        "fock": {"n_fock": 32},
        "integrator": {"dt": 1e-3, "t_end": 10.0, "record_stride": 100},
        "ensemble": {"m": 128, "base_seed": 3},
        "initial": {"kind": "fock", "n": 0},
        "thermalize": {"max_n": 4},
    }


def test_thermalize_too_short_rejected(tmp_path):
    cfg = _thermalize_cfg()
    cfg["integrator"]["t_end"] = 3.0
    code, _ = _run(tmp_path, "thermalize", cfg)
    assert code == EXIT_CONFIG


def test_thermalize_reaches_thermal_law(tmp_path):
    code, out = _run(tmp_path, "thermalize", _thermalize_cfg())
    assert code == EXIT_PASS
    assert (out / "thermalize.csv").exists()
    hist = (out / "occupation_histogram.csv").read_text().splitlines()
    assert hist[0] == "n,observed_fraction,thermal_fraction"
    assert len(hist) == 1 + 5   # n = 0..max_n


def test_oracle_compare_convergence(tmp_path):
    cfg = {
        "params": {"m": 1.0, "omega": 2.0, "gamma": 0.5, "nbar": 0.5},
        "fock": {"n_fock": 32},
        "integrator": {"dt": 1e-3, "t_end": 2.0, "record_stride": 2000,
                       "seed": 5},
        "ensemble": {"m": 128, "base_seed": 1},
        "initial": {"kind": "coherent", "alpha": 1.0},
        "oracle_compare": {"dt_oracle": 1e-3},
    }
    code, out = _run(tmp_path, "oracle-compare", cfg)
    assert code == EXIT_PASS
    rows = (out / "oracle_compare.csv").read_text().splitlines()
    assert rows[0] == "label,m,dt,trace_distance"
    labels = [r.split(",")[0] for r in rows[1:]]
    assert labels == ["M", "4M", "4M_dt/2"]


def test_histories_damped_cat_decoheres(tmp_path):
    cfg = {
        "params": {"m": 1.0, "omega": 1.0, "gamma": 0.3, "nbar": 2.0},
        "fock": {"n_fock": 24},
        "initial": {"kind": "cat", "alpha": 1.4},
        "histories": {
            "times": [0.0, 6.285],
            "cells": [
                {"center": 1.2, "w_re": 0.7, "w_im": 1.4286},
                {"center": -1.2, "w_re": 0.7, "w_im": 1.4286},
            ],
            "h": 0.12,
            "dt_oracle": 5e-3,
            "include_complement": False,
        },
    }
    code, out = _run(tmp_path, "histories", cfg)
    assert code == EXIT_PASS
    dmat = json.loads((out / "decoherence.json").read_text())
    assert dmat["labels"] == ["0.0", "0.1", "1.0", "1.1"]
    assert (out / "suppression.csv").exists()
    peak = json.loads((out / "peaking_report.json").read_text())
    assert "best_label" in peak and "distances" in peak


def test_histories_undamped_control_keeps_coherence(tmp_path):
    cfg = {
        "params": {"m": 1.0, "omega": 1.0, "gamma": 0.0, "nbar": 0.0},
        "fock": {"n_fock": 20},
        "initial": {"kind": "cat", "alpha": 0.7},
        "histories": {
            "times": [0.0, 6.285],
            "cells": [
                {"center": 0.7, "w_re": 0.7, "w_im": 1.4286},
                {"center": -0.7, "w_re": 0.7, "w_im": 1.4286},
            ],
            "h": 0.12,
            "dt_oracle": 5e-3,
            "include_complement": False,
            "control": True,
        },
    }
    code, out = _run(tmp_path, "histories", cfg)
    assert code == EXIT_PASS
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "histories"
    assert manifest["passed"] is True


def test_failing_check_exits_one(tmp_path):
    # the undamped control config against the non-control check: the
    # cat keeps its coherence, so the suppression bound must fail
    cfg = {
        "params": {"m": 1.0, "omega": 1.0, "gamma": 0.0, "nbar": 0.0},
        "fock": {"n_fock": 20},
        "initial": {"kind": "cat", "alpha": 0.7},
        "histories": {
            "times": [0.0, 6.285],
            "cells": [
                {"center": 0.7, "w_re": 0.7, "w_im": 1.4286},
                {"center": -0.7, "w_re": 0.7, "w_im": 1.4286},
            ],
            "h": 0.12,
            "dt_oracle": 5e-3,
            "include_complement": False,
        },
    }
    code, out = _run(tmp_path, "histories", cfg)
    assert code == EXIT_FAIL
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["passed"] is False
