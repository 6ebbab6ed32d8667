import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import oscillator_known_envelope
from tpv.cli import EXIT_ERROR, EXIT_NO_CERT, EXIT_OK, NO_CERT_MSG, main
from tpv.polyalg import enumerate_multi_indices

LTI_SPEC = {
    "nx": 1,
    "nu": 1,
    "simulate": {
        "system": "lti", "params": {"A": [[-1.0]], "B": [[1.0]]}, "x0": [0.2], "duration": 20, "h": 0.01,
        "input": {"type": "chirp", "amp": 0.8}, "noise": {"kind": "amplitude", "level": 1e-6}, "snapshots": 40,
    },
    "data": {"fit": "sim/samples.csv", "validation": "sim/samples.csv"},
    "basis": {"centers": [[0, 0]], "k": 1, "min_order": 1},
    "bounds": {"M": 0.0},
    "operation_set": {"box": {"lo": [-1, -1], "hi": [1, 1]}},
    "storage": {"dmin": 1, "dmax": 1},
    "gamma": {"min": 0.5, "max": 3, "tol": 0.01},
}


@pytest.fixture
def lti_dir(tmp_path):
    p = tmp_path / "lti.json"
    p.write_text(json.dumps(LTI_SPEC))
    assert main(["simulate", "--spec", str(p), "--out", str(tmp_path / "sim"), "--seed", "3"]) == EXIT_OK
    return tmp_path


def test_simulate_outputs(lti_dir):
    sim = lti_dir / "sim"
    assert (sim / "samples.csv").is_file() and (sim / "traj0.csv").is_file()
    meta = json.loads((sim / "meta.json").read_text())
    assert meta["exit"] == 0 and "wall_time_s" in meta


def test_l2gain_lti_and_determinism(lti_dir):
    spec = str(lti_dir / "lti.json")
    outs = []
    for name in ("r1", "r2"):
        assert main(["l2gain", "--spec", spec, "--out", str(lti_dir / name)]) == EXIT_OK
        outs.append((lti_dir / name / "certificate.json").read_bytes())
    cert = json.loads(outs[0])
    assert 1.0 <= cert["gamma"] <= 1.1
    assert cert["verification"]["passed"]
    assert outs[0] == outs[1]


def test_no_certificate_exit_two(lti_dir, capsys):
    spec = str(lti_dir / "lti.json")
    code = main(["l2gain", "--spec", spec, "--out", str(lti_dir / "nc"), "--gamma-min", "0.5", "--gamma-max", "0.8"])
    assert code == EXIT_NO_CERT
    assert NO_CERT_MSG in capsys.readouterr().out
    cert = json.loads((lti_dir / "nc" / "certificate.json").read_text())
    assert cert["message"] == NO_CERT_MSG
    assert "not dissipative" not in json.dumps(cert)


def test_verify_fixed_gamma(lti_dir):
    spec = dict(LTI_SPEC, supply={"type": "l2gain", "gamma": 1.2})
    p = lti_dir / "v.json"
    p.write_text(json.dumps(spec))
    assert main(["verify", "--spec", str(p), "--out", str(lti_dir / "v")]) == EXIT_OK


def test_missing_data_is_error(tmp_path, capsys):
    spec = dict(LTI_SPEC, data={"fit": "nowhere.csv"})
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(spec))
    out = tmp_path / "o"
    assert main(["verify", "--spec", str(p), "--out", str(out)]) == EXIT_ERROR
    assert not out.exists()
    assert "[data]" in capsys.readouterr().err


def test_bad_spec_is_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["envelope", "--spec", str(p), "--out", str(tmp_path / "o")]) == EXIT_ERROR
    assert main(["envelope", "--spec", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == EXIT_ERROR
    assert not (tmp_path / "o").exists()


def test_envelope_validate_lowerbound(lti_dir):
    spec = dict(LTI_SPEC)
    # 40 validation samples: eps_c = 0.21, so use the empirical (non-iid) acceptance
    spec["bounds"] = {"M": 0.0, "validate": {"mode": "M", "mu_bar": 0.2, "eps_stop": 0.05, "iid": False}}
    spec["lowerbound"] = {"trajectories": ["sim/traj0.csv"], "Tmin": 4, "Tmax": 100}
    p = lti_dir / "e.json"
    p.write_text(json.dumps(spec))
    assert main(["envelope", "--spec", str(p), "--out", str(lti_dir / "e")]) == EXIT_OK
    env = json.loads((lti_dir / "e" / "envelope.json").read_text())
    assert len(env["envelopes"]) == 1
    assert main(["validate", "--spec", str(p), "--out", str(lti_dir / "val")]) == EXIT_OK
    rep = json.loads((lti_dir / "val" / "validate.json").read_text())
    assert rep["value"] >= 0 and (lti_dir / "val" / "risk_trail.csv").is_file()
    assert main(["lowerbound", "--spec", str(p), "--out", str(lti_dir / "lb")]) == EXIT_OK
    lb = json.loads((lti_dir / "lb" / "lowerbound.json").read_text())
    assert lb["lower_bound"] > 0


def test_validate_search_failure_is_error(lti_dir, capsys):
    spec = dict(LTI_SPEC, bounds={"M": 0.0, "validate": {"mu_bar": 0.2, "m_cap": 2.0}})
    p = lti_dir / "f.json"
    p.write_text(json.dumps(spec))
    assert main(["validate", "--spec", str(p), "--out", str(lti_dir / "f")]) == EXIT_ERROR
    assert "[validate]" in capsys.readouterr().err
    assert not (lti_dir / "f").exists()


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "tpv.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "--emit-plots" in r.stdout


def test_incremental_oscillator_known_model(tmp_path):
    k = 5
    _, A = oscillator_known_envelope(k)
    sup = [[i, list(a), ] for i in range(2) for a in enumerate_multi_indices(3, k + 1, k + 1) if a[2] == 0]
    spec = {
        "nx": 2,
        "nu": 1,
        "basis": {"centers": [[0, 0, 0]], "k": k},
        "bounds": {"M": 0.3, "support": sup},
        "known_coefficients": np.asarray(A).tolist(),
        "operation_set": {"ineqs": [[[[2, 0, 0], 1.0], [[0, 0, 0], -0.49]], [[[0, 2, 0], 1.0], [[0, 0, 0], -0.49]]]},
        "gamma": {"min": 1.0, "max": 3.0, "tol": 0.01},
    }
    p = tmp_path / "osc.json"
    p.write_text(json.dumps(spec))
    assert main(["incremental", "--spec", str(p), "--out", str(tmp_path / "inc")]) == EXIT_OK
    cert = json.loads((tmp_path / "inc" / "certificate.json").read_text())
    assert abs(cert["gamma"] - 1.93) <= 0.1
    assert np.linalg.eigvalsh(np.array(cert["metric"]))[0] > 0
