import json
import math
import subprocess
import sys

import pytest

from forhc import cli

X_BAD = 3 * math.pi / 4


def run(tmp_path, command, toml=None, *extra, name="run"):
    args = [command, "--quiet", "--out", str(tmp_path / name)]
    if toml is not None:
        cfg = tmp_path / f"{name}.toml"
        cfg.write_text(toml)
        args += ["--config", str(cfg)]
    code = cli.main(args + list(extra))
    return code, tmp_path / name


def manifest(d):
    return json.loads((d / "manifest.json").read_text())


def test_simulate_origin(tmp_path):
    code, d = run(tmp_path, "simulate", 'system = "sin_drift"\nx0 = [0.0]\nT = 1.0\n')
    assert code == 0
    assert json.loads((d / "summary.json").read_text())["J"] == 0.0
    m = manifest(d)
    assert m["exit_code"] == 0 and m["status"] == "ok"
    assert m["outputs"] == ["control.csv", "summary.json", "trajectory.csv"]
    assert m["config_hash"] == cli.config_hash(m["config"])
    assert set(m["versions"]) == {"forhc", "numpy", "scipy", "python"}
    for f in m["outputs"] + ["run_info.json"]:
        assert (d / f).is_file()


def test_simulate_counterexample_constant(tmp_path):
    toml = f"""
system = "sin_drift"
x0 = [{X_BAD!r}]
T = 1.0
[costs]
preset = "sin_drift_counterexample"
[control]
kind = "constant"
value = [{-1 / math.sqrt(2)!r}]
"""
    code, d = run(tmp_path, "simulate", toml)
    assert code == 0
    q, r, q_f = 1 / math.sqrt(2), 3 * math.pi / (2 * math.sqrt(2)), 1.0
    J = json.loads((d / "summary.json").read_text())["J"]
    assert J == pytest.approx(q * X_BAD**2 + r / 2 + q_f * X_BAD**2, rel=1e-9)


@pytest.mark.parametrize("toml", [
    'system = "no_such_system"\n',
    'system = "sin_drift"\nx0 = [1.0, 2.0]\n',
    'system = "sin_drift"\nT = -1.0\n',
    'bogus_key = 1\n',
    '[control]\nkind = "wavy"\n',
    '[costs]\npreset = "quadratic"\nq = 1.0\n',
    'this is not toml',
])
def test_bad_config_exits_1(tmp_path, toml, capsys):
    code, d = run(tmp_path, "simulate", toml)
    assert code == 1
    assert "forhc simulate:" in capsys.readouterr().err
    assert not (d / "manifest.json").exists()


def test_missing_config_file(tmp_path):
    assert cli.main(["simulate", "--quiet", "--config", str(tmp_path / "absent.toml"),
                     "--out", str(tmp_path / "x")]) == 1


def test_divergence_exits_2(tmp_path):
    toml = 'system = "sin_drift"\nx0 = [1.0]\nT = 1.0\n[control]\nkind = "constant"\nvalue = [1e12]\n'
    code, d = run(tmp_path, "simulate", toml)
    assert code == 2
    assert manifest(d)["status"] == "diverged"


def test_plan_origin_and_stuck_point(tmp_path):
    code, d = run(tmp_path, "plan", 'system = "sin_drift"\nx0 = [0.0]\nT = 2.0\n', name="origin")
    assert code == 0
    assert json.loads((d / "result.json").read_text())["iterations"] == 0
    toml = f"""
system = "sin_drift"
x0 = [{X_BAD!r}]
T = 5.0
[costs]
preset = "sin_drift_counterexample"
[control]
kind = "constant"
value = [{-1 / math.sqrt(2)!r}]
"""
    code, d = run(tmp_path, "plan", toml, name="stuck")
    res = json.loads((d / "result.json").read_text())
    assert code == 0 and res["iterations"] == 0 and res["eps_measured"] <= 1e-7


def test_plan_compliant_converges(tmp_path):
    toml = 'system = "sin_drift"\nx0 = [1.0]\nT = 3.0\n[costs]\npreset = "sin_drift_compliant"\n' \
           '[planner]\neps0 = 0.01\n'
    code, d = run(tmp_path, "plan", toml)
    res = json.loads((d / "result.json").read_text())
    assert code == 0 and res["converged"]
    assert res["eps_measured"] <= 0.01 * math.sqrt(res["J_in"])


def test_plan_stall_exits_3(tmp_path):
    toml = ('system = "sin_drift"\nx0 = [1.0]\nT = 2.0\n[costs]\npreset = "sin_drift_compliant"\n'
            '[planner]\ninitial_step = 1e6\nmax_backtracks = 1\n')
    code, d = run(tmp_path, "plan", toml)
    assert code == 3
    assert json.loads((d / "result.json").read_text())["stalled"] is True
    assert (d / "control.csv").is_file()


def test_certify_failure_is_data(tmp_path):
    toml = ('system = "bump"\nx0 = [0.0, 0.0]\n[sample]\nhorizons = [1.0]\nn_initial = 1\n'
            'n_controls = 1\nextra_initial = [[5.0, -5.0]]\n')
    code, d = run(tmp_path, "certify", toml)
    assert code == 0
    cert = json.loads((d / "certificate.json").read_text())
    assert cert["assumptions"]["a4"]["pass"] is False


def test_rhc_truncation_exits_4(tmp_path):
    toml = ('system = "sin_drift"\nx0 = [1.0]\nT = 2.0\ndelta = 0.5\nn_replans = 3\ncertify = false\n'
            '[costs]\npreset = "sin_drift_compliant"\n[planner]\ninitial_step = 1e6\nmax_backtracks = 1\n')
    code, d = run(tmp_path, "rhc", toml)
    assert code == 4
    trace = json.loads((d / "trace.json").read_text())
    assert trace["truncated"] is True


def test_rhc_writes_trace(tmp_path):
    toml = ('system = "sin_drift"\nx0 = [1.0]\nT = 2.0\ndelta = 0.5\nn_replans = 2\n'
            '[costs]\npreset = "sin_drift_compliant"\n[sample]\nhorizons = [1.0]\nn_initial = 2\nn_controls = 1\n')
    code, d = run(tmp_path, "rhc", toml)
    assert code == 0
    assert set(manifest(d)["outputs"]) == {"applied_control.csv", "certificate.json", "closed_loop_states.csv",
                                            "rhc_constants.json", "trace.json"}
    trace = json.loads((d / "trace.json").read_text())
    assert set(trace) == {"config", "cycles", "decay_report", "truncated", "failure"}


def test_existing_manifest_needs_force(tmp_path):
    toml = 'system = "sin_drift"\nx0 = [0.5]\n'
    assert run(tmp_path, "simulate", toml)[0] == 0
    assert run(tmp_path, "simulate", toml)[0] == 1
    assert run(tmp_path, "simulate", toml, "--force")[0] == 0


def test_manifests_are_byte_identical(tmp_path):
    toml = 'system = "lti"\nx0 = [0.5, -0.5]\nT = 1.0\n[control]\nkind = "random"\n'
    _, a = run(tmp_path, "simulate", toml, "--seed", "7", name="a")
    _, b = run(tmp_path, "simulate", toml, "--seed", "7", name="b")
    for f in ["manifest.json", "summary.json", "trajectory.csv", "control.csv"]:
        assert (a / f).read_bytes() == (b / f).read_bytes()
    _, c = run(tmp_path, "simulate", toml, "--seed", "8", name="c")
    assert manifest(c)["config_hash"] != manifest(a)["config_hash"]
    assert (a / "control.csv").read_bytes() != (c / "control.csv").read_bytes()


def test_seed_range(tmp_path):
    assert cli.main(["simulate", "--quiet", "--seed", "-1", "--out", str(tmp_path / "s")]) == 1
    assert cli.main(["simulate", "--quiet", "--seed", str(2**64 - 1), "--out", str(tmp_path / "s")]) == 0


def test_default_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "root"))
    assert cli.main(["simulate", "--quiet"]) == 0
    (d,) = (tmp_path / "root").iterdir()
    assert d.name == f"simulate-{manifest(d)['config_hash'][:12]}"


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "forhc", "simulate", "--out", str(tmp_path / "m")],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "J = 0" in out.stdout


def test_counterexamples_reproduce(tmp_path):
    code, d = run(tmp_path, "counterexamples")
    report = json.loads((d / "report.json").read_text())
    assert code == 0 and report["reproduced"]
    assert [g["T"] for g in report["sin_drift"]["stationary_gradient"]] == [1.0, 5.0, 20.0]
    assert sorted({g["r"] for g in report["bump"]["stationary_gradient"]}) == [0.1, 1.0, 10.0]
    assert report["bump"]["matching_residual"]["max_residual"] == pytest.approx(10.0, abs=1e-6)


def test_counterexamples_failure_exits_5(tmp_path):
    # a short RHC horizon lets the state drift off the stuck point
    toml = '[sin_drift]\nhorizons = [1.0]\nrhc_T = 5.0\nn_replans = 20\n[bump]\nhorizons = [1.0]\nr_values = [1.0]\n'
    code, d = run(tmp_path, "counterexamples", toml)
    assert code == 5
    assert json.loads((d / "report.json").read_text())["sin_drift"]["rhc_stuck"]["pass"] is False
