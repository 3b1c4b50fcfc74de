import json
import math
import os
import subprocess
import sys
from pathlib import Path

import pytest

from mfrbsde import harness
from mfrbsde.cli import main
from mfrbsde.errors import ConfigError, GateError

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def write(tmp_path, cfg, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def base(**over):
    cfg = json.loads((CONFIGS / "minimal.json").read_text())
    cfg.update(over)
    return cfg


def test_minimal_config_loads():
    prob = harness.load_problem(CONFIGS / "minimal.json")
    assert prob.regime == "lipschitz" and prob.warnings == ()


def test_unbounded_gate_rejects(tmp_path):
    cfg = base(regime="quadratic_unbounded", obstacle={"expr": "y - 1000000", "gamma1": 1.0},
               driver={"expr": "0.5*sq(z)", "gamma": 1.0, "convexity": "convex"})
    with pytest.raises(GateError):
        harness.load_problem(write(tmp_path, cfg))


def test_incompatible_terminal(tmp_path):
    with pytest.raises(ConfigError, match="terminal node"):
        harness.load_problem(write(tmp_path, base(terminal={"expr": "0"}, obstacle={"expr": "1"})))


@pytest.mark.parametrize(
    "mutate,needle",
    [
        (lambda c: c.pop("T"), "T"),
        (lambda c: c.pop("schema_version"), "schema_version"),
        (lambda c: c["driver"].update(expr="0.5*x"), "unknown identifier"),
        (lambda c: c["driver"].update(expr="1 +"), "byte 3"),
        (lambda c: c["driver"].update({"lambda": -1}), "lambda"),
        (lambda c: c.update(n_steps=0), "n_steps"),
        (lambda c: c.update(regime="cubic"), "regime"),
        (lambda c: c.update(extra=1), "unknown"),
        (lambda c: c["obstacle"].update(expr="z"), "z"),
        (lambda c: c.update(p_exponent=True), "p_exponent"),
    ],
)
def test_config_errors(tmp_path, mutate, needle):
    cfg = base()
    mutate(cfg)
    with pytest.raises(ConfigError, match=needle):
        harness.load_problem(write(tmp_path, cfg))


def test_probe_warning_attached(tmp_path):
    cfg = base(driver={"expr": "0.5*y + 0.9*z", "lambda": 0.5})
    prob = harness.load_problem(write(tmp_path, cfg))
    assert any("z" in w for w in prob.warnings)


def test_run_solve_examples(tmp_path):
    res = harness.run_solve(harness.load_problem(CONFIGS / "meanfield_linear.json"))
    assert abs(res.y0 - math.exp(0.5)) <= 5e-3
    out = tmp_path / "det.csv"
    res = harness.run_solve(harness.load_problem(CONFIGS / "deterministic_obstacle.json"), out)
    assert res.y0 == 2.0 and res.k_T_mean == pytest.approx(2.0, abs=1e-12)
    last = out.read_text().splitlines()[-1].split(",")
    assert float(last[6]) == pytest.approx(2.0, abs=1e-12) and last[5] == ""
    prob = harness.load_problem(CONFIGS / "minimal.json")
    res = harness.run_solve(prob)
    lat = prob.lattice
    assert res.y0 == pytest.approx(float(lat.probs[lat.n] @ prob.xi), abs=1e-15)


def test_csv_shape_and_precision(tmp_path):
    out = tmp_path / "o.csv"
    harness.run_solve(harness.load_problem(CONFIGS / "american_put_meanfield.json"), out)
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "level,node,t,b,y,z,k"
    n = 64
    assert len(lines) == 1 + (n + 1) * (n + 2) // 2
    y = lines[10].split(",")[4]
    assert float(format(float(y), ".17g")) == float(y) and y == format(float(y), ".17g")


def test_oracles():
    for case in ("colehopf", "meanfield_linear"):
        assert harness.run_oracle(case).passed
    res = harness.run_oracle("snell", depth=2)
    assert res.passed and res.extra["rule_count"] == [5] and len(res.rows) == 50
    with pytest.raises(ConfigError):
        harness.run_oracle("snell", depth=5)
    with pytest.raises(ConfigError):
        harness.run_oracle("heston")


def test_study_examples():
    cfg = json.loads((CONFIGS / "colehopf.json").read_text())
    rows = harness.run_study(cfg, [16, 32, 64, 128])
    for r in rows[1:]:
        assert 0.4 <= r["ratio"] <= 0.6
        assert 0.7 <= -math.log2(r["ratio"]) <= 1.3
    drift = harness.run_study(json.loads((CONFIGS / "pure_drift.json").read_text()), [4, 8, 16])
    assert all(r["diff_to_finest"] == 0 for r in drift)
    theta = harness.run_study(json.loads((CONFIGS / "theta_concave.json").read_text()), [32, 64])
    assert abs(theta[0]["iterations"] - theta[1]["iterations"]) <= 2
    with pytest.raises(ConfigError):
        harness.run_study(cfg, [])


# ------------------------------------------------------------------ CLI

def test_cli_exit_codes(tmp_path, capsys):
    assert main(["check", "--config", str(CONFIGS / "minimal.json")]) == 0
    assert main(["check", "--config", str(tmp_path / "missing.json")]) == 4
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["check", "--config", str(tmp_path / "bad.json")]) == 4
    gate = base(obstacle={"expr": "0.5*y + 0.5*m1 - 1000000", "gamma1": 0.5, "gamma2": 0.5})
    assert main(["solve", "--config", str(write(tmp_path, gate))]) == 2
    slow = base(driver={"expr": "0.9*m1", "lambda": 0.9}, terminal={"expr": "1"}, solver={"max_iter": 1})
    assert main(["solve", "--config", str(write(tmp_path, slow, "slow.json"))]) == 3
    assert main(["oracle", "--case", "snell", "--depth", "2"]) == 0
    assert main(["oracle", "--case", "meanfield_linear", "--steps", "4"]) == 3
    with pytest.raises(SystemExit) as exc:
        main(["solve"])
    assert exc.value.code == 4


def test_cli_log_env(monkeypatch):
    monkeypatch.setenv("MFRBSDE_LOG", "chatty")
    assert main(["check", "--config", str(CONFIGS / "minimal.json")]) == 4
    monkeypatch.setenv("MFRBSDE_LOG", "debug")
    assert main(["check", "--config", str(CONFIGS / "minimal.json")]) == 0


def test_cli_solve_and_study_files(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert main(["solve", "--config", str(CONFIGS / "pure_drift.json"), "--steps", "8", "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["y0"] == 1.0 and summary["status"] == "ok"
    assert len(out.read_text().splitlines()) == 1 + 9 * 10 // 2
    st = tmp_path / "study.csv"
    assert main(["study", "--config", str(CONFIGS / "colehopf.json"), "--steps", "16,32", "--out", str(st)]) == 0
    assert st.read_text().splitlines()[0] == "n,y0,diff_to_finest,error,iterations,ratio"


def test_console_script_byte_determinism(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}.csv"
        subprocess.run(
            [sys.executable, "-m", "mfrbsde", "solve", "--config", str(CONFIGS / "american_put_meanfield.json"), "--out", str(out)],
            env={**os.environ, "MFRBSDE_LOG": "quiet"}, check=True, capture_output=True,
        )
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
