import csv
import json
from pathlib import Path

import numpy as np
import pytest

from madm import cli
from madm.config import ConfigError, load_config, parse_config
from madm.report import Report, read_report, write_report

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data, indent=2), encoding="utf-8")
    return path


# configuration ---------------------------------------------------------------------


def test_minimal_config_defaults():
    cfg = load_config({"model": {"kind": "spin_half", "N": 4, "beta_left": 0.4, "beta_right": 0.6}})
    assert cfg.truncation.m_cap == 16
    assert cfg.truncation.tail_tol == 1e-10
    assert cfg.sim.epsilon == 1e-6
    spec = cfg.model.chain(exact=True)
    assert spec.beta_left == pytest.approx(0.4) and str(spec.beta_left) == "2/5"


def test_beta_out_of_range(tmp_path):
    text = '{\n  "model": {\n    "kind": "spin_half",\n    "N": 2,\n    "beta_left": 1.2,\n    "beta_right": 0.5\n  }\n}\n'
    path = tmp_path / "bad.json"
    path.write_text(text)
    with pytest.raises(ConfigError) as exc:
        parse_config(path)
    assert "beta out of (0,1)" in str(exc.value)
    assert exc.value.line == 5


def test_levy_missing_lambda():
    with pytest.raises(ConfigError, match="lambda_right"):
        load_config({"model": {"kind": "levy", "N": 2, "lambda_left": 1.0}})


@pytest.mark.parametrize(
    "data,fragment",
    [
        ({"model": {"kind": "spin_half", "N": 2, "beta_left": 0.4, "beta_right": 0.5, "colour": 1}}, "model.colour"),
        ({"model": {"kind": "spin_half", "N": 2, "beta_left": 0.4, "beta_right": 0.5}, "extra": {}}, "extra"),
        ({"model": {"kind": "spin_s", "N": 2, "beta_left": 0.4, "beta_right": 0.5}}, "model.s"),
        ({"model": {"kind": "spin_half", "N": 0, "beta_left": 0.4, "beta_right": 0.5}}, "positive"),
        ({"model": {"kind": "spin_half", "N": 2, "closed": True, "beta_left": 0.4}}, "closed"),
        ({"model": {"kind": "spin_half", "N": 2, "beta_left": 0.4, "beta_right": 0.5}, "checks": ["nope"]}, "unknown check"),
        ({"model": {"kind": "spin_half", "N": 2, "beta_left": 0.4, "beta_right": 0.5}, "sim": {"horizon": 5, "burn_in": 9}}, "burn_in"),
    ],
)
def test_schema_violations(data, fragment):
    with pytest.raises(ConfigError, match=fragment):
        load_config(data)


def test_invalid_json_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "model": {\n    "kind": "spin_half",\n  }\n}\n')
    with pytest.raises(ConfigError) as exc:
        parse_config(path)
    assert exc.value.line == 4


@pytest.mark.parametrize("name", ["default.json", "profile_n6.json", "levy.json", "verify_fast.json"])
def test_shipped_configs_parse(name):
    parse_config(CONFIGS / name)


# reports ---------------------------------------------------------------------------


def test_report_field_order_and_counts(tmp_path):
    rep = Report()
    rep.add("a", {"x": 1}, 0.5, 1.0)
    rep.add("b", {}, 2.0, 1.0)
    rep.add("c", {}, float("nan"), 1.0)
    path = tmp_path / "r.json"
    write_report(rep, path)
    lines = path.read_text().splitlines()
    assert list(json.loads(lines[0])) == ["check", "params", "residual", "bound", "pass"]
    records, summary = read_report(path)
    assert summary == {"total": 3, "passed": 1, "failed": 2}
    assert len(records) == summary["total"]
    for r in records[:2]:
        assert r["pass"] == (r["residual"] <= r["bound"])


def test_empty_report_is_summary_only(tmp_path):
    path = tmp_path / "r.json"
    write_report(Report(), path)
    assert path.read_text().splitlines() == [json.dumps({"summary": {"total": 0, "passed": 0, "failed": 0}})]


def test_unicode_path(tmp_path):
    d = tmp_path / "résultats ü"
    d.mkdir()
    rep = Report()
    rep.add("ünïcode", {"ρ": "2/3"}, 0.0, 0.0)
    write_report(rep, d / "rapport.json")
    records, summary = read_report(d / "rapport.json")
    assert records[0]["check"] == "ünïcode" and summary["passed"] == 1


def test_report_io_error(tmp_path):
    with pytest.raises(OSError):
        write_report(Report(), tmp_path / "missing" / "r.json")


# commands and exit codes -----------------------------------------------------------


def test_exit_code_config_error(tmp_path, capsys):
    path = _write(tmp_path, {"model": {"kind": "spin_half", "N": 2, "beta_left": 1.2, "beta_right": 0.5}})
    assert cli.main(["stationary", "--config", str(path), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "beta out of (0,1)" in err and "cfg.json:5:" in err


def test_exit_code_usage(tmp_path):
    assert cli.main(["frobnicate"]) == 2
    path = _write(tmp_path, {"model": {"kind": "levy", "N": 2, "lambda_left": 1.0, "lambda_right": 1.0}})
    assert cli.main(["stationary", "--config", str(path), "--out", str(tmp_path)]) == 2
    assert cli.main(["simulate", "--config", str(CONFIGS / "default.json"), "--mcap", "0"]) == 2


def test_exit_code_failed_check(tmp_path):
    # a tiny cap leaks far more than the tolerance
    path = _write(tmp_path, {"model": {"kind": "spin_half", "N": 2, "beta_left": 0.5, "beta_right": 0.7}, "truncation": {"m_cap": 4}})
    assert cli.main(["stationary", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    records, summary = read_report(tmp_path / "o" / "report.json")
    assert summary["failed"] >= 1


def test_exit_code_report_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    path = _write(tmp_path, {"model": {"kind": "spin_half", "N": 1, "beta_left": 0.3, "beta_right": 0.3}})
    assert cli.main(["stationary", "--config", str(path), "--out", str(blocker / "sub")]) == 1


def test_simulate_is_reproducible(tmp_path):
    cfg = str(CONFIGS / "default.json")
    for d in ("a", "b"):
        assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / d), "--seed", "9"]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "events_0000.ndjson" in names and "summary.csv" in names
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    first = json.loads((tmp_path / "a" / "events_0000.ndjson").read_text().splitlines()[0])
    assert list(first) == ["t", "site", "kind", "k"]


def test_stationary_profile(tmp_path):
    path = _write(tmp_path, {"model": {"kind": "spin_half", "N": 3, "beta_left": 0.3, "beta_right": 0.4}, "truncation": {"m_cap": 30}})
    assert cli.main(["stationary", "--config", str(path), "--out", str(tmp_path)]) == 0
    with open(tmp_path / "stationary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["site"] for r in rows] == ["1", "2", "3"]
    for r in rows:
        assert abs(float(r["mean"]) - float(r["theory"])) < 1e-6


def test_profile_linear_n6(tmp_path):
    data = {
        "model": {"kind": "spin_half", "N": 6, "beta_left": 0.4, "beta_right": 0.6},
        "sim": {"horizon": 4000.0, "n_traj": 4, "seed": 2, "burn_in": 200.0},
    }
    path = _write(tmp_path, data)
    assert cli.main(["profile", "--config", str(path), "--out", str(tmp_path)]) == 0
    with open(tmp_path / "profile.csv") as fh:
        rows = list(csv.DictReader(fh))
    means = np.array([float(r["mean"]) for r in rows])
    theory = 2 / 3 + (3 / 2 - 2 / 3) * np.arange(1, 7) / 7
    np.testing.assert_allclose([float(r["theory"]) for r in rows], theory, rtol=1e-12)
    assert np.polyfit(np.arange(1, 7), means, 1)[0] > 0


def test_correlations(tmp_path):
    assert cli.main(["correlations", "--config", str(CONFIGS / "default.json"), "--out", str(tmp_path)]) == 0
    with open(tmp_path / "correlations.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6
    assert set(rows[0]) == {"i", "j", "predicted", "simulated", "se"}


def test_levy_profile(tmp_path):
    assert cli.main(["profile", "--config", str(CONFIGS / "levy.json"), "--out", str(tmp_path), "--seed", "3"]) == 0


def test_verify_duality_default(tmp_path):
    assert cli.main(["verify", "duality", "--config", str(CONFIGS / "default.json"), "--out", str(tmp_path)]) == 0
    records, summary = read_report(tmp_path / "report.json")
    assert summary["failed"] == 0 and summary["total"] == len(records) > 0
    assert {r["check"] for r in records} >= {"duality.matrix", "duality.edge", "duality.self"}


def test_verify_override_unknown_param(tmp_path):
    path = _write(tmp_path, {
        "model": {"kind": "spin_half", "N": 2, "beta_left": 0.4, "beta_right": 0.5},
        "checks": [{"name": "limits", "params": {"bogus": 1}}],
    })
    assert cli.main(["verify", "limits", "--config", str(path), "--out", str(tmp_path)]) == 2


def test_verify_fast_config(tmp_path):
    assert cli.main(["verify", "ybe", "--config", str(CONFIGS / "verify_fast.json"), "--out", str(tmp_path)]) == 0
