import json

import pytest
import yaml

from kgmix import cli
from kgmix.experiments import ExperimentResult


def config(**kw):
    return cli.ExperimentConfig.from_mapping(kw)


@pytest.mark.parametrize("name", sorted(cli.PRESETS))
def test_presets_are_valid(name):
    assert cli.validate(config(experiment=name)) == []


def test_odd_grid_gives_one_diagnostic():
    out = cli.validate(config(experiment="clt", points_per_axis=511))
    assert len(out) == 1 and out[0].startswith("points_per_axis")


def test_too_few_samples_gives_one_diagnostic():
    out = cli.validate(config(experiment="clt", samples=1))
    assert len(out) == 1 and out[0].startswith("samples")


def test_window_violation_is_reported():
    out = cli.validate(config(experiment="decay", times=[10.0, 400.0]))
    assert len(out) == 1 and out[0].startswith("times") and "L/2" in out[0]
    out = cli.validate(config(experiment="cook", t_max=60.0))
    assert len(out) == 1 and out[0].startswith("t_max")


def test_unknown_key_and_missing_experiment_raise():
    with pytest.raises(cli.ConfigError):
        config(experiment="clt", bogus=1)
    with pytest.raises(cli.ConfigError):
        cli.ExperimentConfig.from_mapping({"dim": 1})


def write_yaml(path, **kw):
    path.write_text(yaml.safe_dump(kw))
    return path


def test_invalid_config_exits_with_2(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "c.yaml", experiment="clt", points_per_axis=13)
    assert cli.main([str(cfg), "--output-dir", str(tmp_path / "out")]) == 2
    assert "points_per_axis" in capsys.readouterr().err
    assert cli.main([str(tmp_path / "missing.yaml")]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("experiment: [unclosed")
    assert cli.main([str(bad)]) == 2


def test_missing_output_parent_is_a_config_error(tmp_path):
    cfg = write_yaml(tmp_path / "c.yaml", experiment="counterexample")
    assert cli.main([str(cfg), "--output-dir", str(tmp_path / "no" / "such")]) == 2


def test_counterexample_run_writes_manifest(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "c.yaml", experiment="counterexample")
    out = tmp_path / "run"
    assert cli.main([str(cfg), "--output-dir", str(out)]) == 0
    assert capsys.readouterr().out.startswith("counterexample: pass")
    manifest = json.loads((out / "manifest.json").read_text())
    files = {a["file"]: a["sha256"] for a in manifest["artifacts"]}
    assert set(files) == {"trace.csv", "diagnostics.json"}
    for name, digest in files.items():
        assert cli.file_digest(out / name) == digest
    assert manifest["passed"] and manifest["config"]["samples"] == 2000
    assert manifest["version"]


def test_runs_are_deterministic(tmp_path):
    cfg = write_yaml(tmp_path / "c.yaml", experiment="counterexample", samples=500, periods=3)
    digests = []
    for name in ("a", "b"):
        cli.main([str(cfg), "--output-dir", str(tmp_path / name)])
        digests.append(json.loads((tmp_path / name / "manifest.json").read_text())["artifacts"])
    assert digests[0] == digests[1]
    cli.main([str(cfg), "--output-dir", str(tmp_path / "c"), "--seed", "7"])
    other = json.loads((tmp_path / "c" / "manifest.json").read_text())["artifacts"]
    assert other[0]["sha256"] != digests[0][0]["sha256"]


def test_csv_floats_round_trip(tmp_path):
    values = [0.1, 1 / 3, -2.5e-300, 1e300, 123456789.123456789]
    path = tmp_path / "x.csv"
    cli.write_csv(path, ("a", "b"), [(v, 2 * v) for v in values])
    lines = path.read_text().splitlines()
    assert lines[0] == "a,b"
    back = [tuple(float(x) for x in line.split(",")) for line in lines[1:]]
    assert back == [(v, 2 * v) for v in values]


def test_failing_check_exits_with_1(tmp_path, monkeypatch, capsys):
    def failing(cfg):
        res = ExperimentResult()
        res.tables["t"] = (("x",), [(1.0,)])
        res.checks["always_fails"] = False
        return res

    monkeypatch.setitem(cli.RUNNERS, "counterexample", failing)
    cfg = write_yaml(tmp_path / "c.yaml", experiment="counterexample")
    assert cli.main([str(cfg), "--output-dir", str(tmp_path / "out")]) == 1
    assert "FAIL  always_fails" in capsys.readouterr().out
