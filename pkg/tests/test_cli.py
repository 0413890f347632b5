import csv
import json
import math

import numpy as np
import pytest

from freqlab.cli import run
from freqlab.errors import ConfigError
from freqlab.report import Report, clean, to_csv
from freqlab.scenario import DEFAULT_SCENARIOS, default_scenario, parse_scenario, schema_document

FREQ = DEFAULT_SCENARIOS["frequency"]


def _write(tmp_path, text, name="s.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _run(tmp_path, *argv):
    return run(list(argv) + ["--out-dir", str(tmp_path / "out"), "--quiet"])


def test_unknown_key_names_key_and_line(tmp_path, capsys):
    path = _write(tmp_path, '[geometry]\nkind = "ramp"\nslop = 0.1\n[experiment]\nkind = "frequency"\n')
    assert _run(tmp_path, "frequency", "--scenario", path) == 2
    err = capsys.readouterr().err
    assert "slop" in err and f"{path}:3" in err
    with pytest.raises(ConfigError, match="line|:3"):
        parse_scenario(open(path).read(), path)


def test_type_errors_are_config_errors():
    with pytest.raises(ConfigError):
        parse_scenario('[geometry]\nslope = true\n[experiment]\nkind = "frequency"\n', "x.toml")
    with pytest.raises(ConfigError):
        parse_scenario('[experiment]\nkind = "teleport"\n', "x.toml")
    with pytest.raises(ConfigError):
        parse_scenario("[geometry\n", "x.toml")


def test_bad_domain_is_config_error():
    scn = parse_scenario('[geometry]\nkind = "ramp"\nslope = 2.0\n[experiment]\nkind = "frequency"\n', "x.toml")
    with pytest.raises(ConfigError):
        scn.build_domain()


def test_kind_mismatch(tmp_path, capsys):
    path = _write(tmp_path, FREQ)
    assert _run(tmp_path, "doubling", "--scenario", path) == 2
    assert "frequency" in capsys.readouterr().err


def test_frequency_default_and_reproducible(tmp_path):
    assert _run(tmp_path, "frequency") == 0
    out = tmp_path / "out"
    rows = list(csv.DictReader(open(out / "frequency_profile.csv")))
    assert len(rows) == 7
    assert all(abs(float(r["F"]) - 2) <= 1e-6 for r in rows)
    assert all(float(r["tol"]) == 1e-8 for r in rows)
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert _run(tmp_path, "frequency") == 0
    assert {p.name: p.read_bytes() for p in out.iterdir()} == first


def test_audit_failure_exit_one(tmp_path):
    path = _write(tmp_path, FREQ.replace("expect_F = 2.0", "expect_F = 3.0"))
    assert _run(tmp_path, "frequency", "--scenario", path) == 1
    rep = json.loads((tmp_path / "out" / "frequency.json").read_text())
    assert "frequency/F_expected" in rep["summary"]["failed"] or any(
        not a["passed"] and a["name"] == "F_expected" for a in rep["audits"])


def test_numeric_failure_exit_three(tmp_path, capsys):
    path = _write(tmp_path, FREQ.replace('name = "linear"', 'name = "zero"'))
    assert _run(tmp_path, "frequency", "--scenario", path) == 3
    err = capsys.readouterr().err
    assert "ZeroAverage" in err and path in err


def test_seed_override_recorded(tmp_path):
    assert _run(tmp_path, "doubling", "--seed", "7") == 0
    rep = json.loads((tmp_path / "out" / "doubling.json").read_text())
    assert rep["seed"] == 7


def test_whitney_json(tmp_path):
    assert _run(tmp_path, "whitney") == 0
    rep = json.loads((tmp_path / "out" / "whitney.json").read_text())
    assert rep["summary"]["ok"] and rep["summary"]["audits"] == rep["summary"]["passed"]
    assert rep["results"]["audit"]["cubes"] > 0
    assert {a["name"] for a in rep["audits"]} >= {"property_i", "tiling", "Lambda", "partition_k4", "count_k4"}
    levels = list(csv.DictReader(open(tmp_path / "out" / "whitney_levels.csv")))
    assert sum(int(r["cubes"]) for r in levels) == rep["results"]["audit"]["cubes"]


def test_verify_filter(tmp_path):
    assert _run(tmp_path, "verify", "--filter", "whitney") == 0
    rep = json.loads((tmp_path / "out" / "verify.json").read_text())
    assert {a["group"] for a in rep["audits"]} == {"whitney"}


def test_verify_unknown_group(tmp_path):
    assert _run(tmp_path, "verify", "--filter", "astrology") == 2


def test_verify_tight_tol_fails(tmp_path):
    assert _run(tmp_path, "verify", "--filter", "geometry,frequency", "--tol", "1e-20") == 1
    rep = json.loads((tmp_path / "out" / "verify.json").read_text())
    failed = [a for a in rep["audits"] if not a["passed"]]
    assert failed and all(a["quadrature_limited"] for a in failed)


def test_schema_document_lists_blocks():
    doc = schema_document()
    for key in ("geometry", "field", "experiment", "output"):
        assert key in json.dumps(doc)


def test_default_scenarios_parse():
    for kind in DEFAULT_SCENARIOS:
        assert default_scenario(kind).kind == kind


def test_report_clean_and_csv():
    assert clean({"a": np.float64(math.nan), "b": [np.int64(3), math.inf]}) == {"a": "nan", "b": [3, "inf"]}
    text = to_csv([{"x": 1, "y": [1, 2]}, {"x": 2, "z": True}])
    assert text.splitlines() == ["x,y,z", "1,1 2,", "2,,True"]
    rep = Report("t", {}, 0, 1e-8)
    rep.audit("a", True)
    rep.audit("b", False)
    assert rep.exit_code == 1 and rep.failed == ["b"]
