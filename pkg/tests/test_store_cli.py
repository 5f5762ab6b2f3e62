import csv
import json
import subprocess
import sys

import pytest

from schottky_zeta.cli import main, run
from schottky_zeta.errors import ConfigInvalid, CorruptRecord
from schottky_zeta.store import CACHE_ENV, DEFAULTS, RunCache, RunConfig, RunRecord, cache_dir, cache_lookup


def cfg(tmp_path, **over):
    return RunConfig.build({"out": str(tmp_path / "out"), **over})


def test_defaults_validate_and_merge():
    c = RunConfig.build()
    assert c.data == DEFAULTS
    c = RunConfig.build({"operator": {"K": 12}}, {"operator": {"K": 20}, "group": "cylinder:t=1"})
    # the config file wins over flags, flags over defaults
    assert c["operator"]["K"] == 20 and c["operator"]["K_refined"] == 16
    assert c["group"] == "cylinder:t=1"


@pytest.mark.parametrize("bad,path", [
    ({"operator": {"K": "x"}}, "operator.K"),
    ({"operator": {"K": -1}}, "operator.K"),
    ({"scan": {"rect": [0, 1, 2]}}, "scan.rect"),
    ({"zeta": {"method": "fft"}}, "zeta.method"),
    ({"colour": 1}, "colour"),
    ({"threads": True}, "threads"),
])
def test_schema_errors_carry_field_path(bad, path):
    with pytest.raises(ConfigInvalid) as exc:
        RunConfig.build(file_data=bad)
    assert exc.value.path == path


def test_run_key_ignores_execution_settings():
    a = RunConfig.build({"threads": 1, "out": "a"})
    b = RunConfig.build({"threads": 8, "out": "b"})
    assert a.run_key("dim") == b.run_key("dim")
    assert a.run_key("dim") != a.run_key("tau")
    assert a.run_key("dim") != RunConfig.build({"operator": {"K": 41}}).run_key("dim")


def test_record_roundtrip():
    r = RunRecord("h", "dim", "0.1.0", {"dim.json": "x"}, 1.5, {"a": 1})
    assert RunRecord.from_json(r.to_json()) == r


def test_dim_schema(tmp_path):
    c = cfg(tmp_path)
    rec = run("dim", c, use_cache=False)
    data = json.loads((tmp_path / "out" / "dim.json").read_text())
    assert {"delta", "residual", "K"} <= set(data)
    assert 0 < data["delta"] < 1 and data["K"] == 40 and abs(data["residual"]) <= 1e-8
    man = json.loads((tmp_path / "out" / "dim.manifest.json").read_text())
    assert man["outputs"] == rec.outputs and man["config"] == c.data


def test_scan_rerun_identical_hashes(tmp_path):
    c = cfg(tmp_path, group="cylinder:t=1")
    a = run("scan", c, use_cache=False)
    b = run("scan", c, use_cache=False)
    assert a.outputs == b.outputs
    with open(tmp_path / "out" / "scan.csv") as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == ["re", "im", "multiplicity", "residual", "box_id"]
    assert [int(r["multiplicity"]) for r in rows] == [2, 2, 2]


def test_cache_hit_miss_and_tamper(tmp_path):
    cache = RunCache(tmp_path / "cache")
    c = cfg(tmp_path, group="cylinder:t=1")
    assert cache_lookup(c, "lengths", cache) is None
    first = run("lengths", c, cache=cache)
    second = run("lengths", c, cache=cache)
    assert not first.cached and second.cached
    assert first.outputs == second.outputs and second.wall_time < first.wall_time
    # a different K is a different run
    other = RunConfig.build({**c.data, "operator": {**c["operator"], "K": 30}})
    assert cache_lookup(other, "lengths", cache) is None
    # corrupt the cached copy: the record is evicted and the run recomputed
    key = c.run_key("lengths")
    (cache.entry(key) / "lengths.csv").write_text("tampered\n")
    with pytest.raises(CorruptRecord):
        cache.lookup(key)
    assert not cache.entry(key).exists()
    third = run("lengths", c, cache=cache)
    assert not third.cached and third.outputs == first.outputs


def test_recompute_after_tamper(tmp_path):
    cache = RunCache(tmp_path / "cache")
    c = cfg(tmp_path, group="cylinder:t=1")
    first = run("validate", c, cache=cache)
    key = c.run_key("validate")
    (cache.entry(key) / "validate.json").write_text("{}")
    again = run("validate", c, cache=cache)
    assert not again.cached and again.outputs == first.outputs
    assert cache.lookup(key) is not None


def test_no_cache_flag(tmp_path, monkeypatch):
    monkeypatch.setenv(CACHE_ENV, str(tmp_path / "envcache"))
    assert cache_dir() == tmp_path / "envcache"
    out = str(tmp_path / "out")
    assert main(["validate", "--group", "cylinder:t=1", "--out", out, "--no-cache"]) == 0
    assert not (tmp_path / "envcache").exists()
    assert main(["validate", "--group", "cylinder:t=1", "--out", out]) == 0
    assert any((tmp_path / "envcache").iterdir())


def test_exit_codes(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(CACHE_ENV, str(tmp_path / "cache"))
    out = str(tmp_path / "out")
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"operator": {"K": "many"}}))
    assert main(["dim", "--config", str(bad), "--out", out]) == 2
    assert "operator.K" in capsys.readouterr().err
    # δ = 0 for the cylinder: the τ curve is undefined, a numerical failure
    assert main(["tau", "--group", "cylinder:t=1", "--out", out]) == 1
    assert "NuOutOfRange" in capsys.readouterr().err
    assert main(["zeta", "--group", "cylinder:t=1", "--re", "1", "--out", out]) == 0
    z = json.loads((tmp_path / "out" / "zeta.json").read_text())
    assert z["method"] == "det" and z["s"] == [1.0, 0.0]


def test_flags_reach_pipelines(tmp_path):
    out = tmp_path / "out"
    assert main(["count", "--group", "cylinder:t=1", "--sigma", "-0.3", "--T", "4", "7",
                 "--out", str(out), "--no-cache"]) == 0
    with open(out / "count.csv") as f:
        rows = list(csv.DictReader(f))
    assert [(r["T"], r["N"], r["M"]) for r in rows] == [("4", "4", "2"), ("7", "6", "2")]


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "schottky_zeta.cli", "validate", "--group", "cylinder:t=1",
                          "--out", str(tmp_path / "o"), "--no-cache"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip().endswith("validate.json")
    res = subprocess.run([sys.executable, "-m", "schottky_zeta.cli"], capture_output=True, text=True)
    assert res.returncode == 2


def test_operator_settings_reach_evaluator(tmp_path):
    covers = []
    for above in (10.0, 20.0):
        c = cfg(tmp_path, zeta={"re": 0.4, "im": 12.0}, operator={"refine_above": above})
        run("zeta", c, use_cache=False)
        covers.append(json.loads((tmp_path / "out" / "zeta.json").read_text())["truncation"]["cover"])
    assert covers == ["refined", "coarse"]
