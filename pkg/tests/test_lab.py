import csv
import json
import math

import pytest

from oplab.errors import UnknownScenario
from oplab.lab import (
    PASSING,
    SCENARIOS,
    _clean,
    get_scenario,
    list_scenarios,
    richardson,
    run_all,
    run_scenario,
)

SMALL = {"radial": [50, 100, 200], "grid2d": [16, 32]}


def small_levels(sid):
    return [125, 250, 500] if sid == "orsina" else SMALL[SCENARIOS[sid].kind]


def test_registry():
    rows = list_scenarios()
    ids = [r["id"] for r in rows]
    assert len(ids) >= 11 and len(set(ids)) == len(ids)
    for r in rows:
        assert r["anchor"] and r["claim"] and r["levels"]
    for expected in ("nomosco", "controllo", "menodelta", "orsina", "dasotto", "h1-stability",
                     "w1q-counterexample", "rhoenne", "lostesso", "uniforme", "mu-k-sequence"):
        assert expected in ids


def test_unknown_scenario():
    with pytest.raises(UnknownScenario):
        get_scenario("nope")
    with pytest.raises(UnknownScenario):
        run_scenario("nope")


def test_richardson_geometric():
    hs = [0.1, 0.05, 0.025]
    vals = [2.0 + 3.0 * h**1.5 for h in hs]
    r = richardson(hs, vals)
    assert r["rule"] == "richardson-last-three"
    assert r["order"] == pytest.approx(1.5, rel=1e-10)
    assert r["limit"] == pytest.approx(2.0, rel=1e-10)


def test_richardson_fallbacks():
    assert richardson([1, 0.5], [1.0, 2.0]) == {"limit": 2.0, "order": None, "rule": "last-value"}
    assert richardson([1, 0.5, 0.25], [1.0, 2.0, 1.5])["rule"] == "last-value"
    assert richardson([1, 0.5, 0.25], [1.0, 1.0, 1.0])["rule"] == "last-value"


def test_clean_non_finite():
    out = _clean({"a": float("inf"), "b": [float("-inf"), 1.0], "c": (1, 2)})
    assert out == {"a": "inf", "b": ["-inf", 1.0], "c": [1, 2]}
    json.dumps(out, allow_nan=False)


@pytest.mark.parametrize("sid", sorted(SCENARIOS))
def test_scenario_small_levels(sid):
    rep = run_scenario(sid, levels=small_levels(sid))
    assert rep["scenario"] == sid
    assert rep["config"]["levels"] == sorted(small_levels(sid))
    assert rep["verdict"] in (SCENARIOS[sid].success, "fail")
    inv = [c for c in rep["checks"] if c["name"] == "invariant suite"]
    assert inv and inv[0]["passed"], inv
    assert rep["tables"] and rep["checks"]
    json.dumps(rep, allow_nan=False)


def test_outputs_written(tmp_path):
    rep = run_scenario("nomosco", levels=[50, 100, 200], out=tmp_path)
    files = {p.name for p in tmp_path.iterdir()}
    assert {"report.json", "trace.csv", "timing.json"} <= files
    on_disk = json.loads((tmp_path / "report.json").read_text())
    assert "runtime_s" not in on_disk and rep["runtime_s"] >= 0
    assert on_disk["verdict"] == "instability-confirmed"
    rows = list(csv.reader(open(tmp_path / "trace.csv")))
    assert rows[0] == ["level", "quantity", "value"]
    assert all(math.isfinite(float(r[2])) for r in rows[1:])


@pytest.mark.parametrize("sid", ["menodelta", "dasotto"])
def test_report_reproducible_from_config(tmp_path, sid):
    run_scenario(sid, levels=small_levels(sid), out=tmp_path / "a")
    first = json.loads((tmp_path / "a" / "report.json").read_text())
    (tmp_path / "cfg.json").write_text(json.dumps(first["config"]))
    cfg = json.loads((tmp_path / "cfg.json").read_text())
    run_scenario(sid, out=tmp_path / "b", config=cfg)
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_config_params_override():
    rep = run_scenario("nomosco", config={"levels": [50, 100, 200], "params": {"n": 3}})
    assert rep["config"]["params"]["n"] == 3


def test_run_all_order_independent(tmp_path):
    ids = ["nomosco", "lostesso", "menodelta"]
    levels = None
    a = run_all(levels=levels, out=tmp_path / "serial", threads=1, ids=ids)
    b = run_all(levels=levels, out=tmp_path / "threaded", threads=3, ids=ids[::-1])
    assert a["scenarios"] == b["scenarios"]
    summary = json.loads((tmp_path / "serial" / "summary.json").read_text())
    assert set(summary["scenarios"]) == set(ids)
    assert summary["all_passed"] == all(v["verdict"] in PASSING for v in summary["scenarios"].values())
    for i in ids:
        assert (tmp_path / "serial" / i / "report.json").read_bytes() == \
            (tmp_path / "threaded" / i / "report.json").read_bytes()
