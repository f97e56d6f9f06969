import json
import subprocess
import sys

import pytest

from driftwalk.cli import emit_plotdata, main, resolve
from driftwalk.exceptions import ConfigError, SchemaMismatch


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_generate_twice_identical(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        code, _, _ = run(["generate", "--kind", "plaquette_iid", "--d", 2, "--L", 16, "--seed", 1,
                          "--out", p], capsys)
        assert code == 0
    assert a.read_bytes() == b.read_bytes()
    ma = json.loads((tmp_path / "a.json.manifest.json").read_text())
    assert ma["seed"] == 1 and ma["config"]["L"] == 16 and len(ma["config_hash"]) == 64


def test_malformed_config_names_key(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[generate]\nL = sixteen\n")
    code, _, err = run(["generate", "--config", cfg, "--out", tmp_path / "e.json"], capsys)
    assert code == 2
    doc = json.loads(err)
    assert doc["key"] == "generate.L" and doc["error"] == "ConfigError"


def test_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[generate]\nLength = 8\n")
    code, _, err = run(["generate", "--config", cfg], capsys)
    assert code == 2 and json.loads(err)["key"] == "generate.Length"


def test_flags_override_file(tmp_path):
    cfg = resolve("generate", {"L": "8", "seed": "3"}, {"L": "12"})
    assert cfg["L"] == 12 and cfg["seed"] == 3
    with pytest.raises(ConfigError):
        resolve("simulate", {"samples": "many"})


def test_validation_failure_exit_code(tmp_path, capsys):
    bad = tmp_path / "div.json"
    bad.write_text(json.dumps({"dims": {"d": 2, "L": 4}, "kind": "drift",
                               "data": ["0.5"] + ["0.0"] * 31}))
    code, _, err = run(["corrector", "--env", bad, "--out", tmp_path / "c.json"], capsys)
    assert code == 2 and json.loads(err)["error"] == "ValidationError"


def test_generator_error_exit_code(tmp_path, capsys):
    code, _, err = run(["generate", "--kind", "manhattan", "--L", 5, "--out", tmp_path / "m.json"], capsys)
    assert code == 2 and json.loads(err)["error"] == "UnbalancedTorus"


def test_missing_file_is_runtime_error(tmp_path, capsys):
    code, _, _ = run(["hminus", "--env", tmp_path / "none.json", "--out", tmp_path / "r.json"], capsys)
    assert code == 3


def test_pipeline_demo(tmp_path, capsys):
    code, out, _ = run(["pipeline", "--outdir", tmp_path / "run"], capsys)
    assert code == 0
    result = json.loads(out)
    assert result["bound_check"]["passed"]
    assert [s["command"] for s in result["stages"]] == ["generate", "hminus", "corrector", "simulate", "analyze"]
    code, _, _ = run(["replay", tmp_path / "run" / "endpoints.csv.manifest.json", "--workers", 2], capsys)
    assert code == 0


def test_simulate_decomposition_columns(tmp_path, capsys):
    env = tmp_path / "env.json"
    run(["generate", "--L", 8, "--out", env], capsys)
    out = tmp_path / "ep.csv"
    code, _, _ = run(["simulate", "--env", env, "--T", 5, "--samples", 20, "--record", "decomposition",
                      "--out", out], capsys)
    assert code == 0
    header = out.read_text().splitlines()[0]
    assert header == "sample_index,x_1,x_2,jump_count,y_1,y_2,z_1,z_2"


def test_analyze_needs_horizon(tmp_path, capsys):
    ep = tmp_path / "ep.csv"
    ep.write_text("sample_index,x_1,x_2,jump_count\n" + "".join(f"{i},0,0,0\n" for i in range(1000)))
    code, _, err = run(["analyze", "--endpoints", ep, "--out", tmp_path / "d.json"], capsys)
    assert code == 2 and json.loads(err)["key"] == "analyze.T"


def test_kvdiag_and_heatkernel(tmp_path, capsys):
    env = tmp_path / "env.json"
    run(["generate", "--L", 8, "--out", env], capsys)
    kv = tmp_path / "kv.csv"
    assert run(["kvdiag", "--env", env, "--lambda-grid", "1e-1:1e-3", "--out", kv], capsys)[0] == 0
    assert len(kv.read_text().splitlines()) == 1 + 3 * 2
    hk = tmp_path / "hk.csv"
    assert run(["heatkernel", "--env", env, "--nmax", 4, "--out", hk], capsys)[0] == 0
    assert hk.read_text().splitlines()[0] == "n,sup_p,sup_times_n_half_d"
    code, _, err = run(["heatkernel", "--env", env, "--nmax", 50], capsys)
    assert code == 2 and json.loads(err)["error"] == "HorizonTooLong"
    iso = tmp_path / "iso.json"
    assert run(["isoperimetry", "--env", env, "--sets", 5, "--out", iso], capsys)[0] == 0
    rows = json.loads(iso.read_text())["rows"]
    assert all(r["Q"] == r["boundary"] / 8 for r in rows)


def test_plotdata_tables():
    kind, header, rows = emit_plotdata({"report": "analyze", "msd_curve": [[10.0, 4.1, 0.1]]})
    assert header == ["T", "msd_over_t", "se"] and rows == [(10.0, 4.1, 0.1)]
    _, header, rows = emit_plotdata({"report": "heatkernel", "rows": []})
    assert header == ["n", "sup_p", "sup_times_n_half_d"] and rows == []
    with pytest.raises(SchemaMismatch):
        emit_plotdata({"something": 1})


def test_plotdata_empty_report_header_only(tmp_path, capsys):
    rep = tmp_path / "empty.json"
    rep.write_text("{}")
    out = tmp_path / "p.csv"
    assert run(["plotdata", "--report", rep, "--kind", "heatkernel", "--out", out], capsys)[0] == 0
    assert out.read_text() == "n,sup_p,sup_times_n_half_d\n"
    code, _, err = run(["plotdata", "--report", rep, "--out", out], capsys)
    assert code == 2 and json.loads(err)["error"] == "SchemaMismatch"


def test_plotdata_svg(tmp_path, capsys):
    pytest.importorskip("matplotlib")
    rep = tmp_path / "hk.json"
    rep.write_text(json.dumps({"report": "heatkernel", "rows": [[1, 0.5, 0.5], [2, 0.4, 0.8]]}))
    svg = tmp_path / "hk.svg"
    assert run(["plotdata", "--report", rep, "--svg", svg, "--out", tmp_path / "hk.csv"], capsys)[0] == 0
    first = svg.read_bytes()
    run(["plotdata", "--report", rep, "--svg", svg, "--out", tmp_path / "hk.csv"], capsys)
    assert svg.read_bytes() == first


def test_console_script(tmp_path):
    out = subprocess.run([sys.executable, "-m", "driftwalk.cli", "generate", "--L", "4",
                          "--out", str(tmp_path / "e.json")], capture_output=True, text=True)
    assert out.returncode == 0 and json.loads(out.stdout)["command"] == "generate"
