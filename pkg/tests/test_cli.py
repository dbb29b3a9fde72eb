import json
import socket
import subprocess
import sys
import time
from datetime import datetime, timezone

import pytest

from builders import two_component
from eetwin.casestudy import data_path
from eetwin.cli import EXIT_CODES, main
from eetwin.document import dumps, save_model
from eetwin.sdtm import replace_component
from eetwin.store import TwinStore

T0 = datetime(2025, 1, 1, tzinfo=timezone.utc)


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def model_file(tmp_path, case_study):
    p = tmp_path / "model.json"
    save_model(case_study, p)
    return p


@pytest.fixture
def filled_store(tmp_path, case_study):
    root = tmp_path / "store"
    with TwinStore(root) as s:
        s.commit(case_study, T0)
        for k, v in enumerate((10.0, 12.0, 11.0)):
            s.record("motor", "speed", v, T0.replace(second=k + 1))
    return root


def test_exit_code_catalog_is_fixed():
    assert sorted(EXIT_CODES) == [0, 1, 2, 3, 4, 64, 65, 66, 69, 73]


def test_import(capsys, tmp_path):
    out = tmp_path / "m.json"
    code, _, _ = run_cli(capsys, "import", data_path("motor_control.diagram.json"), "--id", "mc", "-o", out)
    assert code == 0
    doc = json.loads(out.read_text())
    assert len(doc["componentPackages"][0]["components"]) == 5


def test_import_errors(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"blocks": [{"id": "a"}]}')
    assert run_cli(capsys, "import", bad)[0] == 2
    assert run_cli(capsys, "import", tmp_path / "absent.json")[0] == 66


def test_validate(capsys, model_file, tmp_path, case_study):
    assert run_cli(capsys, "validate", "--model", model_file)[0] == 0
    bad = tmp_path / "bad.json"
    bad.write_text(dumps(replace_component(case_study, "pid", safety_integrity_level=7)))
    code, out, _ = run_cli(capsys, "--format", "structured", "validate", "--model", bad)
    assert code == 2 and json.loads(out)[0]["rule"] == "sil-range"
    assert run_cli(capsys, "validate", "--model", tmp_path / "nope.json")[0] == 66


def test_fmea_graph_two_component(capsys, tmp_path):
    model = tmp_path / "two.json"
    save_model(two_component(), model)
    code, out, _ = run_cli(capsys, "fmea", "--model", model, "--format", "structured")
    assert code == 0 and json.loads(out)["spfm"] == pytest.approx(0.45, abs=1e-12)
    reqs = tmp_path / "r.json"
    reqs.write_text(json.dumps({"requirements": [{"target": "two", "threshold": 0.9}]}))
    prefix = tmp_path / "report"
    code, out, _ = run_cli(capsys, "fmea", "--model", model, "--requirements", reqs, "-o", prefix)
    assert code == 3 and "FAIL two" in out
    assert json.loads((tmp_path / "report.json").read_text())["requirements"][0]["passed"] is False
    assert "SPFM" in (tmp_path / "report.txt").read_text()


def test_fmea_sim_case_study(capsys, model_file):
    code, out, _ = run_cli(capsys, "fmea", "--model", model_file, "--table", data_path("reliability.csv"),
                           "--mode", "sim", "--requirements", data_path("requirements.json"),
                           "--format", "structured")
    doc = json.loads(out)
    assert code == 0 and doc["method"] == "sim"
    assert all(r["passed"] for r in doc["requirements"])


def test_simulate(capsys, tmp_path):
    out = tmp_path / "t.csv"
    code, text, _ = run_cli(capsys, "simulate", "--format", "structured", "-o", out)
    assert code == 0 and json.loads(text)["steadyStateError"] <= 0.02
    assert out.read_text().startswith("t,omega,omega_f,i,duty")
    code, text, _ = run_cli(capsys, "simulate", "--fault", "driveGain=0", "--duration", "2")
    assert code == 0 and "classification: hazardous" in text
    assert run_cli(capsys, "simulate", "--fault", "bogus=1")[0] == 64
    assert run_cli(capsys, "simulate", "--fault", "driveGain")[0] == 64


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["fmea"])
    assert exc.value.code == 64
    with pytest.raises(SystemExit) as exc:
        main(["nope"])
    assert exc.value.code == 64


def test_query(capsys, filled_store, monkeypatch):
    code, out, _ = run_cli(capsys, "query", "motor", "speed", "--store", filled_store,
                           "--from", "2025-01-01T00:00:01Z", "--to", "2025-01-01T00:00:02Z")
    assert code == 0
    assert out.splitlines() == ["2025-01-01T00:00:01.000Z,10.0", "2025-01-01T00:00:02.000Z,12.0"]
    code, out, _ = run_cli(capsys, "query", "motor", "speed", "--store", filled_store,
                           "--from", "2025-01-01T00:00:05Z", "--to", "2025-01-01T00:00:09Z")
    assert code == 0 and out == ""
    assert run_cli(capsys, "query", "ghost", "x", "--store", filled_store)[0] == 65
    assert run_cli(capsys, "query", "motor", "speed", "--store", filled_store / "missing")[0] == 66
    assert run_cli(capsys, "query", "motor", "speed", "--store", filled_store, "--from", "soon")[0] == 64
    monkeypatch.setenv("TWIN_STORE", str(filled_store))
    code, out, _ = run_cli(capsys, "--format", "structured", "query", "motor", "speed", "--store", "/elsewhere")
    assert code == 0 and [v for _, v in json.loads(out)["samples"]] == [10.0, 12.0, 11.0]


def test_codegen(capsys, model_file, tmp_path):
    code, _, _ = run_cli(capsys, "codegen", "--model", model_file, "-o", tmp_path / "m.json",
                         "--stubs", tmp_path / "s.txt")
    assert code == 0
    assert [c["component"] for c in json.loads((tmp_path / "m.json").read_text())["components"]] == ["motor", "filter"]
    assert run_cli(capsys, "codegen", "--model", model_file, "-o", tmp_path / "no" / "m.json")[0] == 73


def test_diff_and_merge(capsys, tmp_path, case_study):
    base, a, b, c = (tmp_path / f"{n}.json" for n in "abcd")
    save_model(case_study, base)
    save_model(replace_component(case_study, "motor", fit=1.0), a)
    save_model(replace_component(case_study, "pid", fit=2.0), b)
    save_model(replace_component(case_study, "motor", fit=3.0), c)
    code, out, _ = run_cli(capsys, "diff", base, a)
    assert code == 0 and out.strip() == "~ motor.fit: 120.0 -> 1.0"
    code, out, _ = run_cli(capsys, "diff", base, base)
    assert out.strip() == "no differences"
    merged = tmp_path / "m.json"
    assert run_cli(capsys, "merge", base, a, b, "-o", merged)[0] == 0
    assert "motor" in merged.read_text()
    code, out, _ = run_cli(capsys, "merge", base, a, c)
    assert code == 4 and "conflict motor.fit" in out


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_plant_without_twin(capsys):
    code, _, err = run_cli(capsys, "plant", "--twin", f"127.0.0.1:{_free_port()}", "--plant-bind", "127.0.0.1:0",
                           "--attempts", "2", "--duration", "0.1")
    assert code == 69 and "unreachable" in err


def test_serve_bind_conflict(capsys, model_file, tmp_path):
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        s.listen()
        port = s.getsockname()[1]
        code, _, _ = run_cli(capsys, "serve", "--model", model_file, "--store", tmp_path / "st",
                             "--bind", f"127.0.0.1:{port}", "--duration", "0.1")
    assert code == 69


def test_serve_and_plant_processes(tmp_path, model_file):
    twin_port, plant_port = _free_port(), _free_port()
    store = tmp_path / "store"
    serve = subprocess.Popen([sys.executable, "-m", "eetwin.cli", "--format", "structured", "serve",
                              "--model", str(model_file), "--store", str(store),
                              "--bind", f"127.0.0.1:{twin_port}", "--plant", f"127.0.0.1:{plant_port}",
                              "--duration", "8"], stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    try:
        time.sleep(1.0)
        plant = subprocess.run([sys.executable, "-m", "eetwin.cli", "--format", "structured", "plant",
                                "--twin", f"127.0.0.1:{twin_port}", "--plant-bind", f"127.0.0.1:{plant_port}",
                                "--duration", "3", "--time-scale", "5", "--fault-at", "1@setpoint=4"],
                               capture_output=True, text=True, timeout=30)
        assert plant.returncode == 0, plant.stderr
        summary = json.loads(plant.stdout)
        assert summary["halted"] is True
        out, err = serve.communicate(timeout=30)
    finally:
        serve.kill()
    assert serve.returncode == 0, err
    doc = json.loads(out)
    assert [d["component"] for d in doc["directives"]] == ["filter"]
    assert doc["directives"][0]["acknowledged"] is True
    assert doc["counters"]["accepted"] == summary["samplesSent"]
