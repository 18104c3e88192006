import csv
import json

import pytest

from subroute.cli import main


@pytest.fixture(scope="module")
def traces(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert main(["generate", "--seed", "3", "--n", "40", "--branch-depth", "4", "--out", str(out)]) == 0
    return out / "traces.jsonl"


def test_generate_requires_seed(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["generate", "--out", str(tmp_path)])
    assert info.value.code == 2


def test_generate_is_deterministic(traces, tmp_path):
    assert main(["generate", "--seed", "3", "--n", "40", "--branch-depth", "4", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "traces.jsonl").read_bytes() == traces.read_bytes()


def test_route_writes_log_and_executions(traces, tmp_path):
    assert main(["route", "--traces", str(traces), "--out", str(tmp_path)]) == 0
    log = [json.loads(l) for l in (tmp_path / "routing_log.jsonl").read_text().splitlines()]
    execs = [json.loads(l) for l in (tmp_path / "executions.jsonl").read_text().splitlines()]
    assert len(execs) == 40
    assert {r["request_id"] for r in log} == {e["request_id"] for e in execs}
    assert all(r["stage"] in {"URC", "SSE", "SLE", "CD", "SD", "FALLBACK_LLM"} for r in log)


def test_route_with_config_and_threshold(traces, tmp_path):
    cfg = tmp_path / "router.cfg"
    cfg.write_text("[router]\nuse_sd = false\n")
    assert main(["route", "--traces", str(traces), "--config", str(cfg), "--threshold", "0.9",
                 "--out", str(tmp_path / "o")]) == 0
    log = (tmp_path / "o" / "routing_log.jsonl").read_text()
    assert '"stage": "SD"' not in log
    cfg.write_text("[router]\nnope = 1\n")
    assert main(["route", "--traces", str(traces), "--config", str(cfg), "--out", str(tmp_path / "p")]) == 2


def test_evaluate_reports(traces, tmp_path):
    assert main(["evaluate", "--traces", str(traces), "--policies", "ALL_SLM,ALL_LLM,HERA",
                 "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "reports.csv").open()))
    assert [r["policy"] for r in rows] == ["ALL_SLM", "ALL_LLM", "HERA"]
    assert float(rows[0]["slm_usage"]) == 1.0 and float(rows[0]["cost_usd"]) == 0.0
    assert main(["evaluate", "--traces", str(traces), "--policies", "BOGUS", "--out", str(tmp_path)]) == 2


def test_oracle_cpt_slprofile(traces, tmp_path):
    assert main(["oracle", "--traces", str(traces), "--out", str(tmp_path)]) == 0
    assert len((tmp_path / "oracle.jsonl").read_text().splitlines()) == 40
    assert main(["cpt", "--traces", str(traces), "--out", str(tmp_path)]) == 0
    header = (tmp_path / "cpt.csv").read_text().splitlines()[0]
    assert header == "dataset,method,cpt50,cpt70,cpt90"
    assert main(["slprofile", "--traces", str(traces), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "slprofile.csv").read_text().startswith("seq_id,group,")


def test_run_spec(tmp_path):
    spec = tmp_path / "spec.cfg"
    spec.write_text("[experiment]\nname = cli\nseeds = 4\n\n[workload]\nn_requests = 20\n")
    assert main(["run", str(spec), "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "reports.csv").exists()
    spec.write_text("[experiment]\nwhat = 1\n")
    assert main(["run", str(spec), "--out", str(tmp_path / "out")]) == 2


def test_exit_codes_for_bad_inputs(tmp_path):
    assert main(["route", "--traces", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path)]) == 3
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"request_id": "x"}\n')
    assert main(["route", "--traces", str(bad), "--out", str(tmp_path)]) == 2
