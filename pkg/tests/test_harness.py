import json
import statistics

import pytest

from subroute.domain import validate_trace
from subroute.harness.experiment import EXIT_IO, EXIT_OK, EXIT_SPEC, SpecError, parse_spec, run_experiment
from subroute.harness.generator import GeneratorConfig, generate_workload, synthetic_workload
from subroute.harness.io import TraceFileError, load_workload, read_traces, write_traces
from subroute.similarity import is_similar

from builders import make_trace
from conftest import calibrated_workload


def test_generator_is_deterministic(tmp_path):
    cfg = GeneratorConfig(seed=11, n_requests=30)
    write_traces(tmp_path / "a.jsonl", generate_workload(cfg, branch_depth=4))
    write_traces(tmp_path / "b.jsonl", generate_workload(cfg, branch_depth=4))
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_generated_traces_validate_and_round_trip(tmp_path):
    traces = generate_workload(GeneratorConfig(seed=5, n_requests=50), branch_depth=3)
    for t in traces:
        validate_trace(t)
    write_traces(tmp_path / "t.jsonl", traces)
    assert read_traces(tmp_path / "t.jsonl") == traces


def test_mean_path_lengths_hit_targets():
    traces = calibrated_workload(1).traces()
    llm = [len(t.llm_path) for t in traces]
    slm = [len(t.slm_path) for t in traces]
    assert abs(statistics.fmean(llm) - 5.8) <= 0.15
    # within 3 standard errors of the SLM target too
    se = statistics.stdev(slm) / len(slm) ** 0.5
    assert abs(statistics.fmean(slm) - 6.9) <= 3 * se


def test_zero_matched_fraction_gives_dissimilar_finals():
    for t in generate_workload(GeneratorConfig(seed=3, n_requests=200, matched_final_fraction=0.0)):
        assert not is_similar(t.slm_final, t.llm_final, 0.7)


def test_generator_config_validation():
    with pytest.raises(ValueError):
        GeneratorConfig(seed=0, llm_len_mean=7, slm_len_mean=6)
    with pytest.raises(ValueError):
        GeneratorConfig(seed=0, matched_final_fraction=1.5)
    with pytest.raises(ValueError):
        GeneratorConfig(seed=0, vocab_size=400)


def test_replayed_traces_match_generator_world():
    wl = synthetic_workload(GeneratorConfig(seed=9, n_requests=40))
    from subroute.harness.io import TraceWorkload
    from subroute.evaluation.policies import Policy, run_policy

    replay = TraceWorkload(wl.traces(branch_depth=15))
    for p in (Policy.all_slm(), Policy.all_llm(), Policy.hera()):
        a = run_policy(p, wl.suite(), wl.world(), wl.requests)
        b = run_policy(p, replay.suite(), replay.world(), replay.requests)
        assert a == b


# trace files

def _write_lines(path, lines):
    path.write_text("".join(l + "\n" for l in lines), encoding="utf-8")


def test_read_traces_reports_line_numbers(tmp_path):
    good = make_trace(["a"], ["b"], rid="x").to_json()
    f = tmp_path / "t.jsonl"
    _write_lines(f, [good, "{oops"])
    with pytest.raises(TraceFileError, match=r"t.jsonl:2: invalid JSON"):
        read_traces(f)
    _write_lines(f, [good, "", good])
    with pytest.raises(TraceFileError, match=r":3: duplicate request_id"):
        read_traces(f)
    bad = json.loads(good)
    bad["llm_path"] = []
    _write_lines(f, [json.dumps(bad)])
    with pytest.raises(TraceFileError, match="empty path"):
        read_traces(f)
    with pytest.raises(OSError):
        read_traces(tmp_path / "missing.jsonl")


def test_plain_string_paths_accepted(tmp_path):
    f = tmp_path / "t.jsonl"
    rec = {"request_id": "q", "request_text": "t", "ground_truth": None, "slm_path": ["s1", "s2"],
           "llm_path": ["l1"], "slm_final": "x", "llm_final": "y", "mixed_branches": {}}
    _write_lines(f, [json.dumps(rec)])
    wl = load_workload(f)
    assert [s.content for s in wl.traces[0].slm_path] == ["s1", "s2"]


# experiments

SPEC = """\
[experiment]
name = tiny
seeds = 1, 2

[workload]
source = generator
n_requests = 40

[policies]
list = ALL_SLM, ALL_LLM, HERA

[sweep]
hera_thresholds = 0.6, 0.8
classifier_thresholds = 0.6, 0.8
random_p_llm = 0.2, 0.8

[oracle]
enabled = true
"""


def test_experiment_outputs(tmp_path):
    spec = tmp_path / "spec.cfg"
    spec.write_text(SPEC)
    res = run_experiment(spec, tmp_path / "out")
    assert res.exit_code == EXIT_OK
    out = tmp_path / "out"
    for name in ("reports.json", "reports.csv", "cpt.csv", "incorrect_assignment.csv",
                 "synthetic-seed1/slprofile.csv", "synthetic-seed1/routing_log.jsonl"):
        assert (out / name).exists(), name
    rows = json.loads((out / "reports.json").read_text())
    main = [r for r in rows if r["workload"] == "synthetic-seed1" and r["policy"] in ("ALL_SLM", "ALL_LLM", "HERA")]
    assert len(main) == 3


def test_experiment_from_trace_file(tmp_path):
    write_traces(tmp_path / "mine.jsonl", generate_workload(GeneratorConfig(seed=2, n_requests=20), 4))
    spec = tmp_path / "spec.cfg"
    spec.write_text(f"[workload]\nsource = file\npath = {tmp_path / 'mine.jsonl'}\n")
    res = run_experiment(spec, tmp_path / "out")
    assert res.exit_code == EXIT_OK
    assert (tmp_path / "out" / "mine" / "routing_log.jsonl").exists()


@pytest.mark.parametrize("text,line", [
    ("[experiment]\nname = x\nbogus = 1\n", 3),
    ("[nosuch]\nkey = 1\n", 1),
    ("[policies]\nlist = ALL_SLM, WHAT\n", 2),
    ("[router]\nurc_threshold = abc\n", 2),
    ("[predictor]\nmode = remote\n", 2),
])
def test_spec_errors_carry_line_numbers(tmp_path, text, line):
    spec = tmp_path / "spec.cfg"
    spec.write_text(text)
    with pytest.raises(SpecError) as info:
        parse_spec(spec)
    assert info.value.line == line
    assert run_experiment(spec, tmp_path / "o").exit_code == EXIT_SPEC


def test_missing_files_are_io_errors(tmp_path):
    assert run_experiment(tmp_path / "absent.cfg", tmp_path / "o").exit_code == EXIT_IO
    spec = tmp_path / "spec.cfg"
    spec.write_text(f"[workload]\nsource = file\npath = {tmp_path / 'none.jsonl'}\n")
    assert run_experiment(spec, tmp_path / "o").exit_code == EXIT_IO


def test_bad_trace_data_is_spec_error(tmp_path):
    (tmp_path / "bad.jsonl").write_text("{not json\n")
    spec = tmp_path / "spec.cfg"
    spec.write_text(f"[workload]\nsource = file\npath = {tmp_path / 'bad.jsonl'}\n")
    res = run_experiment(spec, tmp_path / "o")
    assert res.exit_code == EXIT_SPEC and "bad.jsonl:1" in res.message
