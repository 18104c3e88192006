"""Command-line interface.

Subcommands: generate, route, evaluate, oracle, cpt, slprofile, run, serve.
Every artifact goes under ``--out DIR``. Exit codes: 0 success, 2 bad
spec/arguments/input data, 3 I/O error.
"""
from __future__ import annotations

import argparse
import io
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import httpx

from .harness.experiment import (
    EXIT_IO,
    EXIT_OK,
    EXIT_SPEC,
    SpecError,
    reports_csv,
    reports_json,
    run_experiment,
)
from .harness.generator import GeneratorConfig, synthetic_workload
from .harness.io import TraceFileError, load_workload, write_traces
from .router import RouterConfig, load_router_config, route_request, write_routing_log


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _router_config(args) -> RouterConfig:
    cfg = load_router_config(args.config) if args.config else RouterConfig()
    if getattr(args, "threshold", None) is not None:
        cfg = cfg.with_threshold(args.threshold)
    return cfg


def cmd_generate(args) -> int:
    cfg = GeneratorConfig(
        seed=args.seed,
        n_requests=args.n,
        llm_len_mean=args.llm_len_mean,
        slm_len_mean=args.slm_len_mean,
        matched_final_fraction=args.matched_final_fraction,
    )
    wl = synthetic_workload(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_traces(out / "traces.jsonl", wl.traces(args.branch_depth))
    print(f"wrote {cfg.n_requests} traces to {out / 'traces.jsonl'}")
    return EXIT_OK


def _execution_record(ex) -> dict:
    return {
        "request_id": ex.request_id,
        "assignment": ex.assignment.bits() if ex.assignment else "",
        "slm_usage": ex.slm_usage,
        "final_output": ex.final_output,
        "finished": ex.finished,
        "error": ex.error,
    }


def cmd_route(args) -> int:
    cfg = _router_config(args)
    out = Path(args.out)
    if args.server:
        from .service.schemas import config_to_payload

        traces = [json.loads(line) for line in Path(args.traces).read_text(encoding="utf-8").splitlines() if line.strip()]
        try:
            resp = httpx.post(args.server.rstrip("/") + "/route",
                              json={"traces": traces, "config": config_to_payload(cfg)}, timeout=args.timeout)
        except httpx.HTTPError as exc:
            print(f"error: cannot reach {args.server}: {exc}", file=sys.stderr)
            return EXIT_IO
        if resp.status_code != 200:
            print(f"error: server answered {resp.status_code}: {resp.text}", file=sys.stderr)
            return EXIT_SPEC
        body = resp.json()
        log_lines = [json.dumps(d, sort_keys=True) for ex in body["executions"] for d in ex["decisions"]]
        records = [{k: ex[k] for k in ("request_id", "assignment", "slm_usage", "final_output", "finished", "error")}
                   for ex in body["executions"]]
        _write(out / "routing_log.jsonl", "".join(l + "\n" for l in log_lines))
    else:
        wl = load_workload(args.traces)
        world, suite = wl.world(), wl.suite()
        execs = [route_request(cfg, suite, world, r) for r in wl.requests]
        buf = io.StringIO()
        write_routing_log(execs, buf)
        _write(out / "routing_log.jsonl", buf.getvalue())
        records = [_execution_record(ex) for ex in execs]
    _write(out / "executions.jsonl", "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    print(f"routed {len(records)} requests into {out}")
    return EXIT_OK


def _judge(args):
    from .evaluation.policies import Judge, JudgeMode

    return Judge(JudgeMode(args.judge), args.judge_threshold)


def cmd_evaluate(args) -> int:
    from .evaluation.policies import evaluate_policy, parse_policy

    cfg = _router_config(args)
    wl = load_workload(args.traces)
    world, suite = wl.world(), wl.suite(args.noise, args.noise_seed)
    name = Path(args.traces).stem
    reports = []
    for text in args.policies.split(","):
        policy = parse_policy(text.strip(), cfg, args.random_seed)
        reports.append(evaluate_policy(policy, suite, world, wl.requests, judge=_judge(args),
                                       workload_name=name).report)
    out = Path(args.out)
    _write(out / "reports.json", reports_json(reports))
    _write(out / "reports.csv", reports_csv(reports))
    sys.stdout.write(reports_csv(reports))
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .evaluation.oracle import oracle_workload
    from .evaluation.policies import Policy, evaluate_policy

    wl = load_workload(args.traces)
    world = wl.world()
    judge = _judge(args)
    name = Path(args.traces).stem
    base = evaluate_policy(Policy.all_llm(), wl.suite(), world, wl.requests, judge=judge, workload_name=name)
    ow = oracle_workload(world, wl.requests, base.report.accuracy, args.floor_frac, judge, args.cap, args.beam,
                         workload_name=name)
    lines = []
    for r, a, ok, approx in zip(wl.requests, ow.assignments, ow.correct, ow.approximate):
        lines.append(json.dumps({"request_id": r.id, "assignment": a.bits(), "correct": ok,
                                 "approximate": approx}, sort_keys=True))
    out = Path(args.out)
    _write(out / "oracle.jsonl", "".join(l + "\n" for l in lines))
    _write(out / "oracle_report.json", reports_json([ow.report]))
    print(f"oracle: accuracy {ow.report.accuracy:.4f}, slm_usage {ow.report.slm_usage:.4f}, "
          f"floor {ow.floor:.4f} ({'met' if ow.floor_met else 'unreachable'})")
    return EXIT_OK


def cmd_cpt(args) -> int:
    from .evaluation.cpt import CptCurve, cpt_csv, cpt_rows
    from .evaluation.policies import Policy, run_policy

    cfg = _router_config(args)
    wl = load_workload(args.traces)
    world, suite = wl.world(), wl.suite()
    judge = _judge(args)

    def run(p):
        return run_policy(p, suite, world, wl.requests, judge=judge)

    low, high = run(Policy.all_slm()).accuracy, run(Policy.all_llm()).accuracy
    curves = {}
    if args.hera_thresholds:
        curves["HERA"] = CptCurve.from_reports([run(Policy.hera(cfg.with_threshold(t))) for t in _floats(args.hera_thresholds)], low, high)
    if args.classifier_thresholds:
        curves["CLASSIFIER"] = CptCurve.from_reports([run(Policy.classifier(t)) for t in _floats(args.classifier_thresholds)], low, high)
    if args.random_p_llm:
        curves["RANDOM"] = CptCurve.from_reports([run(Policy.random(p, args.random_seed)) for p in _floats(args.random_p_llm)], low, high)
    text = cpt_csv(cpt_rows(Path(args.traces).stem, curves))
    _write(Path(args.out) / "cpt.csv", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_slprofile(args) -> int:
    from .harness.io import read_traces
    from .slmetrics import profile_csv, sl_similarity_profile

    rows = sl_similarity_profile(read_traces(args.traces), args.threshold, match_threshold=args.match_threshold)
    text = profile_csv(rows)
    _write(Path(args.out) / "slprofile.csv", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_run(args) -> int:
    result = run_experiment(args.spec, args.out)
    stream = sys.stdout if result.exit_code == EXIT_OK else sys.stderr
    print(result.message if result.exit_code == EXIT_OK else f"error: {result.message}", file=stream)
    return result.exit_code


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    suite = load_workload(args.traces).suite() if args.traces else None
    uvicorn.run(create_app(suite), host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="subroute", description="Subtask-level SLM/LLM routing and evaluation")
    sub = ap.add_subparsers(dest="command", required=True)

    def judge_flags(p):
        p.add_argument("--judge", default="auto", choices=["auto", "similarity", "exact"])
        p.add_argument("--judge-threshold", type=float, default=0.7)

    def router_flags(p):
        p.add_argument("--config", help="router config file ([router] section, key = value)")
        p.add_argument("--threshold", type=float, help="move gate and subtask thresholds to this value")

    p = sub.add_parser("generate", help="write a synthetic trace workload")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=int, default=2000, help="number of requests")
    p.add_argument("--branch-depth", type=int, default=6,
                   help="materialize mixed branches up to this many steps (0 = pure paths only)")
    p.add_argument("--llm-len-mean", type=float, default=5.8)
    p.add_argument("--slm-len-mean", type=float, default=6.9)
    p.add_argument("--matched-final-fraction", type=float, default=0.21)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("route", help="route every request of a trace file")
    p.add_argument("--traces", required=True)
    router_flags(p)
    p.add_argument("--server", help="routing service base URL (thin-client mode)")
    p.add_argument("--timeout", type=float, default=300.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("evaluate", help="score policies on a trace file")
    p.add_argument("--traces", required=True)
    p.add_argument("--policies", default="ALL_SLM,ALL_LLM,RANDOM(0.5),CLASSIFIER(0.7),HERA")
    p.add_argument("--random-seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0, help="predictor error rate (0..0.5)")
    p.add_argument("--noise-seed", type=int, default=0)
    router_flags(p)
    judge_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("oracle", help="oracle assignments for a trace file")
    p.add_argument("--traces", required=True)
    p.add_argument("--floor-frac", type=float, default=0.9)
    p.add_argument("--cap", type=int, default=12)
    p.add_argument("--beam", type=int, default=64)
    judge_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("cpt", help="CPT(50/70/90) table from threshold sweeps")
    p.add_argument("--traces", required=True)
    p.add_argument("--hera-thresholds", default="0.5,0.6,0.7,0.8,0.9")
    p.add_argument("--classifier-thresholds", default="0.5,0.6,0.7,0.8,0.9")
    p.add_argument("--random-p-llm", default="0.1,0.3,0.5,0.7,0.9")
    p.add_argument("--random-seed", type=int, default=0)
    router_flags(p)
    judge_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cpt)

    p = sub.add_parser("slprofile", help="S-L similarity / distance profile of a trace file")
    p.add_argument("--traces", required=True)
    p.add_argument("--threshold", type=float, default=0.7, help="final-output match threshold")
    p.add_argument("--match-threshold", type=float, default=0.7, help="subtask match threshold")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_slprofile)

    p = sub.add_parser("run", help="run an experiment spec")
    p.add_argument("spec")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--traces", help="trace file backing POST /predict")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TraceFileError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
