"""Experiment orchestration from a key=value spec file with ``[section]`` headers.

Example::

    [experiment]
    name = demo
    seeds = 1, 2

    [workload]
    source = generator        # or: file
    n_requests = 500
    # path = traces.jsonl     # for source = file

    [policies]
    list = ALL_SLM, ALL_LLM, RANDOM(0.5), CLASSIFIER(0.7), HERA

    [sweep]
    hera_thresholds = 0.5, 0.6, 0.7, 0.8, 0.9

Every artifact is written under the output directory. Given the same spec
and seeds the files are byte-identical across runs.
"""
from __future__ import annotations

import configparser
import csv
import io
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Optional

from ..predictors import NoisySuite, RemoteSuite
from ..router import RouterConfig, config_from_mapping, write_routing_log
from ..similarity import DEFAULT_DIM, DEFAULT_SIMILARITY_THRESHOLD, Embedder, RemoteEmbedder
from ..slmetrics import profile_csv, sl_similarity_profile
from ..evaluation.cost import CostModel, TokenCounter
from ..evaluation.cpt import CptCurve, cpt_csv, cpt_rows
from ..evaluation.oracle import DEFAULT_BEAM, DEFAULT_ENUM_CAP, DEFAULT_FLOOR_FRAC, incorrect_assignment_rate, oracle_workload
from ..evaluation.policies import (
    Judge,
    JudgeMode,
    LatencyModel,
    Policy,
    PolicyReport,
    evaluate_policy,
    parse_policy,
)
from .generator import GeneratorConfig, synthetic_workload
from .io import TraceFileError, load_workload

EXIT_OK, EXIT_SPEC, EXIT_IO = 0, 2, 3

REPORT_COLUMNS = ["workload", "policy", "n_requests", "accuracy", "slm_usage", "completion_rate",
                  "avg_subtasks", "cost_usd", "sim_latency_s"]


class SpecError(ValueError):
    def __init__(self, source: str, line: Optional[int], message: str):
        where = f"{source}:{line}" if line else source
        super().__init__(f"{where}: {message}")
        self.line = line


@dataclass
class ExperimentSpec:
    name: str = "experiment"
    seeds: list[int] = field(default_factory=lambda: [0])
    source: str = "generator"
    trace_path: Optional[Path] = None
    generator: dict[str, Any] = field(default_factory=dict)
    policies: list[str] = field(default_factory=lambda: ["ALL_SLM", "ALL_LLM", "HERA"])
    random_seed: int = 0
    router: RouterConfig = field(default_factory=RouterConfig)
    predictor_mode: str = "trace"
    predictor_url: str = ""
    noise: float = 0.0
    noise_seed: int = 0
    hera_thresholds: list[float] = field(default_factory=list)
    classifier_thresholds: list[float] = field(default_factory=list)
    random_p_llm: list[float] = field(default_factory=list)
    judge: Judge = field(default_factory=Judge)
    cost: CostModel = field(default_factory=CostModel)
    latency: LatencyModel = field(default_factory=LatencyModel)
    oracle: bool = False
    floor_frac: float = DEFAULT_FLOOR_FRAC
    oracle_cap: int = DEFAULT_ENUM_CAP
    oracle_beam: int = DEFAULT_BEAM
    match_threshold: float = DEFAULT_SIMILARITY_THRESHOLD
    profile_threshold: float = DEFAULT_SIMILARITY_THRESHOLD
    embedder: Optional[Embedder] = None


def _floats(raw: str) -> list[float]:
    return [float(x) for x in re.split(r"[,\s]+", raw.strip()) if x]


def _ints(raw: str) -> list[int]:
    return [int(x) for x in re.split(r"[,\s]+", raw.strip()) if x]


def _bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


_GEN_FLOAT = {"llm_len_mean", "slm_len_mean", "matched_final_fraction", "llm_accuracy", "similarity_spread"}
_GEN_INT = {"n_requests", "max_len", "text_tokens", "vocab_size"}
_GEN_TRIPLE = {"stage_similarity", "detour_prob", "fatal_prob"}


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    lines: dict[tuple[str, str], int] = {}
    section = ""
    for no, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            lines[(section, "")] = no
        elif "=" in s and not s.startswith(("#", ";")):
            lines.setdefault((section, s.split("=", 1)[0].strip().lower()), no)
    return lines


def parse_spec(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    src = str(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=src)
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise SpecError(src, line, "malformed line (expected key = value)") from None
    except configparser.MissingSectionHeaderError as exc:
        raise SpecError(src, exc.lineno, "key outside of a [section]") from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise SpecError(src, exc.lineno, exc.message.split(":")[-1].strip()) from None

    lines = _key_lines(text)
    spec = ExperimentSpec()
    handlers: dict[str, Callable[[str, str], None]] = {}

    def on(section: str):
        def deco(fn):
            handlers[section] = fn
            return fn
        return deco

    router_values: dict[str, str] = {}
    judge_kw: dict[str, Any] = {}
    cost_kw: dict[str, Any] = {}
    latency_kw: dict[str, float] = {}
    embedder_kw: dict[str, str] = {}

    @on("experiment")
    def _(k, v):
        if k == "name":
            spec.name = v.strip()
        elif k == "seeds":
            spec.seeds = _ints(v)
            if not spec.seeds:
                raise ValueError("need at least one seed")
        else:
            raise KeyError(k)

    @on("workload")
    def _(k, v):
        if k == "source":
            if v not in ("generator", "file"):
                raise ValueError("source must be 'generator' or 'file'")
            spec.source = v
        elif k == "path":
            p = Path(v)
            spec.trace_path = p if p.is_absolute() else path.parent / p
        elif k in _GEN_FLOAT:
            spec.generator[k] = float(v)
        elif k in _GEN_INT:
            spec.generator[k] = int(v)
        elif k in _GEN_TRIPLE:
            vals = _floats(v)
            if len(vals) != 3:
                raise ValueError("expected three values (early, middle, late)")
            spec.generator[k] = tuple(vals)
        else:
            raise KeyError(k)

    @on("policies")
    def _(k, v):
        if k == "list":
            spec.policies = [p.strip() for p in v.split(",") if p.strip()]
            if not spec.policies:
                raise ValueError("empty policy list")
            for p in spec.policies:
                parse_policy(p)
        elif k == "random_seed":
            spec.random_seed = int(v)
        else:
            raise KeyError(k)

    @on("router")
    def _(k, v):
        config_from_mapping({k: v})  # per-key check so errors point at the line
        router_values[k] = v

    @on("predictor")
    def _(k, v):
        if k == "mode":
            if v not in ("trace", "remote"):
                raise ValueError("mode must be 'trace' or 'remote'")
            spec.predictor_mode = v
        elif k == "url":
            spec.predictor_url = v
        elif k == "noise":
            spec.noise = float(v)
            if not 0.0 <= spec.noise <= 0.5:
                raise ValueError("noise must lie in [0, 0.5]")
        elif k == "noise_seed":
            spec.noise_seed = int(v)
        else:
            raise KeyError(k)

    @on("sweep")
    def _(k, v):
        if k == "hera_thresholds":
            spec.hera_thresholds = _floats(v)
        elif k == "classifier_thresholds":
            spec.classifier_thresholds = _floats(v)
        elif k == "random_p_llm":
            spec.random_p_llm = _floats(v)
        else:
            raise KeyError(k)

    @on("judge")
    def _(k, v):
        if k == "mode":
            judge_kw["mode"] = JudgeMode(v)
        elif k == "threshold":
            judge_kw["threshold"] = float(v)
        else:
            raise KeyError(k)

    @on("cost")
    def _(k, v):
        if k in ("llm_usd_per_1k_prompt_tokens", "llm_usd_per_1k_completion_tokens"):
            cost_kw[k] = float(v)
        elif k == "token_counter":
            cost_kw[k] = TokenCounter(v)
        else:
            raise KeyError(k)

    @on("latency")
    def _(k, v):
        if k in ("slm_s", "llm_s", "network_s", "budget_s"):
            latency_kw[k] = float(v)
        else:
            raise KeyError(k)

    @on("oracle")
    def _(k, v):
        if k == "enabled":
            spec.oracle = _bool(v)
        elif k == "floor_frac":
            spec.floor_frac = float(v)
        elif k == "cap":
            spec.oracle_cap = int(v)
        elif k == "beam":
            spec.oracle_beam = int(v)
        else:
            raise KeyError(k)

    @on("slmetrics")
    def _(k, v):
        if k == "match_threshold":
            spec.match_threshold = float(v)
        elif k == "threshold":
            spec.profile_threshold = float(v)
        else:
            raise KeyError(k)

    @on("embedder")
    def _(k, v):
        if k in ("kind", "url", "dim"):
            embedder_kw[k] = v
        else:
            raise KeyError(k)

    for section in parser.sections():
        handler = handlers.get(section)
        if handler is None:
            raise SpecError(src, lines.get((section, "")), f"unknown section [{section}]")
        for key, value in parser.items(section):
            try:
                handler(key, value.strip())
            except KeyError:
                raise SpecError(src, lines.get((section, key)), f"unknown key {key!r} in [{section}]") from None
            except ValueError as exc:
                raise SpecError(src, lines.get((section, key)), f"{key}: {exc}") from None

    try:
        spec.router = config_from_mapping(router_values)
    except KeyError as exc:
        key = exc.args[0]
        raise SpecError(src, lines.get(("router", key)), f"unknown key {key!r} in [router]") from None
    except ValueError as exc:
        raise SpecError(src, lines.get(("router", ""), None), f"[router]: {exc}") from None
    try:
        spec.judge = Judge(**judge_kw)
        spec.cost = CostModel(**cost_kw)
        spec.latency = LatencyModel(**latency_kw)
    except ValueError as exc:
        raise SpecError(src, None, str(exc)) from None
    if spec.source == "file" and spec.trace_path is None:
        raise SpecError(src, lines.get(("workload", "source")), "source = file needs a path")
    if spec.predictor_mode == "remote" and not spec.predictor_url:
        raise SpecError(src, lines.get(("predictor", "mode")), "mode = remote needs a url")
    kind = embedder_kw.get("kind", "builtin")
    if kind == "remote":
        if "url" not in embedder_kw:
            raise SpecError(src, lines.get(("embedder", "kind")), "kind = remote needs a url")
        spec.embedder = RemoteEmbedder(embedder_kw["url"], int(embedder_kw.get("dim", DEFAULT_DIM)))
    elif kind != "builtin":
        raise SpecError(src, lines.get(("embedder", "kind")), "kind must be 'builtin' or 'remote'")
    if spec.generator:
        try:
            GeneratorConfig(seed=0, **spec.generator)
        except (TypeError, ValueError) as exc:
            raise SpecError(src, lines.get(("workload", "")), f"[workload]: {exc}") from None
    return spec


@dataclass
class ExperimentResult:
    exit_code: int
    message: str = ""
    files: list[str] = field(default_factory=list)
    reports: list[PolicyReport] = field(default_factory=list)


def _fmt(x: Any) -> str:
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def reports_csv(reports: list[PolicyReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in reports:
        d = r.to_dict()
        w.writerow([_fmt(d[c]) for c in REPORT_COLUMNS])
    return buf.getvalue()


def reports_json(reports: list[PolicyReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], sort_keys=True, indent=2) + "\n"


def _datasets(spec: ExperimentSpec):
    if spec.source == "file":
        wl = load_workload(spec.trace_path)
        yield spec.trace_path.stem, wl, None
        return
    for seed in spec.seeds:
        cfg = GeneratorConfig(seed=seed, **spec.generator)
        wl = synthetic_workload(cfg)
        yield f"synthetic-seed{seed}", wl, wl.traces()


def execute(spec: ExperimentSpec, out_dir: Path) -> ExperimentResult:
    out_dir.mkdir(parents=True, exist_ok=True)
    all_reports: list[PolicyReport] = []
    cpt_table: list[list[str]] = []
    iar_rows: list[list[str]] = []
    files: list[str] = []

    for name, wl, traces in _datasets(spec):
        if traces is None:
            traces = wl.traces
        world = wl.world()
        if spec.predictor_mode == "remote":
            suite = RemoteSuite(spec.predictor_url)
            if spec.noise > 0:
                suite = NoisySuite(suite, spec.noise, spec.noise_seed, embedder=spec.embedder)
        else:
            suite = wl.suite(spec.noise, spec.noise_seed, embedder=spec.embedder,
                             match_threshold=spec.match_threshold, sd_max=spec.router.sd_max)
        requests = wl.requests
        kw = dict(judge=spec.judge, latency=spec.latency, cost=spec.cost, workload_name=name,
                  embedder=spec.embedder)

        def run(policy: Policy):
            return evaluate_policy(policy, suite, world, requests, **kw)

        runs = {}
        for text in spec.policies:
            p = parse_policy(text, spec.router, spec.random_seed)
            runs[p.name] = run(p)
        for key, policy in (("ALL_SLM", Policy.all_slm()), ("ALL_LLM", Policy.all_llm())):
            if key not in runs:
                runs[key] = run(policy)
        listed = [parse_policy(t, spec.router, spec.random_seed).name for t in spec.policies]
        reports = [runs[n].report for n in listed]

        curves: dict[str, list[PolicyReport]] = {}
        for t in spec.hera_thresholds:
            r = run(Policy.hera(spec.router.with_threshold(t), f"HERA({t:g})")).report
            curves.setdefault("HERA", []).append(r)
            reports.append(r)
        for t in spec.classifier_thresholds:
            r = run(Policy.classifier(t)).report
            curves.setdefault("CLASSIFIER", []).append(r)
            reports.append(r)
        for p in spec.random_p_llm:
            r = run(Policy.random(p, spec.random_seed)).report
            curves.setdefault("RANDOM", []).append(r)
            reports.append(r)

        if spec.oracle:
            ow = oracle_workload(world, requests, runs["ALL_LLM"].report.accuracy, spec.floor_frac, spec.judge,
                                 spec.oracle_cap, spec.oracle_beam, spec.router.depth_cap,
                                 spec.latency, spec.cost, name)
            reports.append(ow.report)
            for pname in listed:
                pairs = [(ex.assignment, oa) for ex, oa in zip(runs[pname].executions, ow.assignments)
                         if ex.assignment is not None]
                if pairs:
                    rate = incorrect_assignment_rate([a for a, _ in pairs], [b for _, b in pairs])
                    iar_rows.append([name, pname, f"{rate:.6f}"])

        gap_low, gap_high = runs["ALL_SLM"].report.accuracy, runs["ALL_LLM"].report.accuracy
        cpt_table.extend(cpt_rows(name, {m: CptCurve.from_reports(rs, gap_low, gap_high)
                                         for m, rs in curves.items()}))
        all_reports.extend(reports)

        ds_dir = out_dir / name
        ds_dir.mkdir(exist_ok=True)
        prof = sl_similarity_profile(traces, spec.profile_threshold, spec.embedder, spec.match_threshold)
        _write(ds_dir / "slprofile.csv", profile_csv(prof), files, out_dir)
        hera_name = next((n for n in listed if n == "HERA"), None)
        hera_run = runs[hera_name] if hera_name else run(Policy.hera(spec.router))
        buf = io.StringIO()
        write_routing_log(hera_run.executions, buf)
        _write(ds_dir / "routing_log.jsonl", buf.getvalue(), files, out_dir)

    _write(out_dir / "reports.json", reports_json(all_reports), files, out_dir)
    _write(out_dir / "reports.csv", reports_csv(all_reports), files, out_dir)
    _write(out_dir / "cpt.csv", cpt_csv(cpt_table), files, out_dir)
    if spec.oracle:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", "method", "incorrect_assignment_rate"])
        w.writerows(iar_rows)
        _write(out_dir / "incorrect_assignment.csv", buf.getvalue(), files, out_dir)
    return ExperimentResult(EXIT_OK, f"wrote {len(files)} files to {out_dir}", sorted(files), all_reports)


def _write(path: Path, text: str, files: list[str], root: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    files.append(str(path.relative_to(root)))


def run_experiment(spec_file: str | Path, out_dir: str | Path | None = None,
                   overrides: Optional[dict[str, Any]] = None) -> ExperimentResult:
    """Run a spec file; returns exit code 0 (ok), 2 (spec error) or 3 (I/O error)."""
    try:
        spec = parse_spec(spec_file)
    except SpecError as exc:
        return ExperimentResult(EXIT_SPEC, str(exc))
    except OSError as exc:
        return ExperimentResult(EXIT_IO, f"cannot read spec: {exc}")
    if overrides:
        spec = replace(spec, **overrides)
    out = Path(out_dir) if out_dir is not None else Path("results") / spec.name
    try:
        return execute(spec, out)
    except TraceFileError as exc:
        return ExperimentResult(EXIT_SPEC, str(exc))
    except OSError as exc:
        return ExperimentResult(EXIT_IO, f"I/O error: {exc}")
