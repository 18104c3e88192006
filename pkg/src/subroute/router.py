"""Online SLM/LLM routing for one request.

A request first meets the request-level gate (URC). If the predicted
similarity of the SLM and LLM final outputs clears ``urc_threshold`` the whole
request runs on the SLM. Otherwise the LLM produces the first subtask and
every later subtask goes through the cascade

    SSE -> SLE -> CD -> SD -> FALLBACK_LLM

where the first stage that accepts decides. SLE, CD and SD can commit a run
of several SLM units at once; the subtask after the run re-enters the cascade.
"""
from __future__ import annotations

import configparser
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Callable, Iterable, Optional, Protocol

from .domain import (
    DEFAULT_DEPTH_CAP,
    Assignment,
    ModelKind,
    RoutingDecision,
    Stage,
    Subtask,
    UserRequest,
)
from .predictors import (
    NoProfile,
    PredictorSuite,
    PredictorUnavailable,
    SequenceExhausted,
    dp_predict,
    sd_decompose,
    sp_predict,
    urc_predict,
)
from .similarity import Embedder, ThresholdSchedule, passes, text_similarity
from .world import Node, WorldError

SLM, LLM = ModelKind.SLM, ModelKind.LLM


class ExecutionWorld(Protocol):
    def root(self, request: UserRequest) -> Node: ...

    def step(self, request: UserRequest, node: Node, model: ModelKind) -> Node: ...

    def reference_output(self, request: UserRequest) -> str: ...


@dataclass(frozen=True)
class RouterConfig:
    urc_threshold: float = 0.7
    schedule: ThresholdSchedule = field(default_factory=ThresholdSchedule)
    cd_horizon: int = 5
    sd_max: int = 4
    depth_cap: int = DEFAULT_DEPTH_CAP
    use_urc: bool = True
    use_sse: bool = True
    use_sle: bool = True
    use_cd: bool = True
    use_sd: bool = True

    def __post_init__(self) -> None:
        # 0 forces the gate open and anything above 1 keeps it shut
        if self.urc_threshold < 0 or math.isnan(self.urc_threshold):
            raise ValueError("urc_threshold must be >= 0")
        if self.cd_horizon < 1:
            raise ValueError("cd_horizon must be >= 1")
        if self.sd_max < 1:
            raise ValueError("sd_max must be >= 1")
        if self.depth_cap < 1:
            raise ValueError("depth_cap must be >= 1")

    def with_threshold(self, threshold: float) -> "RouterConfig":
        """Same config with both the gate and the subtask schedule moved to ``threshold``."""
        return replace(self, urc_threshold=threshold, schedule=ThresholdSchedule.saturating_at(threshold))

    def without(self, *stages: Stage) -> "RouterConfig":
        flags = {f"use_{s.value.lower()}": False for s in stages}
        return replace(self, **flags)


@dataclass(frozen=True)
class ExecutedUnit:
    """One model call: ``subtask`` is the subtask it produced from ``prompt``.

    Token counts are optional; cost accounting estimates them from the text
    when absent.
    """

    subtask: Subtask
    model: ModelKind
    output: str
    prompt: str = ""
    prompt_tokens: Optional[int] = None
    completion_tokens: Optional[int] = None


@dataclass(frozen=True)
class RoutedExecution:
    request_id: str
    decisions: tuple[RoutingDecision, ...]
    executed: tuple[ExecutedUnit, ...]
    final_output: str
    finished: bool
    error: str = ""

    @property
    def assignment(self) -> Optional[Assignment]:
        if not self.executed:
            return None
        return Assignment(tuple(u.model for u in self.executed))

    @property
    def slm_usage(self) -> float:
        if not self.executed:
            return 0.0
        return sum(u.model is SLM for u in self.executed) / len(self.executed)


@dataclass(frozen=True)
class _Plan:
    stage: Stage
    model: ModelKind
    span: int = 1
    detail: str = ""
    kappa: Optional[float] = None
    score: Optional[float] = None


def _similar(a: str, b: str, kappa: float, embedder: Optional[Embedder]) -> tuple[bool, float]:
    s = text_similarity(a, b, embedder)
    return passes(s, kappa), s


def _rollout(suite: PredictorSuite, model: ModelKind, current: Subtask, steps: int) -> list[Subtask]:
    out = []
    cur = current
    for _ in range(steps):
        try:
            cur = sp_predict(suite, model, cur)
        except SequenceExhausted:
            break
        out.append(cur)
    return out


def _sse(config: RouterConfig, suite: PredictorSuite, current: Subtask,
         embedder: Optional[Embedder] = None) -> tuple[bool, Optional[float]]:
    try:
        s = sp_predict(suite, SLM, current)
        l = sp_predict(suite, LLM, current)
    except SequenceExhausted:
        return False, None
    return _similar(s.content, l.content, config.schedule.threshold_at(current.seq_id), embedder)


def sse_decide(config: RouterConfig, suite: PredictorSuite, current: Subtask,
               embedder: Optional[Embedder] = None) -> bool:
    return _sse(config, suite, current, embedder)[0]


def _sle(config: RouterConfig, suite: PredictorSuite, current: Subtask,
         embedder: Optional[Embedder] = None) -> tuple[Optional[int], float, Optional[float]]:
    """Returns (span to commit or None, predicted distance, similarity)."""
    try:
        nxt_llm = sp_predict(suite, LLM, current)
    except SequenceExhausted:
        return None, math.inf, None
    d = dp_predict(suite, nxt_llm.content, nxt_llm.seq_id, nxt_llm.request_id or current.request_id or None)
    if math.isinf(d):
        return None, d, None
    d = int(d)
    slm = _rollout(suite, SLM, current, d + 1)
    if len(slm) < d + 1:
        return None, d, None
    ok, score = _similar(slm[-1].content, nxt_llm.content, config.schedule.threshold_at(current.seq_id), embedder)
    return (d + 1 if ok else None), d, score


def sle_decide(config: RouterConfig, suite: PredictorSuite, current: Subtask,
               embedder: Optional[Embedder] = None) -> bool:
    return _sle(config, suite, current, embedder)[0] is not None


def _cd(config: RouterConfig, suite: PredictorSuite, current: Subtask,
        embedder: Optional[Embedder] = None) -> tuple[Optional[int], Optional[float], Optional[float]]:
    slm = _rollout(suite, SLM, current, config.cd_horizon)
    llm = _rollout(suite, LLM, current, config.cd_horizon)
    best = None
    for k, (s, l) in enumerate(zip(slm, llm), start=1):
        kappa = config.schedule.threshold_at(current.seq_id + k)
        ok, score = _similar(s.content, l.content, kappa, embedder)
        if ok:
            best = (k, kappa, score)
    if best is None:
        return None, None, None
    return best


def cd_decide(config: RouterConfig, suite: PredictorSuite, current: Subtask,
              embedder: Optional[Embedder] = None) -> Optional[int]:
    """Largest offset within the horizon where the two predicted branches agree."""
    return _cd(config, suite, current, embedder)[0]


def sd_decide(config: RouterConfig, suite: PredictorSuite, current: Subtask,
              embedder: Optional[Embedder] = None) -> Optional[list[Subtask]]:
    """Sub-subtasks to run on the SLM, or None to fall back to the LLM."""
    try:
        nxt_llm = sp_predict(suite, LLM, current)
    except SequenceExhausted:
        return None
    parts = sd_decompose(suite, current, nxt_llm)
    if len(parts) <= 1:
        return None
    for p in parts[: config.sd_max]:
        try:
            ok = sse_decide(config, suite, p, embedder)
        except PredictorUnavailable:
            ok = False
        if not ok:
            return None
    return parts


def _plan(config: RouterConfig, suite: PredictorSuite, current: Subtask,
          embedder: Optional[Embedder]) -> _Plan:
    seq = current.seq_id
    kappa = config.schedule.threshold_at(seq)
    sse_score = None
    if config.use_sse:
        ok, sse_score = _sse(config, suite, current, embedder)
        if ok:
            return _Plan(Stage.SSE, SLM, 1, f"sim {sse_score:.3f} >= {kappa:.2f}", kappa, sse_score)
    if config.use_sle:
        span, d, score = _sle(config, suite, current, embedder)
        if span is not None:
            return _Plan(Stage.SLE, SLM, span, f"distance {d}", kappa, score)
    if config.use_cd:
        k, kk, score = _cd(config, suite, current, embedder)
        if k is not None:
            return _Plan(Stage.CD, SLM, k, f"converges at offset {k}", kk, score)
    if config.use_sd:
        parts = sd_decide(config, suite, current, embedder)
        if parts is not None:
            # merged tails still execute one model call per underlying step
            span = len(parts[-1].path) - len(current.path) if parts[-1].path else len(parts)
            return _Plan(Stage.SD, SLM, span, f"{len(parts)} sub-subtasks", kappa, None)
    detail = "cascade exhausted" if sse_score is not None else "no prediction"
    return _Plan(Stage.FALLBACK_LLM, LLM, 1, detail, kappa, sse_score)


def route_request(config: RouterConfig, suite: PredictorSuite, world: ExecutionWorld,
                  request: UserRequest, embedder: Optional[Embedder] = None) -> RoutedExecution:
    decisions: list[RoutingDecision] = []
    executed: list[ExecutedUnit] = []
    try:
        node = world.root(request)
    except WorldError as exc:
        return RoutedExecution(request.id, (), (), "", False, str(exc))

    def run(model: ModelKind) -> None:
        nonlocal node
        prompt = node.content
        node = world.step(request, node, model)
        st = node.as_subtask(request.id)
        executed.append(ExecutedUnit(st, model, node.final if node.terminal else node.content, prompt))

    def finish(error: str = "") -> RoutedExecution:
        final = node.final if node.terminal else ""
        return RoutedExecution(request.id, tuple(decisions), tuple(executed), final or "",
                               node.terminal and not error, error)

    try:
        if config.use_urc:
            try:
                score = urc_predict(suite, request)
            except (NoProfile, PredictorUnavailable) as exc:
                decisions.append(RoutingDecision(0, LLM, Stage.URC, f"gate skipped: {exc}"))
            else:
                if passes(score, config.urc_threshold):
                    decisions.append(RoutingDecision(0, SLM, Stage.URC,
                                                     f"score {score:.3f} >= {config.urc_threshold:.2f}",
                                                     config.urc_threshold, score))
                    while not node.terminal and len(executed) < config.depth_cap:
                        run(SLM)
                    return finish()
                decisions.append(RoutingDecision(0, LLM, Stage.URC,
                                                 f"score {score:.3f} < {config.urc_threshold:.2f}",
                                                 config.urc_threshold, score))
        else:
            decisions.append(RoutingDecision(0, LLM, Stage.FALLBACK_LLM, "request gate disabled"))
        run(LLM)

        while not node.terminal and len(executed) < config.depth_cap:
            current = node.as_subtask(request.id)
            try:
                plan = _plan(config, suite, current, embedder)
            except PredictorUnavailable as exc:
                plan = _Plan(Stage.FALLBACK_LLM, LLM, 1, f"predictor unavailable: {exc}")
            span = min(plan.span, config.depth_cap - len(executed))
            for i in range(span):
                if node.terminal:
                    break
                detail = plan.detail if plan.span == 1 else f"{plan.detail}; span {i + 1}/{plan.span}"
                decisions.append(RoutingDecision(node.seq_id, plan.model, plan.stage, detail,
                                                 plan.kappa, plan.score))
                run(plan.model)
    except WorldError as exc:
        return finish(str(exc))
    return finish()


def execute_with(world: ExecutionWorld, request: UserRequest,
                 choose: Callable[[Node], ModelKind], depth_cap: int = DEFAULT_DEPTH_CAP) -> RoutedExecution:
    """Run a request step by step with ``choose(node)`` picking the model; no decisions are logged."""
    executed: list[ExecutedUnit] = []
    try:
        node = world.root(request)
        while not node.terminal and len(executed) < depth_cap:
            model = choose(node)
            prompt = node.content
            node = world.step(request, node, model)
            executed.append(ExecutedUnit(node.as_subtask(request.id), model,
                                         node.final if node.terminal else node.content, prompt))
    except WorldError as exc:
        return RoutedExecution(request.id, (), tuple(executed), "", False, str(exc))
    return RoutedExecution(request.id, (), tuple(executed), node.final or "", node.terminal)


def decision_log_lines(execution: RoutedExecution) -> list[str]:
    out = []
    for d in execution.decisions:
        rec = {"request_id": execution.request_id}
        rec.update(d.to_log())
        out.append(json.dumps(rec, sort_keys=True))
    return out


def write_routing_log(executions: Iterable[RoutedExecution], fh: IO[str]) -> None:
    for ex in executions:
        for line in decision_log_lines(ex):
            fh.write(line + "\n")


_BOOL_KEYS = ("use_urc", "use_sse", "use_sle", "use_cd", "use_sd")


def config_from_mapping(values: dict[str, str], base: Optional[RouterConfig] = None) -> RouterConfig:
    """Build a RouterConfig from string key/value pairs (unknown keys raise KeyError)."""
    cfg = base or RouterConfig()
    sched = cfg.schedule
    kw: dict = {}
    sched_kw: dict = {}
    for key, raw in values.items():
        if key in ("urc_threshold",):
            kw[key] = float(raw)
        elif key in ("cd_horizon", "sd_max", "depth_cap"):
            kw[key] = int(raw)
        elif key in _BOOL_KEYS:
            kw[key] = _parse_bool(raw)
        elif key in ("threshold_base", "threshold_step", "flat_default"):
            sched_kw[{"threshold_base": "base", "threshold_step": "step"}.get(key, key)] = float(raw)
        elif key == "threshold_cap_id":
            sched_kw["cap_id"] = int(raw)
        elif key == "threshold":
            cfg = cfg.with_threshold(float(raw))
            sched = cfg.schedule
        else:
            raise KeyError(key)
    if sched_kw:
        sched = replace(sched, **sched_kw)
    return replace(cfg, schedule=sched, **kw)


def _parse_bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def load_router_config(path: str | Path, section: str = "router") -> RouterConfig:
    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    if not parser.has_section(section):
        return RouterConfig()
    return config_from_mapping(dict(parser.items(section)))

