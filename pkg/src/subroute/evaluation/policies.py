"""Routing policies and the per-workload metrics they are scored on."""
from __future__ import annotations

import random
import re
import statistics
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional, Sequence

from ..domain import ModelKind, UserRequest
from ..predictors import PredictorError, PredictorSuite, sp_predict
from ..router import ExecutionWorld, RoutedExecution, RouterConfig, execute_with, route_request
from ..similarity import DEFAULT_SIMILARITY_THRESHOLD, Embedder, passes, text_similarity
from ..world import Node
from .cost import CostModel, cost_of

SLM, LLM = ModelKind.SLM, ModelKind.LLM


class PolicyKind(str, Enum):
    ALL_SLM = "ALL_SLM"
    ALL_LLM = "ALL_LLM"
    RANDOM = "RANDOM"
    CLASSIFIER = "CLASSIFIER"
    HERA = "HERA"


@dataclass(frozen=True)
class Policy:
    kind: PolicyKind
    p_llm: float = 0.5
    seed: int = 0
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD
    config: RouterConfig = field(default_factory=RouterConfig)
    label: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_llm <= 1.0:
            raise ValueError("p_llm must lie in [0, 1]")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")

    @classmethod
    def all_slm(cls) -> "Policy":
        return cls(PolicyKind.ALL_SLM)

    @classmethod
    def all_llm(cls) -> "Policy":
        return cls(PolicyKind.ALL_LLM)

    @classmethod
    def random(cls, p_llm: float = 0.5, seed: int = 0) -> "Policy":
        return cls(PolicyKind.RANDOM, p_llm=p_llm, seed=seed)

    @classmethod
    def classifier(cls, threshold: float = DEFAULT_SIMILARITY_THRESHOLD) -> "Policy":
        return cls(PolicyKind.CLASSIFIER, threshold=threshold)

    @classmethod
    def hera(cls, config: Optional[RouterConfig] = None, label: str = "") -> "Policy":
        return cls(PolicyKind.HERA, config=config or RouterConfig(), label=label)

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.kind is PolicyKind.RANDOM:
            return f"RANDOM({self.p_llm:g})"
        if self.kind is PolicyKind.CLASSIFIER:
            return f"CLASSIFIER({self.threshold:g})"
        return self.kind.value


_NUMBER = re.compile(r"^\s*[-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?\s*$")


class JudgeMode(str, Enum):
    AUTO = "auto"  # exact match for numeric references, similarity otherwise
    SIMILARITY = "similarity"
    EXACT = "exact"


@dataclass(frozen=True)
class Judge:
    mode: JudgeMode = JudgeMode.AUTO
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD
    embedder: Optional[Embedder] = None

    def correct(self, output: str, reference: str) -> bool:
        if not output or not reference:
            return False
        exact = self.mode is JudgeMode.EXACT or (self.mode is JudgeMode.AUTO and _NUMBER.match(reference))
        if exact:
            if _NUMBER.match(reference) and _NUMBER.match(output):
                return float(output) == float(reference)
            return output.strip() == reference.strip()
        return passes(text_similarity(output, reference, self.embedder), self.threshold)


@dataclass(frozen=True)
class LatencyModel:
    slm_s: float = 3.0
    llm_s: float = 5.5
    network_s: float = 0.58  # per cloud round trip
    budget_s: float = 300.0

    def of(self, execution: RoutedExecution) -> float:
        n_slm = sum(u.model is SLM for u in execution.executed)
        n_llm = len(execution.executed) - n_slm
        return n_slm * self.slm_s + n_llm * (self.llm_s + self.network_s)


@dataclass(frozen=True)
class PolicyReport:
    policy: str
    workload: str
    n_requests: int
    accuracy: float
    slm_usage: float
    completion_rate: float
    avg_subtasks: float
    cost_usd: float
    sim_latency_s: float

    def __post_init__(self) -> None:
        for name in ("accuracy", "slm_usage", "completion_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.cost_usd < 0 or self.sim_latency_s < 0:
            raise ValueError("cost and latency must be >= 0")

    @property
    def llm_fraction(self) -> float:
        return 1.0 - self.slm_usage

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PolicyRun:
    report: PolicyReport
    executions: list[RoutedExecution]
    correct: list[bool]


def _classifier_choice(policy: Policy, suite: PredictorSuite, request: UserRequest,
                       embedder: Optional[Embedder]):
    def choose(node: Node) -> ModelKind:
        if not node.path:
            return LLM  # the first subtask has nothing to compare yet
        current = node.as_subtask(request.id)
        try:
            s = sp_predict(suite, SLM, current)
            l = sp_predict(suite, LLM, current)
        except PredictorError:
            return LLM
        return SLM if passes(text_similarity(s.content, l.content, embedder), policy.threshold) else LLM

    return choose


def execute_policy(policy: Policy, suite: PredictorSuite, world: ExecutionWorld, request: UserRequest,
                   embedder: Optional[Embedder] = None, depth_cap: Optional[int] = None) -> RoutedExecution:
    cap = depth_cap if depth_cap is not None else policy.config.depth_cap
    if policy.kind is PolicyKind.HERA:
        return route_request(policy.config, suite, world, request, embedder)
    if policy.kind is PolicyKind.ALL_SLM:
        return execute_with(world, request, lambda node: SLM, cap)
    if policy.kind is PolicyKind.ALL_LLM:
        return execute_with(world, request, lambda node: LLM, cap)
    if policy.kind is PolicyKind.RANDOM:
        rng = random.Random(f"{policy.seed}:{request.id}")
        return execute_with(world, request, lambda node: LLM if rng.random() < policy.p_llm else SLM, cap)
    return execute_with(world, request, _classifier_choice(policy, suite, request, embedder), cap)


def summarize(policy_name: str, workload_name: str, requests: Sequence[UserRequest],
              executions: Sequence[RoutedExecution], correct: Sequence[bool],
              latency: LatencyModel, cost: CostModel) -> PolicyReport:
    if not requests:
        raise ValueError("empty workload")
    # fixed reduction order: by request id
    order = sorted(range(len(requests)), key=lambda i: requests[i].id)
    usages = [executions[i].slm_usage for i in order if executions[i].executed]
    lat = [latency.of(executions[i]) for i in order]
    completed = [executions[i].finished and lat[k] <= latency.budget_s for k, i in enumerate(order)]
    n = len(requests)
    return PolicyReport(
        policy=policy_name,
        workload=workload_name,
        n_requests=n,
        accuracy=sum(correct[i] for i in order) / n,
        slm_usage=statistics.fmean(usages) if usages else 0.0,
        completion_rate=sum(completed) / n,
        avg_subtasks=sum(len(executions[i].executed) for i in order) / n,
        cost_usd=sum(cost_of(executions[i], cost) for i in order),
        sim_latency_s=statistics.fmean(lat),
    )


def evaluate_policy(policy: Policy, suite: PredictorSuite, world: ExecutionWorld,
                    workload: Sequence[UserRequest], judge: Optional[Judge] = None,
                    latency: Optional[LatencyModel] = None, cost: Optional[CostModel] = None,
                    workload_name: str = "workload", embedder: Optional[Embedder] = None) -> PolicyRun:
    judge = judge or Judge()
    latency = latency or LatencyModel()
    cost = cost or CostModel()
    executions = [execute_policy(policy, suite, world, r, embedder) for r in workload]
    correct = [ex.finished and judge.correct(ex.final_output, world.reference_output(r))
               for ex, r in zip(executions, workload)]
    report = summarize(policy.name, workload_name, workload, executions, correct, latency, cost)
    return PolicyRun(report, executions, correct)


def run_policy(policy: Policy, suite: PredictorSuite, world: ExecutionWorld,
               workload: Sequence[UserRequest], **kw) -> PolicyReport:
    return evaluate_policy(policy, suite, world, workload, **kw).report


_POLICY_RE = re.compile(r"^\s*([A-Z_]+)\s*(?:\(\s*([0-9.eE+-]*)\s*\))?\s*$")


def parse_policy(text: str, config: Optional[RouterConfig] = None, seed: int = 0) -> Policy:
    """Parse ``ALL_SLM``, ``ALL_LLM``, ``RANDOM(0.5)``, ``CLASSIFIER(0.7)`` or ``HERA``."""
    m = _POLICY_RE.match(text.upper())
    if not m:
        raise ValueError(f"cannot parse policy {text!r}")
    kind = PolicyKind(m.group(1))
    arg = float(m.group(2)) if m.group(2) else None
    if kind is PolicyKind.RANDOM:
        return Policy.random(0.5 if arg is None else arg, seed)
    if kind is PolicyKind.CLASSIFIER:
        return Policy.classifier(DEFAULT_SIMILARITY_THRESHOLD if arg is None else arg)
    if kind is PolicyKind.HERA:
        cfg = config or RouterConfig()
        return Policy.hera(cfg) if arg is None else Policy.hera(cfg.with_threshold(arg), f"HERA({arg:g})")
    if arg is not None:
        raise ValueError(f"{kind.value} takes no argument")
    return Policy(kind)
