"""Synthetic profiling trees with controllable SLM/LLM agreement.

Each request has a latent plan of ``n`` steps (the LLM's subtasks). The SLM
works through the same plan but splits some steps into 2 or 3 finer subtasks,
and its completion of a step is one of

* ``ok``: similar to the LLM's subtask, with a similarity that rises from the
  early to the late third of the request,
* ``detour``: dissimilar but harmless,
* ``fatal``: moderately similar, but the request can no longer end correctly.

The subtask produced by a step depends only on the latent state and the model
that runs it, so every mixed assignment is well defined. Texts are bags of
distinct vocabulary tokens that land in distinct embedding buckets; two texts
sharing ``m`` of their ``T`` tokens have cosine ``m / T`` under the built-in
embedder, which is how target similarities are realized.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

from ..domain import ModelKind, SubtaskTrace, UserRequest
from ..predictors import NoisySuite, TraceSuite
from ..similarity import DEFAULT_DIM, token_bucket
from ..world import Node, ProfileTree, TreeWorld

SLM, LLM = ModelKind.SLM, ModelKind.LLM

# SLM / LLM agreement inside a finely split step and on a derailed request
FINE_STEP_SIMILARITY = 0.85
DERAILED_SIMILARITY = 0.8


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int
    n_requests: int = 2000
    llm_len_mean: float = 5.8
    slm_len_mean: float = 6.9
    stage_similarity: tuple[float, float, float] = (0.78, 0.86, 0.94)
    similarity_spread: float = 0.06
    matched_final_fraction: float = 0.21
    detour_prob: tuple[float, float, float] = (0.2, 0.1, 0.05)
    fatal_prob: tuple[float, float, float] = (0.1, 0.2, 0.35)
    fatal_similarity: tuple[float, float] = (0.3, 0.7)
    detour_similarity: tuple[float, float] = (0.1, 0.3)
    llm_accuracy: float = 0.8
    max_len: int = 15
    text_tokens: int = 20
    vocab_size: int = 255

    def __post_init__(self) -> None:
        if self.n_requests < 0:
            raise ValueError("n_requests must be >= 0")
        if self.llm_len_mean < 1 or self.slm_len_mean < 1:
            raise ValueError("length means must be >= 1")
        if self.slm_len_mean < self.llm_len_mean:
            raise ValueError("slm_len_mean must be >= llm_len_mean")
        fractions = (self.matched_final_fraction, self.llm_accuracy, self.similarity_spread,
                     *self.stage_similarity, *self.detour_prob, *self.fatal_prob,
                     *self.fatal_similarity, *self.detour_similarity)
        if any(not 0.0 <= f <= 1.0 for f in fractions):
            raise ValueError("fractions and similarities must lie in [0, 1]")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if not 1 <= self.text_tokens <= self.vocab_size:
            raise ValueError("need 1 <= text_tokens <= vocab_size")
        if self.vocab_size > DEFAULT_DIM - 1:
            raise ValueError(f"vocab_size is limited to {DEFAULT_DIM - 1} distinct embedding buckets")

    @property
    def fine_prob(self) -> float:
        # a fine step adds 1 (p=.75) or 2 (p=.25) SLM subtasks: 1.25 extra on average
        return min(1.0, (self.slm_len_mean - self.llm_len_mean) / (self.llm_len_mean * 1.25))


@lru_cache(maxsize=None)
def vocabulary(size: int, dim: int = DEFAULT_DIM) -> tuple[str, ...]:
    """``size`` tokens whose embedding buckets are pairwise distinct."""
    by_bucket: dict[int, str] = {}
    i = 0
    while len(by_bucket) < size:
        tok = f"w{i}"
        by_bucket.setdefault(token_bucket(tok, dim), tok)
        i += 1
    return tuple(by_bucket[b] for b in sorted(by_bucket))


@dataclass(frozen=True)
class StepPlan:
    fine: int  # number of SLM subtasks for this step (1..3)
    kind: str  # ok | detour | fatal
    similarity: float  # SLM completion vs LLM subtask


@dataclass
class RequestPlan:
    request: UserRequest
    steps: list[StepPlan]
    llm_correct: bool
    matched: bool


def _stage(i: int, n: int) -> int:
    # early / middle / late thirds of the request
    if i < n / 3:
        return 0
    if i < 2 * n / 3:
        return 1
    return 2


def _poisson(rng: random.Random, lam: float) -> int:
    if lam <= 0:
        return 0
    limit, k, p = math.exp(-lam), 0, 1.0
    while True:
        p *= rng.random()
        if p <= limit:
            return k
        k += 1


def plan_request(config: GeneratorConfig, index: int) -> RequestPlan:
    rng = random.Random(f"{config.seed}:{index}")
    rid = f"r{index:05d}"
    n = min(config.max_len, 1 + _poisson(rng, config.llm_len_mean - 1))
    matched = rng.random() < config.matched_final_fraction
    llm_correct = rng.random() < config.llm_accuracy

    kinds = []
    for i in range(n):
        st = _stage(i, n)
        if not matched and rng.random() < config.fatal_prob[st]:
            kinds.append("fatal")
        elif rng.random() < config.detour_prob[st]:
            kinds.append("detour")
        else:
            kinds.append("ok")
    if not matched and "fatal" not in kinds:
        kinds[rng.randrange(n)] = "fatal"

    steps = []
    budget = config.max_len - n  # extra SLM subtasks allowed
    for i, kind in enumerate(kinds):
        fine = 1
        if rng.random() < config.fine_prob:
            fine = 2 if rng.random() < 0.75 else 3
        fine = min(fine, 1 + budget)
        budget -= fine - 1
        if kind == "ok":
            mean = config.stage_similarity[_stage(i, n)]
            sim = rng.uniform(mean - config.similarity_spread, mean + config.similarity_spread)
        elif kind == "fatal":
            sim = rng.uniform(*config.fatal_similarity)
        else:
            sim = rng.uniform(*config.detour_similarity)
        steps.append(StepPlan(fine, kind, min(1.0, max(0.0, sim))))

    text = " ".join(_sample(random.Random(f"{config.seed}:{index}:request"), config, config.text_tokens))
    truth = " ".join(_sample(random.Random(f"{config.seed}:{index}:truth"), config, config.text_tokens))
    return RequestPlan(UserRequest(rid, text, truth), steps, llm_correct, matched)


def _sample(rng: random.Random, config: GeneratorConfig, k: int, exclude: frozenset = frozenset()) -> list[str]:
    pool = [t for t in vocabulary(config.vocab_size) if t not in exclude]
    return rng.sample(pool, k)


class SyntheticTree(ProfileTree):
    """Generative profiling tree for one planned request.

    Node state is ``(done, part, derailed)``: steps completed, SLM subtasks
    already spent on the current step, and whether a fatal completion was
    accepted on the way here.
    """

    def __init__(self, config: GeneratorConfig, plan: RequestPlan):
        self.config = config
        self.plan = plan
        self.request = plan.request
        self._texts: dict[str, str] = {}

    @property
    def n_steps(self) -> int:
        return len(self.plan.steps)

    # text synthesis

    def _rng(self, label: str) -> random.Random:
        return random.Random(f"{self.config.seed}:{self.request.id}:{label}")

    def text(self, label: str) -> str:
        if label not in self._texts:
            self._texts[label] = self._make(label)
        return self._texts[label]

    def _variant(self, base_label: str, similarity: float, label: str) -> str:
        base = self.text(base_label).split()
        t = self.config.text_tokens
        keep = max(0, min(t, round(similarity * t)))
        rng = self._rng(label)
        kept = rng.sample(base, keep)
        fresh = _sample(rng, self.config, t - keep, frozenset(base))
        return " ".join(kept + fresh)

    def _make(self, label: str) -> str:
        kind, _, rest = label.partition(":")
        if kind == "completion":
            j = int(rest)
            return self._variant(f"llm:{j}", self.plan.steps[j - 1].similarity, label)
        if kind == "fine_llm":
            return self._variant(f"fine:{rest}", FINE_STEP_SIMILARITY, label)
        if kind == "derailed_llm":
            return self._variant(f"derailed:{rest}", DERAILED_SIMILARITY, label)
        if kind == "derailed_fine_llm":
            return self._variant(f"derailed_fine:{rest}", DERAILED_SIMILARITY, label)
        if kind == "truth":
            return self.request.ground_truth or ""
        return " ".join(_sample(self._rng(label), self.config, self.config.text_tokens))

    # tree interface

    def final_for(self, derailed: bool) -> str:
        if derailed:
            return self.text("derailed_final")
        return self.text("truth") if self.plan.llm_correct else self.text("wrong_final")

    def _make_node(self, path: tuple[ModelKind, ...], label: str, state: tuple[int, int, bool]) -> Node:
        done, part, derailed = state
        final = self.final_for(derailed) if done == self.n_steps and part == 0 else None
        return Node(path, self.text(label), final, state)

    def root(self) -> Node:
        return Node((), self.request.text, None, (0, 0, False))

    def child(self, node: Node, model: ModelKind) -> Optional[Node]:
        if node.terminal:
            return None
        done, part, derailed = node.state
        j = done + 1
        step = self.plan.steps[done]
        path = node.path + (model,)
        prefix = "derailed_" if derailed else ""
        if model is SLM:
            if part + 1 < step.fine:
                return self._make_node(path, f"{prefix}fine:{j}.{part + 1}", (done, part + 1, derailed))
            if derailed:
                return self._make_node(path, f"derailed:{j}", (j, 0, True))
            return self._make_node(path, f"completion:{j}", (j, 0, step.kind == "fatal"))
        if part > 0 and part + 1 < step.fine:
            return self._make_node(path, f"{prefix}fine_llm:{j}.{part + 1}", (done, part + 1, derailed))
        label = f"derailed_llm:{j}" if derailed else f"llm:{j}"
        return self._make_node(path, label, (j, 0, derailed))


@dataclass
class Workload:
    config: GeneratorConfig
    trees: list[SyntheticTree] = field(default_factory=list)

    @property
    def requests(self) -> list[UserRequest]:
        return [t.request for t in self.trees]

    def world(self) -> TreeWorld:
        return TreeWorld(self.trees)

    def suite(self, noise: float = 0.0, noise_seed: int = 0, **kw) -> TraceSuite | NoisySuite:
        base = TraceSuite(self.trees, **kw)
        return NoisySuite(base, noise, noise_seed) if noise > 0 else base

    def traces(self, branch_depth: int = 0) -> list[SubtaskTrace]:
        return [t.to_trace(branch_depth) for t in self.trees]


def synthetic_workload(config: GeneratorConfig) -> Workload:
    return Workload(config, [SyntheticTree(config, plan_request(config, i)) for i in range(config.n_requests)])


def generate_workload(config: GeneratorConfig, branch_depth: int = 0) -> list[SubtaskTrace]:
    """Traces of a synthetic workload, with mixed branches up to ``branch_depth`` steps."""
    return synthetic_workload(config).traces(branch_depth)
