"""Oracle assignments: the most SLM-heavy assignment that still ends correctly.

Per request the profiling tree is enumerated exhaustively while every branch
finishes within ``cap`` executed subtasks; deeper trees fall back to a beam
search and the result is flagged approximate. Among leaves whose final output
is judged correct the oracle picks the highest SLM fraction, breaking ties
toward SLM at later positions and then by the lexicographically smallest bit
string (``0`` = SLM).

At workload level the per-request criterion is relaxed greedily: requests are
switched to their most SLM-heavy leaf (correct or not) in order of usage gain
while workload accuracy stays at or above ``floor_frac`` times the All-LLM
accuracy.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

from ..domain import DEFAULT_DEPTH_CAP, Assignment, ModelKind
from ..router import RoutedExecution, execute_with
from ..world import Node, ProfileTree, TreeWorld
from .cost import CostModel
from .policies import Judge, LatencyModel, PolicyReport, summarize

SLM, LLM = ModelKind.SLM, ModelKind.LLM
DEFAULT_ENUM_CAP = 12
DEFAULT_BEAM = 64
DEFAULT_FLOOR_FRAC = 0.9


@dataclass(frozen=True)
class Leaf:
    bits: str
    correct: bool

    @property
    def slm_fraction(self) -> Fraction:
        return Fraction(self.bits.count("0"), len(self.bits))


def leaf_rank(bits: str) -> tuple:
    """Sort key: best first."""
    return (-Fraction(bits.count("0"), len(bits)), bits[::-1], bits)


@dataclass(frozen=True)
class OracleResult:
    request_id: str
    assignment: Assignment
    correct: bool
    floor_unreachable: bool
    approximate: bool
    n_leaves: int

    @property
    def slm_usage(self) -> float:
        return self.assignment.slm_usage


class _Scorer:
    def __init__(self, judge: Judge, reference: str):
        self.judge = judge
        self.reference = reference
        self._memo: dict[str, bool] = {}

    def __call__(self, final: str) -> bool:
        if final not in self._memo:
            self._memo[final] = self.judge.correct(final, self.reference)
        return self._memo[final]


def enumerate_leaves(tree: ProfileTree, score: _Scorer, cap: int) -> Optional[list[Leaf]]:
    """Every terminal assignment, or None if some branch runs past ``cap`` steps."""
    leaves: list[Leaf] = []
    stack: list[tuple[Node, str]] = [(tree.root(), "")]
    while stack:
        node, bits = stack.pop()
        if node.terminal:
            leaves.append(Leaf(bits, score(node.final)))
            continue
        if len(bits) >= cap:
            return None
        for model in (LLM, SLM):
            child = tree.child(node, model)
            if child is not None:
                stack.append((child, bits + model.bit))
    return leaves


def _llm_completion_ok(tree: ProfileTree, node: Node, score: _Scorer, budget: int) -> bool:
    cur = node
    while not cur.terminal and budget > 0:
        nxt = tree.child(cur, LLM)
        if nxt is None:
            return False
        cur, budget = nxt, budget - 1
    return cur.terminal and score(cur.final)


def beam_leaves(tree: ProfileTree, score: _Scorer, depth_cap: int, beam: int) -> list[Leaf]:
    leaves: list[Leaf] = []
    frontier: list[tuple[Node, str]] = [(tree.root(), "")]
    for depth in range(1, depth_cap + 1):
        expanded = []
        for node, bits in frontier:
            for model in (SLM, LLM):
                child = tree.child(node, model)
                if child is None:
                    continue
                b = bits + model.bit
                if child.terminal:
                    leaves.append(Leaf(b, score(child.final)))
                else:
                    expanded.append((child, b))
        ranked = sorted(
            expanded,
            key=lambda nb: (not _llm_completion_ok(tree, nb[0], score, depth_cap - depth), leaf_rank(nb[1])),
        )
        frontier = ranked[:beam]
        if not frontier:
            break
    return leaves


def request_leaves(tree: ProfileTree, score: _Scorer, cap: int = DEFAULT_ENUM_CAP,
                   beam: int = DEFAULT_BEAM, depth_cap: int = DEFAULT_DEPTH_CAP) -> tuple[list[Leaf], bool]:
    leaves = enumerate_leaves(tree, score, cap)
    if leaves is not None:
        return leaves, False
    return beam_leaves(tree, score, depth_cap, beam), True


def best_leaf(leaves: Sequence[Leaf], correct_only: bool = True) -> Optional[Leaf]:
    pool = [l for l in leaves if l.correct or not correct_only]
    if not pool:
        return None
    return min(pool, key=lambda l: leaf_rank(l.bits))


def _all_llm_bits(tree: ProfileTree, depth_cap: int) -> str:
    return "1" * max(1, len(tree.rollout(LLM, depth_cap)))


def oracle_assign(world: TreeWorld, request, judge: Optional[Judge] = None, cap: int = DEFAULT_ENUM_CAP,
                  beam: int = DEFAULT_BEAM, depth_cap: int = DEFAULT_DEPTH_CAP) -> OracleResult:
    judge = judge or Judge()
    tree = world.tree(request.id)
    score = _Scorer(judge, world.reference_output(request))
    leaves, approximate = request_leaves(tree, score, cap, beam, depth_cap)
    best = best_leaf(leaves)
    if best is None:
        return OracleResult(request.id, Assignment.from_bits(_all_llm_bits(tree, depth_cap)), False, True,
                            approximate, len(leaves))
    return OracleResult(request.id, Assignment.from_bits(best.bits), True, False, approximate, len(leaves))


@dataclass
class OracleWorkload:
    assignments: list[Assignment]
    correct: list[bool]
    approximate: list[bool]
    floor: float
    floor_met: bool
    executions: list[RoutedExecution]
    report: PolicyReport


def replay(world: TreeWorld, request, assignment: Assignment, depth_cap: int = DEFAULT_DEPTH_CAP) -> RoutedExecution:
    choices = iter(assignment.choices)
    return execute_with(world, request, lambda node: next(choices, LLM), depth_cap)


def oracle_workload(world: TreeWorld, requests: Sequence, all_llm_accuracy: Optional[float] = None,
                    floor_frac: float = DEFAULT_FLOOR_FRAC, judge: Optional[Judge] = None,
                    cap: int = DEFAULT_ENUM_CAP, beam: int = DEFAULT_BEAM, depth_cap: int = DEFAULT_DEPTH_CAP,
                    latency: Optional[LatencyModel] = None, cost: Optional[CostModel] = None,
                    workload_name: str = "workload") -> OracleWorkload:
    judge = judge or Judge()
    if not requests:
        raise ValueError("empty workload")
    chosen: list[Leaf] = []
    relaxed: list[Optional[Leaf]] = []
    approx: list[bool] = []
    llm_correct = 0
    for r in requests:
        tree = world.tree(r.id)
        score = _Scorer(judge, world.reference_output(r))
        leaves, approximate = request_leaves(tree, score, cap, beam, depth_cap)
        approx.append(approximate)
        llm_path = tree.rollout(LLM, depth_cap)
        llm_correct += bool(llm_path and llm_path[-1].terminal and score(llm_path[-1].final))
        top = best_leaf(leaves, correct_only=False)
        best = best_leaf(leaves)
        if best is None:
            # nothing correct: the most SLM-heavy finished branch, else All-LLM
            chosen.append(top or Leaf(_all_llm_bits(tree, depth_cap), False))
            relaxed.append(None)
        else:
            chosen.append(best)
            relaxed.append(top if top is not None and top.bits != best.bits else None)

    n = len(requests)
    base = llm_correct / n if all_llm_accuracy is None else all_llm_accuracy
    floor = floor_frac * base
    n_correct = sum(l.correct for l in chosen)
    gains = sorted(
        (i for i, alt in enumerate(relaxed) if alt is not None and alt.slm_fraction > chosen[i].slm_fraction),
        key=lambda i: (-(relaxed[i].slm_fraction - chosen[i].slm_fraction), requests[i].id),
    )
    for i in gains:
        alt = relaxed[i]
        drop = int(chosen[i].correct) - int(alt.correct)
        if (n_correct - drop) / n < floor - 1e-12:
            continue
        n_correct -= drop
        chosen[i] = alt

    assignments = [Assignment.from_bits(l.bits) for l in chosen]
    executions = [replay(world, r, a, depth_cap) for r, a in zip(requests, assignments)]
    correct = [l.correct for l in chosen]
    report = summarize("ORACLE", workload_name, requests, executions, correct,
                       latency or LatencyModel(), cost or CostModel())
    return OracleWorkload(assignments, correct, approx, floor, n_correct / n >= floor - 1e-12, executions, report)


def incorrect_assignment_rate(policy_decisions: Sequence[Assignment], oracle_decisions: Sequence[Assignment]) -> float:
    """Position-wise disagreement; positions past the shorter assignment count as mismatches."""
    if not policy_decisions or len(policy_decisions) != len(oracle_decisions):
        raise ValueError("need equally many, and at least one, paired assignments")
    mismatched = total = 0
    for a, b in zip(policy_decisions, oracle_decisions):
        short = min(len(a), len(b))
        mismatched += sum(x is not y for x, y in zip(a.choices[:short], b.choices[:short]))
        mismatched += abs(len(a) - len(b))
        total += max(len(a), len(b))
    return mismatched / total
