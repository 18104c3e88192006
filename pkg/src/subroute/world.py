"""Profiling trees and the execution world that replays them.

A profiling tree has the user request at its root; the child of a node along
model ``M`` is the subtask the agent generates when the next step runs on
``M``. A node's ``path`` is that assignment prefix, so ``len(path)`` is the
seq_id of its subtask. Terminal nodes carry the request's final output.

:class:`TraceTree` rebuilds a tree from a :class:`SubtaskTrace` (pure paths
plus sparse mixed branches). The synthetic generator provides a generative
tree with the same interface. :class:`TreeWorld` executes steps against the
trees; predictors read the same trees through their own lookups.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping, Optional, Sequence

from .domain import (
    Branch,
    ModelKind,
    Subtask,
    SubtaskTrace,
    UserRequest,
    prefix_key,
)

SLM, LLM = ModelKind.SLM, ModelKind.LLM


class WorldError(RuntimeError):
    """The world cannot execute the requested step."""


@dataclass(frozen=True)
class Node:
    path: tuple[ModelKind, ...]
    content: str
    final: Optional[str] = None
    state: Any = field(default=None, compare=False, repr=False)

    @property
    def seq_id(self) -> int:
        return len(self.path)

    @property
    def terminal(self) -> bool:
        return self.final is not None

    def as_subtask(self, request_id: str) -> Subtask:
        return Subtask(self.seq_id, self.content, self.path[-1], request_id, self.path)


class ProfileTree:
    """Base class: subclasses implement ``root`` and ``child``."""

    request: UserRequest

    def root(self) -> Node:
        raise NotImplementedError

    def child(self, node: Node, model: ModelKind) -> Optional[Node]:
        raise NotImplementedError

    def node(self, path: Sequence[ModelKind]) -> Optional[Node]:
        """Node reached by replaying ``path`` from the root (memoized)."""
        path = tuple(path)
        cache = self.__dict__.setdefault("_node_cache", {})
        if path in cache:
            return cache[path]
        if not path:
            cur: Optional[Node] = self.root()
        else:
            parent = self.node(path[:-1])
            cur = None if parent is None or parent.terminal else self.child(parent, path[-1])
        cache[path] = cur
        return cur

    def rollout(self, model: ModelKind, limit: int = 64) -> list[Node]:
        out = []
        cur = self.root()
        while not cur.terminal and len(out) < limit:
            nxt = self.child(cur, model)
            if nxt is None:
                break
            out.append(nxt)
            cur = nxt
        return out

    def pure_path(self, model: ModelKind) -> tuple[Subtask, ...]:
        return tuple(n.as_subtask(self.request.id) for n in self.rollout(model))

    def pure_final(self, model: ModelKind) -> Optional[str]:
        nodes = self.rollout(model)
        return nodes[-1].final if nodes else None

    def iter_nodes(self, max_depth: int) -> Iterator[Node]:
        """Every node reachable within ``max_depth`` steps, breadth first."""
        frontier = [self.root()]
        for _ in range(max_depth):
            nxt = []
            for n in frontier:
                if n.terminal:
                    continue
                for m in (SLM, LLM):
                    c = self.child(n, m)
                    if c is not None:
                        yield c
                        nxt.append(c)
            frontier = nxt

    def to_trace(self, branch_depth: int = 0) -> SubtaskTrace:
        """Flatten into the JSONL interchange record.

        Mixed branches are materialized for every mixed prefix up to
        ``branch_depth`` steps (0 = pure paths only).
        """
        branches = {}
        if branch_depth > 0:
            for n in self.iter_nodes(branch_depth):
                if SLM in n.path and LLM in n.path:
                    branches[prefix_key(n.path)] = Branch(n.content, n.final)
        return SubtaskTrace(
            self.request,
            self.pure_path(SLM),
            self.pure_path(LLM),
            self.pure_final(SLM) or "",
            self.pure_final(LLM) or "",
            branches,
        )


class TraceTree(ProfileTree):
    """Profiling tree backed by a recorded trace.

    Pure prefixes replay the two paths and recorded mixed prefixes replay
    ``mixed_branches``. With ``fill=True`` an unrecorded mixed prefix is
    approximated from the pure paths through their S-L alignment: an SLM step
    continues after the SLM subtask aligned with the current position, an LLM
    step after the last LLM subtask matched at or before it. With
    ``fill=False`` unrecorded prefixes have no child.
    """

    def __init__(self, trace: SubtaskTrace, fill: bool = True, match_threshold: float = 0.7,
                 embedder=None):
        self.trace = trace
        self.request = trace.request
        self.fill = fill
        self.match_threshold = match_threshold
        self.embedder = embedder
        self._matches: Optional[dict[int, int]] = None
        self._index: Optional[dict[str, tuple[ModelKind, int]]] = None

    def root(self) -> Node:
        return Node((), self.request.text)

    def _pure(self, model: ModelKind, i: int, path: tuple[ModelKind, ...]) -> Node:
        seq = self.trace.path_for(model)
        final = self.trace.final_for(model) if i == len(seq) else None
        return Node(path, seq[i - 1].content, final, state=(model, i))

    def child(self, node: Node, model: ModelKind) -> Optional[Node]:
        if node.terminal:
            return None
        path = node.path + (model,)
        if all(m is model for m in path):
            if len(path) > len(self.trace.path_for(model)):
                return None
            return self._pure(model, len(path), path)
        branch = self.trace.mixed_branches.get(prefix_key(path))
        if branch is not None:
            return Node(path, branch.content, branch.final)
        if not self.fill:
            return None
        pos = node.state if node.state is not None else self._locate(node)
        if pos is None:
            return None
        return self._pure(model, self._next_index(pos, model), path)

    def _locate(self, node: Node) -> Optional[tuple[ModelKind, int]]:
        if not node.path:
            return (LLM, 0)
        if self._index is None:
            idx: dict[str, tuple[ModelKind, int]] = {}
            for model in (SLM, LLM):
                for i, st in enumerate(self.trace.path_for(model), start=1):
                    idx.setdefault(st.content, (model, i))
            self._index = idx
        return self._index.get(node.content)

    def _llm_to_slm(self) -> dict[int, int]:
        if self._matches is None:
            from .slmetrics import align

            al = align(self.trace.llm_path, self.trace.slm_path, self.match_threshold, self.embedder)
            self._matches = dict(al.matches)
        return self._matches

    def _next_index(self, pos: tuple[ModelKind, int], model: ModelKind) -> int:
        at, i = pos
        matches = self._llm_to_slm()
        n = len(self.trace.path_for(model))
        if at is model:
            return min(i + 1, n)
        if model is SLM:
            # SLM position of the latest LLM subtask (<= i) that has a match
            j = max((matches[k] for k in matches if k <= i), default=0)
            return min(j + 1, n)
        k = max((k for k, j in matches.items() if j <= i), default=0)
        return min(k + 1, n)

    def pure_path(self, model: ModelKind) -> tuple[Subtask, ...]:
        return self.trace.path_for(model)

    def pure_final(self, model: ModelKind) -> Optional[str]:
        return self.trace.final_for(model)

    def to_trace(self, branch_depth: int = 0) -> SubtaskTrace:
        return self.trace


class TreeWorld:
    """Execution world that replays profiling trees.

    ``step`` raises :class:`WorldError` when the tree has no record of the
    requested branch; callers treat that as an execution failure.
    """

    def __init__(self, trees: Mapping[str, ProfileTree] | Sequence[ProfileTree]):
        if isinstance(trees, Mapping):
            self._trees = dict(trees)
        else:
            self._trees = {t.request.id: t for t in trees}

    def tree(self, request_id: str) -> ProfileTree:
        try:
            return self._trees[request_id]
        except KeyError:
            raise WorldError(f"no profile for request {request_id!r}") from None

    def root(self, request: UserRequest) -> Node:
        return self.tree(request.id).root()

    def step(self, request: UserRequest, node: Node, model: ModelKind) -> Node:
        if node.terminal:
            raise WorldError(f"{request.id}: request already finished at seq {node.seq_id}")
        nxt = self.tree(request.id).child(node, model)
        if nxt is None:
            raise WorldError(f"{request.id}: no recorded outcome for prefix {prefix_key(node.path + (model,))!r}")
        return nxt

    def reference_output(self, request: UserRequest) -> str:
        """Ground truth when known, else the all-LLM final output."""
        if request.ground_truth:
            return request.ground_truth
        return self.tree(request.id).pure_final(LLM) or ""
