"""The five routing estimators behind one interface.

* ``urc``: request -> predicted similarity of the SLM and LLM final outputs
* ``sp(model, current)``: next subtask if ``current`` is processed on ``model``
* ``dp(content, seq_id)``: S-L distance of an LLM subtask
* ``sd(current, predicted_next_llm)``: finer sub-subtasks for ``current``

:class:`TraceSuite` answers from profiling trees, :class:`NoisySuite` degrades
another suite to a target error rate, and :class:`RemoteSuite` forwards each
call to an HTTP endpoint.
"""
from __future__ import annotations

import hashlib
import math
from typing import Any, Iterable, Mapping, Optional, Protocol, Sequence

import httpx

from .domain import (
    DEFAULT_DEPTH_CAP,
    INFINITE,
    ModelKind,
    Subtask,
    UserRequest,
    parse_prefix,
    prefix_key,
)
from .similarity import (
    DEFAULT_SIMILARITY_THRESHOLD,
    Embedder,
    ThresholdSchedule,
    passes,
    text_similarity,
)
from .slmetrics import align
from .world import Node, ProfileTree, TraceTree

SLM, LLM = ModelKind.SLM, ModelKind.LLM
DEFAULT_SD_MAX = 4
REMOTE_TIMEOUT_S = 10.0
ROLES = ("urc", "sp_slm", "sp_llm", "dp", "sd")


class PredictorError(RuntimeError):
    pass


class NoProfile(PredictorError):
    """The suite has no backing data for this request."""


class SequenceExhausted(PredictorError):
    """There is no next subtask: the request is finished on that branch."""


class PredictorUnavailable(PredictorError):
    """Transport or protocol failure talking to a remote predictor."""


class PredictorSuite(Protocol):
    def urc(self, request: UserRequest) -> float: ...

    def sp(self, model: ModelKind, current: Subtask) -> Subtask: ...

    def dp(self, content: str, seq_id: int, request_id: Optional[str] = None) -> float: ...

    def sd(self, current: Subtask, predicted_next_llm: Subtask) -> list[Subtask]: ...


def urc_predict(suite: PredictorSuite, request: UserRequest) -> float:
    return suite.urc(request)


def sp_predict(suite: PredictorSuite, model: ModelKind, current: Subtask) -> Subtask:
    return suite.sp(model, current)


def dp_predict(suite: PredictorSuite, content: str, seq_id: int, request_id: Optional[str] = None) -> float:
    if seq_id < 1:
        raise ValueError(f"seq_id must be >= 1, got {seq_id}")
    return suite.dp(content, seq_id, request_id)


def sd_decompose(suite: PredictorSuite, current: Subtask, predicted_next_llm: Subtask) -> list[Subtask]:
    return suite.sd(current, predicted_next_llm)


def cap_merge(parts: Sequence[Subtask], cap: int) -> list[Subtask]:
    """Keep the first ``cap - 1`` parts and merge the rest into one."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    if len(parts) <= cap:
        return list(parts)
    head, tail = list(parts[: cap - 1]), parts[cap - 1 :]
    last = tail[-1]
    merged = Subtask(last.seq_id, " ".join(p.content for p in tail), last.producer, last.request_id, last.path)
    return head + [merged]


class TraceSuite:
    """Deterministic predictors that read the answers off profiling trees.

    SP looks up the child of the node addressed by ``current.path`` (or by its
    content on the pure paths when no path is given). DP reports the greedy S-L
    distance of the pure paths. SD follows the SLM branch from ``current``
    until it produces a subtask similar to ``predicted_next_llm``; those
    intermediate steps become the sub-subtasks.
    """

    def __init__(
        self,
        trees: Mapping[str, ProfileTree] | Iterable[ProfileTree],
        embedder: Optional[Embedder] = None,
        match_threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
        sd_max: int = DEFAULT_SD_MAX,
        span_limit: int = DEFAULT_DEPTH_CAP,
    ):
        if isinstance(trees, Mapping):
            self.trees = dict(trees)
        else:
            self.trees = {t.request.id: t for t in trees}
        self.embedder = embedder
        self.match_threshold = match_threshold
        self.sd_max = sd_max
        self.span_limit = span_limit
        self._distances: dict[str, dict[tuple[str, int], float]] = {}
        self._content_index: Optional[dict[str, list[tuple[str, tuple[ModelKind, ...]]]]] = None

    @classmethod
    def from_traces(cls, traces: Iterable, **kw) -> "TraceSuite":
        return cls([TraceTree(t) for t in traces], **kw)

    # lookup helpers

    def _tree(self, request_id: str) -> ProfileTree:
        try:
            return self.trees[request_id]
        except KeyError:
            raise NoProfile(f"no profile for request {request_id!r}") from None

    def _index(self) -> dict[str, list[tuple[str, tuple[ModelKind, ...]]]]:
        if self._content_index is None:
            idx: dict[str, list] = {}
            for rid in sorted(self.trees):
                tree = self.trees[rid]
                for model in (LLM, SLM):
                    for st in tree.pure_path(model):
                        idx.setdefault(st.content, []).append((rid, (model,) * st.seq_id))
            self._content_index = idx
        return self._content_index

    def locate(self, current: Subtask) -> tuple[ProfileTree, Node]:
        if current.request_id and current.path:
            tree = self._tree(current.request_id)
            node = tree.node(current.path)
            if node is not None:
                return tree, node
        hits = self._index().get(current.content, [])
        if current.request_id:
            hits = [h for h in hits if h[0] == current.request_id]
        # prefer the path of the subtask's own producer at the same position
        hits = sorted(hits, key=lambda h: (len(h[1]) != current.seq_id, h[1][0] is not current.producer))
        for rid, path in hits:
            tree = self.trees[rid]
            node = tree.node(path)
            if node is not None:
                return tree, node
        raise NoProfile(f"unknown subtask {current.content[:40]!r}")

    # predictor roles

    def urc(self, request: UserRequest) -> float:
        tree = self._tree(request.id)
        slm_final = tree.pure_final(SLM)
        llm_final = tree.pure_final(LLM)
        if not slm_final or not llm_final:
            raise NoProfile(f"request {request.id!r} has no recorded final outputs")
        return text_similarity(slm_final, llm_final, self.embedder)

    def sp(self, model: ModelKind, current: Subtask) -> Subtask:
        try:
            tree, node = self.locate(current)
        except NoProfile:
            raise SequenceExhausted(f"no successor recorded for {current.content[:40]!r}") from None
        if node.terminal:
            raise SequenceExhausted(f"{tree.request.id}: finished at seq {node.seq_id}")
        nxt = tree.child(node, model)
        if nxt is None:
            raise SequenceExhausted(f"{tree.request.id}: no {model.value} successor at {prefix_key(node.path)!r}")
        return Subtask(current.seq_id + 1, nxt.content, model, tree.request.id, nxt.path)

    def distances(self, request_id: str) -> dict[tuple[str, int], float]:
        """S-L distance of every pure-LLM-path subtask, keyed by (content, seq_id)."""
        if request_id not in self._distances:
            tree = self._tree(request_id)
            llm = tree.pure_path(LLM)
            al = align(llm, tree.pure_path(SLM), self.match_threshold, self.embedder)
            table: dict[tuple[str, int], float] = {}
            for st, d in zip(llm, al.distances):
                table.setdefault((st.content, st.seq_id), d)
            self._distances[request_id] = table
        return self._distances[request_id]

    def dp(self, content: str, seq_id: int, request_id: Optional[str] = None) -> float:
        if request_id:
            if request_id not in self.trees:
                return INFINITE
            rids = [request_id]
        else:
            rids = sorted({rid for rid, path in self._index().get(content, []) if path[0] is LLM})
        for rid in rids:
            d = self.distances(rid).get((content, seq_id))
            if d is not None:
                return d
        return INFINITE

    def sd(self, current: Subtask, predicted_next_llm: Subtask) -> list[Subtask]:
        try:
            tree, node = self.locate(current)
        except NoProfile:
            return [current]
        steps: list[Node] = []
        found = False
        cur = node
        while not cur.terminal and len(steps) < self.span_limit:
            nxt = tree.child(cur, SLM)
            if nxt is None:
                break
            steps.append(nxt)
            cur = nxt
            if passes(text_similarity(nxt.content, predicted_next_llm.content, self.embedder), self.match_threshold):
                found = True
                break
        if not found or len(steps) <= 1:
            return [current]
        # sub-subtasks keep the parent's seq_id; their paths locate the tree nodes
        parts = [Subtask(current.seq_id, n.content, SLM, tree.request.id, n.path) for n in steps]
        return cap_merge(parts, self.sd_max)


def _unit_hash(*parts: Any) -> float:
    h = hashlib.blake2b("\x1f".join(str(p) for p in parts).encode(), digest_size=8).digest()
    return int.from_bytes(h, "big") / 2.0**64


class NoisySuite:
    """Wraps a suite and corrupts a deterministic fraction ``noise`` of answers.

    A corrupted URC score becomes ``1 - score``; a corrupted DP answer moves to
    the wrong side (``d + 1``, or 0 for an infinite distance); a corrupted SLM
    next-subtask prediction flips the outcome of the SLM/LLM similarity check
    at ``threshold_at(seq_id)``.
    """

    def __init__(self, inner: PredictorSuite, noise: float, seed: int = 0,
                 schedule: Optional[ThresholdSchedule] = None, embedder: Optional[Embedder] = None):
        if not 0.0 <= noise <= 0.5:
            raise ValueError("noise must lie in [0, 0.5]")
        self.inner = inner
        self.noise = noise
        self.seed = seed
        self.schedule = schedule or ThresholdSchedule()
        self.embedder = embedder

    def _flip(self, *key: Any) -> bool:
        return self.noise > 0 and _unit_hash(self.seed, *key) < self.noise

    def urc(self, request: UserRequest) -> float:
        score = self.inner.urc(request)
        return 1.0 - score if self._flip("urc", request.id) else score

    def dp(self, content: str, seq_id: int, request_id: Optional[str] = None) -> float:
        d = self.inner.dp(content, seq_id, request_id)
        if not self._flip("dp", request_id, seq_id, content):
            return d
        return 0 if math.isinf(d) else d + 1

    def sp(self, model: ModelKind, current: Subtask) -> Subtask:
        out = self.inner.sp(model, current)
        if model is LLM or not self._flip("sp", current.request_id, prefix_key(current.path), current.content):
            return out
        try:
            other = self.inner.sp(LLM, current)
        except SequenceExhausted:
            return out
        kappa = self.schedule.threshold_at(max(current.seq_id, 1))
        similar = passes(text_similarity(out.content, other.content, self.embedder), kappa)
        content = _scramble(out.content) if similar else other.content
        return Subtask(out.seq_id, content, out.producer, out.request_id, out.path)

    def sd(self, current: Subtask, predicted_next_llm: Subtask) -> list[Subtask]:
        return self.inner.sd(current, predicted_next_llm)


def _scramble(text: str) -> str:
    digest = hashlib.blake2b(text.encode(), digest_size=16).hexdigest()
    return " ".join(f"noise{digest[i:i + 4]}" for i in range(0, 32, 4))


# remote adapter

def subtask_to_json(st: Subtask) -> dict[str, Any]:
    return {
        "seq_id": st.seq_id,
        "content": st.content,
        "producer": st.producer.value,
        "request_id": st.request_id,
        "path": prefix_key(st.path),
    }


def subtask_from_json(d: Mapping[str, Any]) -> Subtask:
    return Subtask(
        int(d["seq_id"]),
        d["content"],
        ModelKind(d["producer"]),
        d.get("request_id") or "",
        parse_prefix(d.get("path") or ""),
    )


def answer(suite: PredictorSuite, role: str, inputs: Mapping[str, Any]) -> Any:
    """Server side of the remote contract: evaluate ``role`` on JSON inputs.

    ``null`` encodes "no profile" (urc), "sequence exhausted" (sp_*) and an
    infinite distance (dp).
    """
    if role == "urc":
        r = inputs["request"]
        try:
            return suite.urc(UserRequest(r["id"], r["text"], r.get("ground_truth")))
        except NoProfile:
            return None
    if role in ("sp_slm", "sp_llm"):
        model = SLM if role == "sp_slm" else LLM
        try:
            return subtask_to_json(suite.sp(model, subtask_from_json(inputs["current"])))
        except SequenceExhausted:
            return None
    if role == "dp":
        d = suite.dp(inputs["content"], int(inputs["seq_id"]), inputs.get("request_id"))
        return None if math.isinf(d) else int(d)
    if role == "sd":
        parts = suite.sd(subtask_from_json(inputs["current"]), subtask_from_json(inputs["predicted_next_llm"]))
        return [subtask_to_json(p) for p in parts]
    raise ValueError(f"unknown predictor role {role!r}")


class RemoteSuite:
    """Predictor suite that calls ``POST {"role", "inputs"} -> {"output"}``."""

    def __init__(self, url: str, client: Optional[httpx.Client] = None, timeout: float = REMOTE_TIMEOUT_S):
        self.url = url
        self._client = client or httpx.Client(timeout=timeout)

    def _call(self, role: str, inputs: dict[str, Any]) -> Any:
        try:
            resp = self._client.post(self.url, json={"role": role, "inputs": inputs})
            resp.raise_for_status()
            body = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise PredictorUnavailable(f"{role}: {exc}") from exc
        if not isinstance(body, dict) or "output" not in body:
            raise PredictorUnavailable(f"{role}: malformed response")
        return body["output"]

    def urc(self, request: UserRequest) -> float:
        out = self._call("urc", {"request": {"id": request.id, "text": request.text,
                                             "ground_truth": request.ground_truth}})
        if out is None:
            raise NoProfile(f"no profile for request {request.id!r}")
        return float(out)

    def sp(self, model: ModelKind, current: Subtask) -> Subtask:
        role = "sp_slm" if model is SLM else "sp_llm"
        out = self._call(role, {"current": subtask_to_json(current)})
        if out is None:
            raise SequenceExhausted(f"remote {role}: no successor")
        try:
            return subtask_from_json(out)
        except (KeyError, TypeError, ValueError) as exc:
            raise PredictorUnavailable(f"{role}: bad subtask payload: {exc}") from exc

    def dp(self, content: str, seq_id: int, request_id: Optional[str] = None) -> float:
        out = self._call("dp", {"content": content, "seq_id": seq_id, "request_id": request_id})
        return INFINITE if out is None else int(out)

    def sd(self, current: Subtask, predicted_next_llm: Subtask) -> list[Subtask]:
        out = self._call("sd", {"current": subtask_to_json(current),
                                "predicted_next_llm": subtask_to_json(predicted_next_llm)})
        try:
            parts = [subtask_from_json(p) for p in out]
        except (KeyError, TypeError, ValueError) as exc:
            raise PredictorUnavailable(f"sd: bad payload: {exc}") from exc
        return parts or [current]
