"""Core value types shared by the router, predictors and evaluation harness.

Everything here is immutable after construction. The JSONL trace format
(one :class:`SubtaskTrace` per line) is defined by ``SubtaskTrace.to_dict`` /
``SubtaskTrace.from_dict``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Any, Iterable, Mapping, Optional

DEFAULT_DEPTH_CAP = 15

# S-L distance for an LLM subtask with no matching SLM subtask.
INFINITE = math.inf

SimilarityScore = float


class ModelKind(str, Enum):
    SLM = "SLM"
    LLM = "LLM"

    @property
    def bit(self) -> str:
        # router codomain: 0 -> SLM, 1 -> LLM
        return "0" if self is ModelKind.SLM else "1"

    @classmethod
    def from_bit(cls, ch: str) -> "ModelKind":
        if ch == "0":
            return cls.SLM
        if ch == "1":
            return cls.LLM
        raise ValueError(f"invalid assignment bit {ch!r}")


class Stage(str, Enum):
    URC = "URC"
    SSE = "SSE"
    SLE = "SLE"
    CD = "CD"
    SD = "SD"
    FALLBACK_LLM = "FALLBACK_LLM"


class TraceError(ValueError):
    """A trace violates one of the domain invariants."""


def prefix_key(path: Iterable[ModelKind]) -> str:
    return "".join(m.bit for m in path)


def parse_prefix(key: str) -> tuple[ModelKind, ...]:
    return tuple(ModelKind.from_bit(ch) for ch in key)


@dataclass(frozen=True)
class UserRequest:
    id: str
    text: str
    ground_truth: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("request id must be non-empty")
        if not self.text:
            raise ValueError("request text must be non-empty")


@dataclass(frozen=True)
class Subtask:
    """One step of a request's decomposition.

    ``request_id`` and ``path`` are lookup context: the owning request and the
    assignment prefix (one model per executed step) that produced this subtask.
    Predictors backed by a profiling tree use them to find the node.
    """

    seq_id: int
    content: str
    producer: ModelKind
    request_id: str = ""
    path: tuple[ModelKind, ...] = ()

    def __post_init__(self) -> None:
        if self.seq_id < 1:
            raise ValueError(f"seq_id must be >= 1, got {self.seq_id}")
        if not self.content:
            raise ValueError("subtask content must be non-empty")


@dataclass(frozen=True)
class Branch:
    """Node reached by a mixed assignment prefix in the profiling tree."""

    content: str
    final: Optional[str] = None


@dataclass(frozen=True)
class SubtaskTrace:
    request: UserRequest
    slm_path: tuple[Subtask, ...]
    llm_path: tuple[Subtask, ...]
    slm_final: str
    llm_final: str
    mixed_branches: Mapping[str, Branch] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "slm_path", tuple(self.slm_path))
        object.__setattr__(self, "llm_path", tuple(self.llm_path))
        object.__setattr__(self, "mixed_branches", MappingProxyType(dict(self.mixed_branches)))

    def path_for(self, model: ModelKind) -> tuple[Subtask, ...]:
        return self.slm_path if model is ModelKind.SLM else self.llm_path

    def final_for(self, model: ModelKind) -> str:
        return self.slm_final if model is ModelKind.SLM else self.llm_final

    def to_dict(self) -> dict[str, Any]:
        return {
            "request_id": self.request.id,
            "request_text": self.request.text,
            "ground_truth": self.request.ground_truth,
            "slm_path": [{"seq_id": s.seq_id, "content": s.content} for s in self.slm_path],
            "llm_path": [{"seq_id": s.seq_id, "content": s.content} for s in self.llm_path],
            "slm_final": self.slm_final,
            "llm_final": self.llm_final,
            "mixed_branches": {
                k: {"next": b.content, "final": b.final}
                for k, b in sorted(self.mixed_branches.items(), key=lambda kv: (len(kv[0]), kv[0]))
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SubtaskTrace":
        try:
            request = UserRequest(d["request_id"], d["request_text"], d.get("ground_truth"))

            def _path(items: list, model: ModelKind) -> tuple[Subtask, ...]:
                out = []
                for i, it in enumerate(items):
                    # a pure-path subtask sits at the all-`model` prefix of its position
                    if isinstance(it, str):
                        out.append(Subtask(i + 1, it, model, request.id, (model,) * (i + 1)))
                    else:
                        seq = int(it["seq_id"])
                        out.append(Subtask(seq, it["content"], model, request.id, (model,) * max(seq, 0)))
                return tuple(out)

            slm = _path(d["slm_path"], ModelKind.SLM)
            llm = _path(d["llm_path"], ModelKind.LLM)
            branches = {
                k: Branch(v["next"], v.get("final")) for k, v in (d.get("mixed_branches") or {}).items()
            }
            return cls(request, slm, llm, d["slm_final"], d["llm_final"], branches)
        except KeyError as exc:
            raise TraceError(f"missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise TraceError(str(exc)) from None

    @classmethod
    def from_json(cls, line: str) -> "SubtaskTrace":
        return cls.from_dict(json.loads(line))


def validate_trace(trace: SubtaskTrace, depth_cap: int = DEFAULT_DEPTH_CAP) -> SubtaskTrace:
    """Return ``trace`` unchanged if every invariant holds, else raise TraceError."""
    rid = trace.request.id
    for name, model in (("slm_path", ModelKind.SLM), ("llm_path", ModelKind.LLM)):
        path = trace.path_for(model)
        if not path:
            raise TraceError(f"{rid}: {name}: empty path")
        if len(path) > depth_cap:
            raise TraceError(
                f"{rid}: {name}: length {len(path)} exceeds profiling depth {depth_cap}"
            )
        for i, st in enumerate(path):
            if st.seq_id != i + 1:
                raise TraceError(f"{rid}: {name}[{i}]: bad seq_id ordering (expected {i + 1}, got {st.seq_id})")
            if st.producer is not model:
                raise TraceError(f"{rid}: {name}[{i}]: producer {st.producer.value} on {model.value} path")
    for key, branch in trace.mixed_branches.items():
        if not key or set(key) - {"0", "1"}:
            raise TraceError(f"{rid}: mixed_branches[{key!r}]: invalid prefix")
        if len(key) > depth_cap:
            raise TraceError(f"{rid}: mixed_branches[{key!r}]: prefix exceeds profiling depth {depth_cap}")
        if not branch.content:
            raise TraceError(f"{rid}: mixed_branches[{key!r}]: empty subtask")
    return trace


@dataclass(frozen=True)
class Assignment:
    choices: tuple[ModelKind, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "choices", tuple(self.choices))
        if not self.choices:
            raise ValueError("assignment must cover at least one subtask")

    def __len__(self) -> int:
        return len(self.choices)

    @property
    def slm_usage(self) -> float:
        return sum(c is ModelKind.SLM for c in self.choices) / len(self.choices)

    def bits(self) -> str:
        return prefix_key(self.choices)

    @classmethod
    def from_bits(cls, bits: str) -> "Assignment":
        return cls(parse_prefix(bits))


@dataclass(frozen=True)
class RoutingDecision:
    subtask_seq_id: int
    choice: ModelKind
    stage: Stage
    detail: str = ""
    kappa: Optional[float] = None
    score: Optional[float] = None

    def __post_init__(self) -> None:
        if self.stage is Stage.URC and self.subtask_seq_id != 0:
            raise ValueError("URC decisions apply to the whole request (seq_id 0)")
        # seq_id 0 is the request itself; only URC or the plain LLM start may claim it
        if self.stage not in (Stage.URC, Stage.FALLBACK_LLM) and self.subtask_seq_id < 1:
            raise ValueError("subtask decisions need seq_id >= 1")
        if self.stage is Stage.FALLBACK_LLM and self.choice is not ModelKind.LLM:
            raise ValueError("FALLBACK_LLM must choose the LLM")

    def to_log(self) -> dict[str, Any]:
        return {
            "seq_id": self.subtask_seq_id,
            "choice": self.choice.value,
            "stage": self.stage.value,
            "detail": self.detail,
            "kappa": self.kappa,
            "score": self.score,
        }
