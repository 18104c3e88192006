"""JSONL trace files and workloads loaded from them."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from ..domain import DEFAULT_DEPTH_CAP, SubtaskTrace, TraceError, UserRequest, validate_trace
from ..predictors import NoisySuite, TraceSuite
from ..world import TraceTree, TreeWorld


class TraceFileError(ValueError):
    def __init__(self, path: str | Path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


def read_traces(path: str | Path, depth_cap: int = DEFAULT_DEPTH_CAP) -> list[SubtaskTrace]:
    """Parse and validate a JSONL trace file (OSError propagates for missing files)."""
    traces = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                trace = validate_trace(SubtaskTrace.from_json(line), depth_cap)
            except json.JSONDecodeError as exc:
                raise TraceFileError(path, lineno, f"invalid JSON: {exc.msg}") from None
            except TraceError as exc:
                raise TraceFileError(path, lineno, str(exc)) from None
            if trace.request.id in seen:
                raise TraceFileError(path, lineno, f"duplicate request_id {trace.request.id!r}")
            seen.add(trace.request.id)
            traces.append(trace)
    return traces


def write_traces(path: str | Path, traces: Iterable[SubtaskTrace]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in traces:
            fh.write(t.to_json() + "\n")


@dataclass
class TraceWorkload:
    """Workload replayed from recorded traces."""

    traces: list[SubtaskTrace]
    fill: bool = True

    def __post_init__(self) -> None:
        self.trees = [TraceTree(t, fill=self.fill) for t in self.traces]

    @property
    def requests(self) -> list[UserRequest]:
        return [t.request for t in self.traces]

    def world(self) -> TreeWorld:
        return TreeWorld(self.trees)

    def suite(self, noise: float = 0.0, noise_seed: int = 0, **kw) -> TraceSuite | NoisySuite:
        base = TraceSuite(self.trees, **kw)
        return NoisySuite(base, noise, noise_seed) if noise > 0 else base


def load_workload(path: str | Path, depth_cap: int = DEFAULT_DEPTH_CAP) -> TraceWorkload:
    return TraceWorkload(read_traces(path, depth_cap))
