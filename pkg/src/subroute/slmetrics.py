"""S-L distance and S-L similarity: aligning an LLM subtask sequence to an SLM one.

For each LLM subtask ``L_k`` the greedy aligner scans the SLM sequence forward
from one past the previous match and takes the first similar subtask ``S_j``.
The S-L distance is the number of extra SLM subtasks spent before that match,
``j_k - j_(k-1) - 1`` (``j_0 = 0``); no match gives ``INFINITE`` and leaves the
cursor where it was.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence

from .domain import INFINITE, Subtask, SubtaskTrace
from .similarity import DEFAULT_SIMILARITY_THRESHOLD, Embedder, passes, text_similarity


class AlignMethod(str, Enum):
    GREEDY = "greedy"
    OPTIMAL = "optimal"


@dataclass(frozen=True)
class SLAlignment:
    matches: tuple[tuple[int, int], ...]  # 1-based (llm_index, slm_index)
    distances: tuple[float, ...]
    similarities: tuple[float, ...]

    @property
    def infinite_count(self) -> int:
        return sum(1 for d in self.distances if math.isinf(d))


def _contents(path: Sequence[Subtask | str]) -> list[str]:
    return [p if isinstance(p, str) else p.content for p in path]


def _distances(n_llm: int, matches: Sequence[tuple[int, int]]) -> list[float]:
    dist: list[float] = [INFINITE] * n_llm
    prev = 0
    for k, j in matches:
        dist[k - 1] = j - prev - 1
        prev = j
    return dist


def align(
    llm_path: Sequence[Subtask | str],
    slm_path: Sequence[Subtask | str],
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
    embedder: Optional[Embedder] = None,
    method: AlignMethod | str = AlignMethod.GREEDY,
) -> SLAlignment:
    llm, slm = _contents(llm_path), _contents(slm_path)
    if not llm or not slm:
        raise ValueError("both paths must be non-empty")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    sim = [[text_similarity(l, s, embedder) for s in slm] for l in llm]
    if AlignMethod(method) is AlignMethod.OPTIMAL:
        matches = _optimal_matches(sim, threshold)
    else:
        matches = _greedy_matches(sim, threshold)

    # best similarity inside the window each L_k was scanned over
    sims = []
    cursor = 0
    by_llm = dict(matches)
    for k in range(1, len(llm) + 1):
        j = by_llm.get(k)
        window = sim[k - 1][cursor : (j if j is not None else len(slm))]
        sims.append(max(window) if window else 0.0)
        if j is not None:
            cursor = j
    return SLAlignment(tuple(matches), tuple(_distances(len(llm), matches)), tuple(sims))


def _greedy_matches(sim: list[list[float]], threshold: float) -> list[tuple[int, int]]:
    matches = []
    cursor = 0
    for k, row in enumerate(sim, start=1):
        for j in range(cursor, len(row)):
            if passes(row[j], threshold):
                matches.append((k, j + 1))
                cursor = j + 1
                break
    return matches


def _optimal_matches(sim: list[list[float]], threshold: float) -> list[tuple[int, int]]:
    """Monotone matching with the most pairs; ties go to higher total similarity."""
    n, m = len(sim), len(sim[0])
    best = [[(0, 0.0)] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cand = max(best[i - 1][j], best[i][j - 1])
            if passes(sim[i - 1][j - 1], threshold):
                c, s = best[i - 1][j - 1]
                cand = max(cand, (c + 1, s + sim[i - 1][j - 1]))
            best[i][j] = cand
    out = []
    i, j = n, m
    while i > 0 and j > 0:
        if best[i][j] == best[i - 1][j]:
            i -= 1
        elif best[i][j] == best[i][j - 1]:
            j -= 1
        else:
            out.append((i, j))
            i, j = i - 1, j - 1
    return out[::-1]


def sl_distance(trace: SubtaskTrace, threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
                embedder: Optional[Embedder] = None) -> tuple[float, ...]:
    return align(trace.llm_path, trace.slm_path, threshold, embedder).distances


@dataclass(frozen=True)
class ProfileRow:
    seq_id: int
    group: str  # "matched" | "unmatched"
    mean_similarity: float
    mean_finite_distance: Optional[float]
    infinite_count: int
    n: int


def sl_similarity_profile(
    traces: Iterable[SubtaskTrace],
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
    embedder: Optional[Embedder] = None,
    match_threshold: Optional[float] = None,
) -> list[ProfileRow]:
    """Mean S-L similarity per LLM position, split by whether the finals match."""
    match_threshold = threshold if match_threshold is None else match_threshold
    acc: dict[tuple[str, int], list] = {}
    seen = False
    for tr in traces:
        seen = True
        group = "matched" if passes(text_similarity(tr.slm_final, tr.llm_final, embedder), threshold) else "unmatched"
        al = align(tr.llm_path, tr.slm_path, match_threshold, embedder)
        for k, (d, s) in enumerate(zip(al.distances, al.similarities), start=1):
            slot = acc.setdefault((group, k), [0.0, 0, 0.0, 0, 0])
            slot[0] += s
            slot[4] += 1
            if math.isinf(d):
                slot[3] += 1
            else:
                slot[1] += 1
                slot[2] += d
    if not seen:
        raise ValueError("need at least one trace")
    rows = []
    for (group, k), (s, nfin, dsum, ninf, n) in sorted(acc.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        rows.append(ProfileRow(k, group, s / n, dsum / nfin if nfin else None, ninf, n))
    return rows


PROFILE_COLUMNS = ["seq_id", "group", "mean_similarity", "mean_finite_distance", "infinite_count"]


def profile_csv(rows: Sequence[ProfileRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PROFILE_COLUMNS)
    for r in rows:
        w.writerow([
            r.seq_id,
            r.group,
            f"{r.mean_similarity:.6f}",
            "" if r.mean_finite_distance is None else f"{r.mean_finite_distance:.6f}",
            r.infinite_count,
        ])
    return buf.getvalue()

