import math

import pytest
from hypothesis import given, settings, strategies as st

from subroute.domain import INFINITE
from subroute.slmetrics import (
    PROFILE_COLUMNS,
    AlignMethod,
    align,
    profile_csv,
    sl_distance,
    sl_similarity_profile,
)
from subroute.similarity import text_similarity

from builders import block, gapped_trace, make_trace
from conftest import calibrated_workload


def reference_greedy(llm, slm, threshold):
    """Straightforward restatement: scan forward from the last matched SLM index."""
    out, last = [], 0
    for l in llm:
        hit = next((j for j in range(last + 1, len(slm) + 1)
                    if text_similarity(l, slm[j - 1]) >= threshold - 1e-9), None)
        if hit is None:
            out.append(math.inf)
        else:
            out.append(hit - last - 1)
            last = hit
    return out


def test_gapped_trace_distances():
    assert list(sl_distance(gapped_trace())) == [1, 2, 0]


def test_gapped_trace_without_s2_match():
    d = sl_distance(gapped_trace(drop_s2=True))
    assert d[0] == INFINITE
    # the cursor stays put, so L2 is measured from the start
    assert d[1] == 4 and d[2] == 0


def test_identical_paths_all_zero():
    p = [block(i) for i in range(5)]
    assert list(align(p, p).distances) == [0] * 5


def test_no_similar_slm_subtask_is_infinite():
    al = align([block(0)], [block(1), block(2)])
    assert al.distances == (INFINITE,) and al.infinite_count == 1 and al.matches == ()


def test_threshold_zero_matches_next_index():
    llm = [block(i) for i in range(4)]
    slm = [block(10 + i) for i in range(6)]
    al = align(llm, slm, threshold=0.0)
    assert list(al.distances) == [0, 0, 0, 0]
    assert al.matches == ((1, 1), (2, 2), (3, 3), (4, 4))


def test_align_rejects_bad_input():
    with pytest.raises(ValueError):
        align([], [block(0)])
    with pytest.raises(ValueError):
        align([block(0)], [block(0)], threshold=1.5)


def test_optimal_can_beat_greedy():
    # greedy spends S1 on L1 and then cannot place L2; the optimal matcher keeps both
    llm = [block(0), block(1)]
    slm = [block(1), block(0)]
    greedy = align(llm, slm)
    optimal = align(llm, slm, method=AlignMethod.OPTIMAL)
    assert len(greedy.matches) == 1 and len(optimal.matches) == 1
    llm = [block(0), block(1), block(2)]
    slm = [block(0) + " " + block(1), block(1), block(2)]
    assert len(align(llm, slm, threshold=0.7, method="optimal").matches) >= len(align(llm, slm, threshold=0.7).matches)


paths = st.lists(st.integers(0, 6), min_size=1, max_size=10).map(lambda xs: [block(x) for x in xs])


@settings(max_examples=150)
@given(paths, paths)
def test_align_properties(llm, slm):
    al = align(llm, slm)
    assert list(al.distances) == reference_greedy(llm, slm, 0.7)
    js = [j for _, j in al.matches]
    assert js == sorted(set(js))  # strictly increasing
    prev = 0
    for k, j in al.matches:
        assert al.distances[k - 1] == j - prev - 1  # gap identity
        prev = j
    opt = align(llm, slm, method=AlignMethod.OPTIMAL)
    assert len(opt.matches) >= len(al.matches)
    assert all(0.0 <= s <= 1.0 for s in al.similarities)


def test_profile_single_identical_trace():
    p = [block(i) for i in range(4)]
    rows = sl_similarity_profile([make_trace(p, p)])
    assert [(r.seq_id, r.group) for r in rows] == [(k, "matched") for k in range(1, 5)]
    assert all(r.mean_similarity == pytest.approx(1.0) for r in rows)
    assert all(r.mean_finite_distance == 0 and r.infinite_count == 0 for r in rows)


def test_profile_partitions_by_final_match():
    a = make_trace([block(0)], [block(0)], llm_final=block(5), slm_final=block(5), rid="a")
    b = make_trace([block(0)], [block(1)], llm_final=block(5), slm_final=block(6), rid="b")
    rows = sl_similarity_profile([a, b])
    assert sorted((r.group, r.n) for r in rows) == [("matched", 1), ("unmatched", 1)]
    unmatched = next(r for r in rows if r.group == "unmatched")
    assert unmatched.infinite_count == 1 and unmatched.mean_finite_distance is None


def test_profile_needs_traces():
    with pytest.raises(ValueError):
        sl_similarity_profile([])


def test_profile_csv_header():
    text = profile_csv(sl_similarity_profile([gapped_trace()]))
    assert text.splitlines()[0] == ",".join(PROFILE_COLUMNS)


def test_matched_profile_rises_by_stage():
    # the generator's per-stage step similarity rises (early < middle < late), so
    # the matched group's S-L similarity rises across position blocks
    traces = calibrated_workload(1).traces()
    rows = [r for r in sl_similarity_profile(traces) if r.group == "matched"]
    by_k = {r.seq_id: r for r in rows}

    def pooled(ks):
        rs = [by_k[k] for k in ks if k in by_k]
        return sum(r.mean_similarity * r.n for r in rs) / sum(r.n for r in rs)

    blocks = [pooled((1, 2, 3)), pooled((4, 5, 6)), pooled((7, 8, 9))]
    assert blocks == sorted(blocks)
    unmatched = {r.seq_id: r for r in sl_similarity_profile(traces) if r.group == "unmatched"}
    for k in (4, 5, 6):
        assert by_k[k].mean_similarity > unmatched[k].mean_similarity
