from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import reference_group_clips
from relalign.clips import TemporalRelation, group_clips
from relalign.relations import RelationTriplet


def _rel(start, end, tag="x"):
    return TemporalRelation(
        triplet=RelationTriplet(f"s{tag}", f"p{tag}", None),
        start_frame=start,
        end_frame=end,
    )


class TestTemporalRelation:
    def test_negative_start_rejected(self):
        with pytest.raises(ValueError):
            _rel(-1, 5)

    def test_empty_extent_rejected(self):
        with pytest.raises(ValueError):
            _rel(5, 5)


class TestGroupClips:
    def test_single_relation_single_clip(self):
        r = _rel(3, 9)
        clips = group_clips([r])
        assert len(clips) == 1
        (lo, hi), members = clips[0]
        assert (lo, hi) == (3, 9)
        assert members == [r]

    def test_two_cluster_example(self):
        # Hand-derived: sorted extents (0,10),(12,20),(100,110),(105,120)
        # gaps = [max(0,12-10), max(0,100-20), max(0,105-110)] = [2, 80, 0]
        # 75th percentile (linear interpolation) of [0, 2, 80] = 41.0
        # only the gap of 80 exceeds it -> split into two clips.
        rels = [_rel(0, 10, "a"), _rel(12, 20, "b"), _rel(100, 110, "c"), _rel(105, 120, "d")]
        gaps = np.array([2.0, 80.0, 0.0])
        assert np.percentile(gaps, 75) == pytest.approx(41.0)

        clips = group_clips(rels)
        assert len(clips) == 2
        (lo0, hi0), members0 = clips[0]
        (lo1, hi1), members1 = clips[1]
        assert (lo0, hi0) == (0, 20)
        assert (lo1, hi1) == (100, 120)
        assert {m.triplet.subject for m in members0} == {"sa", "sb"}
        assert {m.triplet.subject for m in members1} == {"sc", "sd"}

    def test_all_overlapping_single_clip(self):
        rels = [_rel(0, 50, "a"), _rel(10, 40, "b"), _rel(5, 45, "c")]
        clips = group_clips(rels)
        assert len(clips) == 1
        (lo, hi), members = clips[0]
        assert (lo, hi) == (0, 50)
        assert len(members) == 3

    def test_unsorted_input_is_sorted_first(self):
        rels = [_rel(100, 110, "c"), _rel(0, 10, "a"), _rel(12, 20, "b"), _rel(105, 120, "d")]
        clips = group_clips(rels)
        assert [rng for rng, _ in clips] == [(0, 20), (100, 120)]

    def test_straddling_relation_joins_both_clips(self):
        # A long relation overlapping both clip ranges must appear in both.
        rels = [
            _rel(0, 10, "a"),
            _rel(12, 20, "b"),
            _rel(200, 210, "c"),
            _rel(205, 220, "d"),
            _rel(0, 600, "wide"),
        ]
        clips = group_clips(rels)
        wide_hits = [
            rng for rng, members in clips
            if any(m.triplet.subject == "swide" for m in members)
        ]
        assert len(wide_hits) == len(clips) >= 2

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            group_clips([])

    @settings(max_examples=200, deadline=None)
    @given(
        extents=st.lists(
            st.tuples(st.integers(0, 500), st.integers(1, 200)).map(
                lambda t: (t[0], t[0] + t[1])
            ),
            min_size=1,
            max_size=12,
        )
    )
    def test_matches_reference_implementation(self, extents):
        rels = [_rel(s, e, str(i)) for i, (s, e) in enumerate(extents)]
        clips = group_clips(rels)

        ref = reference_group_clips(extents)
        assert [rng for rng, _ in clips] == [rng for rng, _ in ref]

        for (_, members), (_, ref_member_idx) in zip(clips, ref):
            expected = [rels[i] for i in ref_member_idx]
            assert members == expected

    @settings(max_examples=100, deadline=None)
    @given(
        extents=st.lists(
            st.tuples(st.integers(0, 500), st.integers(1, 200)).map(
                lambda t: (t[0], t[0] + t[1])
            ),
            min_size=1,
            max_size=12,
        )
    )
    def test_union_of_members_covers_input(self, extents):
        rels = [_rel(s, e, str(i)) for i, (s, e) in enumerate(extents)]
        clips = group_clips(rels)
        seen = {id(m) for _, members in clips for m in members}
        assert {id(r) for r in rels} <= seen
