"""Group temporally annotated relations into clips at large gaps.

Relations with frame extents are sorted by start frame, the gap between
consecutive relations (end of one to start of the next, clamped at zero so
overlap never splits) is computed, and the stream is split wherever a gap
exceeds the 75th percentile of all gaps. Each clip covers the min start to
max end of its members, and any relation whose extent overlaps that range
is pulled in, so a clip can hold relations from other split groups.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .relations import RelationTriplet


@dataclass(frozen=True, slots=True)
class TemporalRelation:
    """A relation triplet with its frame extent."""

    triplet: RelationTriplet
    start_frame: int
    end_frame: int

    def __post_init__(self) -> None:
        if self.start_frame < 0:
            raise ValueError("start_frame must be non-negative")
        if self.end_frame <= self.start_frame:
            raise ValueError("end_frame must exceed start_frame")


FrameRange = tuple[int, int]


def _overlaps(rel: TemporalRelation, lo: int, hi: int) -> bool:
    # Extents are closed at the start and open at the end, so touching
    # boundaries do not count as overlap.
    return rel.start_frame < hi and rel.end_frame > lo


def group_clips(
    relations: list[TemporalRelation],
) -> list[tuple[FrameRange, list[TemporalRelation]]]:
    """Split a video's relations into clips at large temporal gaps.

    Returns ``(frame_range, members)`` pairs ordered by range start. The
    union of members covers the input; a relation overlapping two clip
    ranges appears in both.
    """
    if not relations:
        raise ValueError("group_clips requires at least one relation")
    ordered = sorted(relations, key=lambda r: (r.start_frame, r.end_frame))
    if len(ordered) == 1:
        only = ordered[0]
        return [((only.start_frame, only.end_frame), [only])]

    gaps = np.array(
        [
            max(0, ordered[i + 1].start_frame - ordered[i].end_frame)
            for i in range(len(ordered) - 1)
        ],
        dtype=np.float64,
    )
    threshold = float(np.percentile(gaps, 75))

    groups: list[list[TemporalRelation]] = [[ordered[0]]]
    for i in range(1, len(ordered)):
        if gaps[i - 1] > threshold:
            groups.append([])
        groups[-1].append(ordered[i])

    clips: list[tuple[FrameRange, list[TemporalRelation]]] = []
    for members in groups:
        lo = min(r.start_frame for r in members)
        hi = max(r.end_frame for r in members)
        full = [r for r in ordered if _overlaps(r, lo, hi)]
        clips.append(((lo, hi), full))
    return clips
