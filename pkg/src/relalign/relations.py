"""Core domain types: relation triplets, per-video relation sets, samples.

The flat text format ``Subject: <s>, Predicate: <p>, Object: <o-or-none>``
is the only wire format owned by this module; :func:`format_triplet` and
:func:`parse_triplet_line` are exact inverses for any triplet that passes
construction. Fields containing commas are rejected at construction because
they would make the flat format ambiguous; ingestion substitutes ``;`` for
internal commas before constructing.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import MalformedLine

_WS = re.compile(r"\s+")

# Accepts optional bullet/dash prefixes and case-insensitive labels. The
# subject/predicate captures are non-greedy so a field may itself contain a
# comma as long as it is not followed by the next label.
_LINE_RE = re.compile(
    r"^\s*(?:[-*•·]\s*)?"
    r"subject\s*:\s*(?P<subject>.*?)"
    r"\s*,\s*predicate\s*:\s*(?P<predicate>.*?)"
    r"(?:\s*,\s*object\s*:\s*(?P<object>.*?))?"
    r"\s*$",
    re.IGNORECASE,
)


def _clean(text: str) -> str:
    return _WS.sub(" ", text.strip())


@dataclass(frozen=True, slots=True)
class RelationTriplet:
    """One (subject, predicate, object) unit; object may be absent."""

    subject: str
    predicate: str
    object: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "subject", _clean(self.subject))
        object.__setattr__(self, "predicate", _clean(self.predicate))
        if self.object is not None:
            cleaned = _clean(self.object)
            object.__setattr__(self, "object", cleaned if cleaned else None)
        for name in ("subject", "predicate"):
            if not getattr(self, name):
                raise ValueError(f"triplet {name} must be non-empty")
        for name in ("subject", "predicate", "object"):
            value = getattr(self, name)
            if value is not None and "," in value:
                raise ValueError(
                    f"triplet {name} contains a comma, which the flat text "
                    f"format cannot represent: {value!r}"
                )

    def normalized(self) -> tuple[str, str, str]:
        """Key used for duplicate detection: lowercase, trimmed, collapsed."""
        return (
            self.subject.lower(),
            self.predicate.lower(),
            (self.object or "").lower(),
        )


def format_triplet(triplet: RelationTriplet) -> str:
    """Render a triplet in the flat text format; absent object prints 'none'."""
    obj = triplet.object if triplet.object is not None else "none"
    return f"Subject: {triplet.subject}, Predicate: {triplet.predicate}, Object: {obj}"


def parse_triplet_line(line: str, sanitize_commas: bool = False) -> RelationTriplet:
    """Parse one ``subject: X, predicate: Y, object: Z`` line.

    Labels are case-insensitive, leading bullets and whitespace are
    stripped, and a missing object part or an object of ``none`` yields an
    absent object. Raises :class:`MalformedLine` when subject or predicate
    is missing or empty; callers drop such lines and count them.

    The field labels, not commas, delimit the fields, so a field value may
    itself contain commas. Such values cannot round-trip through the flat
    format; with ``sanitize_commas`` the ingestion path substitutes ``;``,
    without it the line is rejected.
    """
    match = _LINE_RE.match(line)
    if match is None:
        raise MalformedLine(f"not a triplet line: {line!r}")
    subject = _clean(match.group("subject"))
    predicate = _clean(match.group("predicate"))
    if not subject or not predicate:
        raise MalformedLine(f"missing subject or predicate: {line!r}")
    obj: str | None = match.group("object")
    if obj is not None:
        obj = _clean(obj)
        if not obj or obj.lower() == "none":
            obj = None
    if sanitize_commas:
        subject = subject.replace(",", ";")
        predicate = predicate.replace(",", ";")
        obj = obj.replace(",", ";") if obj is not None else None
    try:
        return RelationTriplet(subject, predicate, obj)
    except ValueError as exc:
        raise MalformedLine(str(exc)) from exc


@dataclass(frozen=True, slots=True)
class RelationSet:
    """Unordered set of relations for one video; list order is storage only."""

    triplets: tuple[RelationTriplet, ...]
    video_id: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "triplets", tuple(self.triplets))
        if len(self.triplets) < 1:
            raise ValueError("a relation set must hold at least one triplet")
        seen: set[tuple[str, str, str]] = set()
        for t in self.triplets:
            key = t.normalized()
            if key in seen:
                raise ValueError(f"duplicate triplet after normalization: {key}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.triplets)

    def __iter__(self):
        return iter(self.triplets)


def dedup_triplets(triplets: list[RelationTriplet]) -> list[RelationTriplet]:
    """Drop exact duplicates after normalization, keeping first occurrences."""
    seen: set[tuple[str, str, str]] = set()
    kept: list[RelationTriplet] = []
    for t in triplets:
        key = t.normalized()
        if key not in seen:
            seen.add(key)
            kept.append(t)
    return kept


def sample_relations(
    relations: RelationSet, cap: int, rng: np.random.Generator
) -> RelationSet:
    """Uniformly subsample ``relations`` down to ``cap`` triplets.

    Sets at or under the cap are returned unchanged (same object). Sampling
    is without replacement and deterministic for a given generator state;
    storage order of the survivors is preserved.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    if len(relations) <= cap:
        return relations
    chosen = rng.choice(len(relations), size=cap, replace=False)
    chosen.sort()
    return RelationSet(
        tuple(relations.triplets[i] for i in chosen), relations.video_id
    )


@dataclass(frozen=True)
class VideoSample:
    """Token matrices for one clip plus its relation set.

    ``fast_tokens`` holds one global token per frame, ``slow_tokens`` holds
    patch tokens from a sparser frame subset; both are float32 ``[rows, d_vis]``
    with the same width.
    """

    video_id: str
    fast_tokens: np.ndarray
    slow_tokens: np.ndarray
    relations: RelationSet

    def __post_init__(self) -> None:
        for name in ("fast_tokens", "slow_tokens"):
            arr = np.asarray(getattr(self, name), dtype=np.float32)
            object.__setattr__(self, name, arr)
            if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
                raise ValueError(f"{name} must be a non-empty 2-D matrix")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        if self.fast_tokens.shape[1] != self.slow_tokens.shape[1]:
            raise ValueError("fast and slow tokens must share their width")


@dataclass(frozen=True)
class Assignment:
    """Injective map from relation indices to query indices.

    ``pairs`` lists ``(relation_index, query_index)`` tuples; together with
    ``unmatched_queries`` the query side partitions ``{0..num_queries-1}``.
    """

    pairs: tuple[tuple[int, int], ...]
    unmatched_queries: frozenset[int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "pairs", tuple(tuple(p) for p in self.pairs))
        object.__setattr__(
            self, "unmatched_queries", frozenset(self.unmatched_queries)
        )
        rel_indices = [r for r, _ in self.pairs]
        query_indices = [q for _, q in self.pairs]
        if len(set(rel_indices)) != len(rel_indices):
            raise ValueError("relation indices must be distinct")
        if len(set(query_indices)) != len(query_indices):
            raise ValueError("query indices must be distinct (injectivity)")
        matched = set(query_indices)
        if matched & self.unmatched_queries:
            raise ValueError("a query cannot be both matched and unmatched")
        universe = matched | self.unmatched_queries
        if universe and universe != set(range(len(universe))):
            raise ValueError("query side must partition a 0..M-1 range")

    @property
    def num_queries(self) -> int:
        return len(self.pairs) + len(self.unmatched_queries)

    def query_for(self, relation_index: int) -> int:
        for r, q in self.pairs:
            if r == relation_index:
                return q
        raise KeyError(relation_index)
