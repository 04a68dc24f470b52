"""Caption to relation-triplet extraction through a text-generation client.

The instruction prompt carries five worked caption/triplet examples and asks
for one ``subject: X, predicate: Y, object: Z`` line per relation. Clients
only need to map prompt text to response text; an HTTP implementation talks
to a real serving endpoint while the mock replays canned responses and is
what every test uses.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol

from .errors import ClientError, MalformedLine
from .relations import RelationTriplet, dedup_triplets, parse_triplet_line

log = logging.getLogger(__name__)

SENTENCE_SLOT = "{sentence}"

PROMPT_TEMPLATE = """[INST] You are a software to extract relationships from sentences.
Extract explicit and factual relationships between objects in the last sentence.
Use the same formatting as below. No other text.
One instance per subject, object, and predicate. Be exhaustive.

Sentence: 'A video of a person on the  side of a table holding food.'
subject: person, predicate: on the side of, object: table
subject: person, predicate: holding, object: food

Sentence: 'A kid touching the table  while sitting on a chair.'
subject: kid, predicate: touching, object: table
subject: kid, predicate: sitting on, object: chair

Sentence: 'A man putting on shoes and clothes.
Behind him two trees next to each other.'
subject: man, predicate: holding, object: shoe
subject: man, predicate: holding, object: clothes
subject: two trees, predicate: behind, object: him
subject: tree, predicate: next to, object: tree

Sentence: 'Woman sets table with plates, silverware, glasses,
before placing oatmeal pot and juice pitcher in center. Calls family.'
subject: woman, predicate: set, object: table
subject: woman, predicate: set, object: plates
subject: woman, predicate: set, object: silverware
subject: woman, predicate: set, object: glasses
subject: woman, predicate: placing, object: oatmeal pot
subject: woman, predicate: placing, object: juice pitcher
subject: oatmeal pot, predicate: in center of, object: table
subject: juice pitcher, predicate: in center of, object: table
subject: woman, predicate: call, object: family

Sentence: 'Children playing on swings and slide. Couple sits on bench,
holding hands.'
subject: children, predicate: playing on, object: swings
subject: couple, predicate: sit on, object: bench
subject: couple, predicate: holding, object: hands [/INST]
Sentence: {sentence}"""


def render_prompt(caption: str) -> str:
    """Fill the sentence slot; the caption appears exactly once, at the end."""
    if not caption or not caption.strip():
        raise ValueError("caption must be non-empty")
    return PROMPT_TEMPLATE.replace(SENTENCE_SLOT, caption.strip())


class LLMClient(Protocol):
    """Text in, text out. Implementations raise ClientError on transport
    failure; they never return None."""

    def complete(self, prompt: str) -> str: ...


class HttpLLMClient:
    """POSTs {"prompt": ...} to a serving endpoint, expects {"text": ...}."""

    def __init__(self, endpoint: str, timeout: float = 60.0):
        if not endpoint:
            raise ValueError("endpoint must be non-empty")
        self.endpoint = endpoint
        self.timeout = timeout

    def complete(self, prompt: str) -> str:
        import requests

        try:
            resp = requests.post(
                self.endpoint, json={"prompt": prompt}, timeout=self.timeout
            )
            resp.raise_for_status()
            payload = resp.json()
        except (requests.RequestException, json.JSONDecodeError) as exc:
            raise ClientError(f"request to {self.endpoint} failed: {exc}") from exc
        if "text" not in payload:
            raise ClientError(f"response missing 'text' field: {payload!r}")
        return str(payload["text"])


_SENTENCE_MARK = "Sentence:"


class MockLLMClient:
    """Deterministic client with canned responses keyed by caption text.

    The caption is recovered from the final ``Sentence:`` marker of the
    rendered prompt, so tests can register responses without knowing the
    prompt wording.
    """

    def __init__(self, responses: dict[str, str]):
        self.responses = {k.strip(): v for k, v in responses.items()}
        self.calls: list[str] = []

    def complete(self, prompt: str) -> str:
        at = prompt.rfind(_SENTENCE_MARK)
        if at < 0:
            raise ClientError("prompt has no trailing Sentence line")
        caption = prompt[at + len(_SENTENCE_MARK) :].strip().strip("'")
        self.calls.append(caption)
        if caption not in self.responses:
            raise ClientError(f"no canned response for caption: {caption!r}")
        return self.responses[caption]


def extract_triplets(caption: str, llm: LLMClient) -> list[RelationTriplet]:
    """Extract deduplicated triplets from one caption.

    Malformed response lines are dropped (blank lines silently, others
    logged); the result may be empty. ClientError propagates so corpus-level
    callers can skip and count the sample.
    """
    response = llm.complete(render_prompt(caption))
    triplets: list[RelationTriplet] = []
    for line in response.splitlines():
        if not line.strip():
            continue
        try:
            triplets.append(parse_triplet_line(line, sanitize_commas=True))
        except MalformedLine:
            log.debug("dropping malformed line: %r", line)
    return dedup_triplets(triplets)


@dataclass
class ExtractionStats:
    """Counters for a corpus-level extraction run."""

    captions: int = 0
    succeeded: int = 0
    client_errors: int = 0
    empty_results: int = 0
    triplets: int = 0

    def as_dict(self) -> dict[str, int]:
        return {
            "captions": self.captions,
            "succeeded": self.succeeded,
            "client_errors": self.client_errors,
            "empty_results": self.empty_results,
            "triplets": self.triplets,
        }


def extract_corpus(
    captions: dict[str, str],
    llm: LLMClient,
    max_in_flight: int = 1,
) -> tuple[dict[str, list[RelationTriplet]], ExtractionStats]:
    """Extract triplets for a {video_id: caption} corpus.

    Client failures skip the caption and increment a counter; they never
    abort the run. ``max_in_flight`` bounds concurrent requests; results are
    keyed by video id so ordering does not depend on completion order.
    """
    if max_in_flight < 1:
        raise ValueError("max_in_flight must be >= 1")
    stats = ExtractionStats(captions=len(captions))
    results: dict[str, list[RelationTriplet]] = {}

    def run_one(item: tuple[str, str]) -> tuple[str, list[RelationTriplet] | None]:
        video_id, caption = item
        try:
            return video_id, extract_triplets(caption, llm)
        except ClientError as exc:
            log.warning("extraction failed for %s: %s", video_id, exc)
            return video_id, None

    items = list(captions.items())
    if max_in_flight == 1:
        outcomes = map(run_one, items)
    else:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            outcomes = list(pool.map(run_one, items))

    for video_id, triplets in outcomes:
        if triplets is None:
            stats.client_errors += 1
            continue
        stats.succeeded += 1
        if not triplets:
            stats.empty_results += 1
        stats.triplets += len(triplets)
        results[video_id] = triplets
    return results, stats
