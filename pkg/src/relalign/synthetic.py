"""Synthetic corpus with known concept ground truth.

Each latent concept is a relation triplet with its own made-up words, and
its concept vector is DEFINED as the toy text embedding of the triplet's
flat text, so the relation side maps texts back onto concept vectors with
no error by construction. Video tokens are noisy mixtures of the sample's
concepts pushed through a fixed orthonormal map into token space; the map,
the per-sample concept ids, and each token's primary concept are returned
so recovery can be checked independently of any trained model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import toy_text_embedding
from .errors import ConfigError
from .relations import RelationSet, RelationTriplet, VideoSample, format_triplet

# Concept vectors closer than this are re-drawn so retrieval stays well
# posed; hash-bucket collisions can otherwise make two concepts near-equal.
_MAX_CONCEPT_COSINE = 0.98


@dataclass(frozen=True)
class SyntheticConfig:
    num_concepts: int = 16
    num_samples: int = 512
    relations_min: int = 2
    relations_max: int = 6
    tokens_fast: int = 16
    tokens_slow: int = 16
    d_vis: int = 64
    d_rel: int = 64
    noise: float = 0.05
    mixing: float = 0.2

    def __post_init__(self) -> None:
        for name in (
            "num_concepts",
            "num_samples",
            "relations_min",
            "relations_max",
            "tokens_fast",
            "tokens_slow",
            "d_vis",
            "d_rel",
        ):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.relations_max < self.relations_min:
            raise ConfigError("relations_max must be >= relations_min")
        if self.relations_max > self.num_concepts:
            raise ConfigError("relations_max cannot exceed num_concepts")
        if self.d_vis < self.d_rel:
            raise ConfigError(
                "d_vis must be >= d_rel so the concept embedding map stays "
                "injective"
            )
        if self.noise < 0:
            raise ConfigError("noise must be non-negative")
        if not 0 <= self.mixing < 1:
            raise ConfigError("mixing must lie in [0, 1)")


@dataclass(frozen=True)
class SyntheticTruth:
    """Everything needed to audit a synthetic corpus without a model."""

    config: SyntheticConfig
    concepts: tuple[RelationTriplet, ...]
    concept_vectors: np.ndarray  # [C x d_rel], rows unit norm
    embedding_map: np.ndarray  # [d_vis x d_rel], orthonormal columns
    sample_concepts: tuple[tuple[int, ...], ...]  # concept ids per sample
    fast_primaries: tuple[tuple[int, ...], ...]  # concept id per fast token
    slow_primaries: tuple[tuple[int, ...], ...]  # concept id per slow token


def _concept_triplet(index: int, attempt: int) -> RelationTriplet:
    suffix = f"{index:02d}" + (f"x{attempt}" if attempt else "")
    return RelationTriplet(
        subject=f"entity{suffix}",
        predicate=f"affects{suffix}",
        object=f"target{suffix}",
    )


def _draw_concepts(
    count: int, dim: int
) -> tuple[tuple[RelationTriplet, ...], np.ndarray]:
    triplets: list[RelationTriplet] = []
    vectors: list[np.ndarray] = []
    for c in range(count):
        attempt = 0
        while True:
            candidate = _concept_triplet(c, attempt)
            vec = toy_text_embedding(format_triplet(candidate), dim).astype(
                np.float64
            )
            if not vectors or float(np.max(np.stack(vectors) @ vec)) < _MAX_CONCEPT_COSINE:
                triplets.append(candidate)
                vectors.append(vec)
                break
            attempt += 1
            if attempt > 1000:
                raise ConfigError(
                    "could not draw distinct concept vectors; raise d_rel"
                )
    return tuple(triplets), np.stack(vectors)


def _mix_tokens(
    num_tokens: int,
    concept_ids: np.ndarray,
    projected: np.ndarray,
    config: SyntheticConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, tuple[int, ...]]:
    """Round-robin primary concept per token plus a shared mixture term."""
    center = projected.mean(axis=0)
    tokens = np.empty((num_tokens, config.d_vis), dtype=np.float64)
    primaries: list[int] = []
    for i in range(num_tokens):
        slot = i % len(concept_ids)
        token = (1.0 - config.mixing) * projected[slot] + config.mixing * center
        if config.noise > 0:
            direction = rng.standard_normal(config.d_vis)
            token = token + config.noise * direction / np.linalg.norm(direction)
        tokens[i] = token
        primaries.append(int(concept_ids[slot]))
    return tokens.astype(np.float32), tuple(primaries)


def generate_synthetic(
    config: SyntheticConfig, rng: np.random.Generator
) -> tuple[list[VideoSample], SyntheticTruth]:
    """Generate a corpus of VideoSamples plus its ground truth."""
    concepts, concept_vectors = _draw_concepts(config.num_concepts, config.d_rel)
    gaussian = rng.standard_normal((config.d_vis, config.d_rel))
    embedding_map, _ = np.linalg.qr(gaussian)

    samples: list[VideoSample] = []
    sample_concepts: list[tuple[int, ...]] = []
    fast_primaries: list[tuple[int, ...]] = []
    slow_primaries: list[tuple[int, ...]] = []
    for idx in range(config.num_samples):
        j = int(rng.integers(config.relations_min, config.relations_max + 1))
        concept_ids = rng.choice(config.num_concepts, size=j, replace=False)
        projected = concept_vectors[concept_ids] @ embedding_map.T
        fast, fast_p = _mix_tokens(config.tokens_fast, concept_ids, projected, config, rng)
        slow, slow_p = _mix_tokens(config.tokens_slow, concept_ids, projected, config, rng)
        relations = RelationSet(
            tuple(concepts[c] for c in concept_ids), video_id=f"syn{idx:05d}"
        )
        samples.append(
            VideoSample(
                video_id=f"syn{idx:05d}",
                fast_tokens=fast,
                slow_tokens=slow,
                relations=relations,
            )
        )
        sample_concepts.append(tuple(int(c) for c in concept_ids))
        fast_primaries.append(fast_p)
        slow_primaries.append(slow_p)

    truth = SyntheticTruth(
        config=config,
        concepts=concepts,
        concept_vectors=concept_vectors,
        embedding_map=embedding_map,
        sample_concepts=tuple(sample_concepts),
        fast_primaries=tuple(fast_primaries),
        slow_primaries=tuple(slow_primaries),
    )
    return samples, truth
