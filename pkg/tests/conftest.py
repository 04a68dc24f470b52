from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from relalign.encoders import DualPathwayModel, ModelConfig
from relalign.losses import BatchAlignment
from relalign.matching import cosine_matrix, optimal_assignment
from relalign.relations import RelationSet, RelationTriplet, VideoSample

TINY_MODEL = ModelConfig(
    d_vis=16,
    hidden=16,
    heads=4,
    temporal_layers=1,
    qformer_layers=2,
    queries_per_pathway=4,
    d_rel=16,
)


@pytest.fixture
def tiny_model() -> DualPathwayModel:
    torch.manual_seed(0)
    return DualPathwayModel(TINY_MODEL)


def make_triplet(i: int) -> RelationTriplet:
    return RelationTriplet(f"subject{i}", f"predicate{i}", f"object{i}")


def make_sample(
    rng: np.random.Generator,
    video_id: str = "vid0",
    num_fast: int = 5,
    num_slow: int = 4,
    d_vis: int = 16,
    num_relations: int = 2,
) -> VideoSample:
    triplets = tuple(make_triplet(i) for i in range(num_relations))
    return VideoSample(
        video_id=video_id,
        fast_tokens=rng.standard_normal((num_fast, d_vis)).astype(np.float32),
        slow_tokens=rng.standard_normal((num_slow, d_vis)).astype(np.float32),
        relations=RelationSet(triplets, video_id=video_id),
    )


def random_batch(
    rng: np.random.Generator,
    batch: int,
    queries_per_sample: int,
    relations_per_sample: list[int],
    dim: int,
    log_tau: float,
    dtype: torch.dtype = torch.float64,
) -> BatchAlignment:
    """Random embeddings with matching solved on their similarities."""
    assert len(relations_per_sample) == batch
    queries, relations, assignments = [], [], []
    for k in range(batch):
        q = torch.tensor(
            rng.standard_normal((queries_per_sample, dim)), dtype=dtype
        )
        r = torch.tensor(
            rng.standard_normal((relations_per_sample[k], dim)), dtype=dtype
        )
        queries.append(q)
        relations.append(r)
        assignments.append(optimal_assignment(cosine_matrix(r, q)))
    return BatchAlignment(
        queries=queries,
        relations=relations,
        assignments=assignments,
        log_temperature=torch.tensor(log_tau, dtype=dtype),
    )


def assignment_dicts(batch: BatchAlignment) -> list[dict[int, int]]:
    return [dict(a.pairs) for a in batch.assignments]


def batch_as_lists(batch: BatchAlignment):
    queries = [[list(map(float, row)) for row in q] for q in batch.queries]
    relations = [[list(map(float, row)) for row in r] for r in batch.relations]
    return queries, relations
