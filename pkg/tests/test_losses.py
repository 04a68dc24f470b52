from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from conftest import assignment_dicts, batch_as_lists, random_batch
from oracles import (
    central_difference,
    naive_loss_q_to_r,
    naive_loss_r_to_q,
    naive_matched_mse,
    naive_mm_nce,
    relative_error,
)
from relalign.losses import (
    BatchAlignment,
    loss_q_to_r,
    loss_r_to_q,
    matched_mse_loss,
    mm_nce_loss,
    nce_loss_from_logits,
)
from relalign.errors import ShapeError
from relalign.relations import Assignment


def _single_pair_batch(cos_matched=1.0, log_tau=0.0):
    """One sample, one relation matched to query 0, one extra orthogonal
    query."""
    queries = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    relation = torch.tensor([[cos_matched, 0.0]], dtype=torch.float64)
    relation = relation / relation.norm()
    return BatchAlignment(
        queries=[queries],
        relations=[relation],
        assignments=[Assignment(pairs=((0, 0),), unmatched_queries=frozenset({1}))],
        log_temperature=torch.tensor(log_tau, dtype=torch.float64),
    )


class TestHandValues:
    def test_lone_pair_has_zero_loss(self):
        # One relation, one query in the whole batch: the only candidate is
        # the positive, so both directional terms vanish.
        queries = torch.tensor([[0.6, 0.8]], dtype=torch.float64)
        relations = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        batch = BatchAlignment(
            queries=[queries],
            relations=[relations],
            assignments=[Assignment(pairs=((0, 0),), unmatched_queries=frozenset())],
            log_temperature=torch.tensor(0.0, dtype=torch.float64),
        )
        assert float(mm_nce_loss(batch)) == pytest.approx(0.0, abs=1e-12)

    def test_relation_to_query_two_candidates(self):
        # tau = 1; matched query has cosine 1, the unmatched one cosine 0:
        # L_r2q = -log(e / (e + 1)) = log(1 + e^-1).
        batch = _single_pair_batch()
        expected = math.log(1.0 + math.exp(-1.0))
        assert expected == pytest.approx(0.31326168751822286, abs=1e-15)
        assert float(loss_r_to_q(batch)) == pytest.approx(expected, abs=1e-12)
        # Only one relation in the batch: the q->r term sees one candidate.
        assert float(loss_q_to_r(batch)) == pytest.approx(0.0, abs=1e-12)
        assert float(mm_nce_loss(batch)) == pytest.approx(expected, abs=1e-12)

    def test_temperature_sharpens_the_same_setup(self):
        # tau = 0.5 doubles the logit gap: L = log(1 + e^-2).
        batch = _single_pair_batch(log_tau=math.log(0.5))
        expected = math.log(1.0 + math.exp(-2.0))
        assert float(loss_r_to_q(batch)) == pytest.approx(expected, abs=1e-12)


class TestAgainstNaiveReference:
    @pytest.mark.parametrize("reduction", ["mean", "sum"])
    @pytest.mark.parametrize("seed", range(8))
    def test_directional_terms_match(self, seed, reduction):
        rng = np.random.default_rng(seed)
        batch_size = int(rng.integers(1, 5))
        num_q = int(rng.integers(1, 5))
        rels = [int(rng.integers(1, num_q + 1)) for _ in range(batch_size)]
        log_tau = float(rng.uniform(-2.0, 0.5))
        batch = random_batch(rng, batch_size, num_q, rels, dim=6, log_tau=log_tau)

        queries, relations = batch_as_lists(batch)
        assigns = assignment_dicts(batch)

        ref_q2r = naive_loss_q_to_r(queries, relations, assigns, log_tau, reduction)
        ref_r2q = naive_loss_r_to_q(queries, relations, assigns, log_tau, reduction)
        got_q2r = float(loss_q_to_r(batch, reduction=reduction))
        got_r2q = float(loss_r_to_q(batch, reduction=reduction))
        assert got_q2r == pytest.approx(ref_q2r, abs=1e-6)
        assert got_r2q == pytest.approx(ref_r2q, abs=1e-6)

    @pytest.mark.parametrize("reduction", ["mean", "sum"])
    @pytest.mark.parametrize("seed", range(8, 14))
    def test_combined_matches(self, seed, reduction):
        rng = np.random.default_rng(seed)
        batch_size = int(rng.integers(1, 5))
        num_q = int(rng.integers(2, 5))
        rels = [int(rng.integers(1, num_q + 1)) for _ in range(batch_size)]
        log_tau = float(rng.uniform(-2.0, 0.0))
        batch = random_batch(rng, batch_size, num_q, rels, dim=5, log_tau=log_tau)

        queries, relations = batch_as_lists(batch)
        assigns = assignment_dicts(batch)
        ref = naive_mm_nce(queries, relations, assigns, log_tau, reduction)
        got = float(mm_nce_loss(batch, reduction=reduction))
        assert got == pytest.approx(ref, abs=1e-6)

    @pytest.mark.parametrize("seed", range(14, 18))
    def test_matched_mse_matches(self, seed):
        rng = np.random.default_rng(seed)
        batch = random_batch(rng, 3, 4, [2, 1, 3], dim=5, log_tau=0.0)
        queries, relations = batch_as_lists(batch)
        assigns = assignment_dicts(batch)
        ref = naive_matched_mse(queries, relations, assigns)
        got = float(matched_mse_loss(batch))
        assert got == pytest.approx(ref, abs=1e-9)


class TestMatchedMseHandValues:
    def test_identical_embeddings_zero(self):
        q = torch.tensor([[0.3, -0.7, 0.1]], dtype=torch.float64)
        batch = BatchAlignment(
            queries=[q],
            relations=[q.clone()],
            assignments=[Assignment(pairs=((0, 0),), unmatched_queries=frozenset())],
            log_temperature=torch.tensor(0.0, dtype=torch.float64),
        )
        assert float(matched_mse_loss(batch)) == pytest.approx(0.0, abs=1e-15)

    def test_orthogonal_unit_vectors(self):
        # q = e0, r = e1 in dimension D: mean squared difference is 2/D.
        dim = 8
        q = torch.zeros((1, dim), dtype=torch.float64)
        r = torch.zeros((1, dim), dtype=torch.float64)
        q[0, 0] = 1.0
        r[0, 1] = 1.0
        batch = BatchAlignment(
            queries=[q],
            relations=[r],
            assignments=[Assignment(pairs=((0, 0),), unmatched_queries=frozenset())],
            log_temperature=torch.tensor(0.0, dtype=torch.float64),
        )
        assert float(matched_mse_loss(batch)) == pytest.approx(2.0 / dim, abs=1e-15)


class TestGradients:
    def _loss_given_embeddings(self, batch, reduction="mean"):
        """Loss as a pure function of (flattened queries, relations,
        log_tau) with the assignments pinned."""
        sizes_q = [tuple(q.shape) for q in batch.queries]
        sizes_r = [tuple(r.shape) for r in batch.relations]

        def rebuild(flat_q, flat_r, log_tau):
            queries, relations = [], []
            at = 0
            for shape in sizes_q:
                n = shape[0] * shape[1]
                queries.append(flat_q[at : at + n].reshape(shape))
                at += n
            at = 0
            for shape in sizes_r:
                n = shape[0] * shape[1]
                relations.append(flat_r[at : at + n].reshape(shape))
                at += n
            return BatchAlignment(
                queries=queries,
                relations=relations,
                assignments=list(batch.assignments),
                log_temperature=log_tau,
            )

        return rebuild

    @pytest.mark.parametrize("seed", [0, 1])
    def test_embedding_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        batch = random_batch(rng, 2, 3, [2, 1], dim=4, log_tau=math.log(0.3))
        rebuild = self._loss_given_embeddings(batch)

        flat_q = torch.cat([q.reshape(-1) for q in batch.queries]).clone()
        flat_r = torch.cat([r.reshape(-1) for r in batch.relations]).clone()
        log_tau = batch.log_temperature.clone()

        flat_q.requires_grad_(True)
        flat_r.requires_grad_(True)
        log_tau.requires_grad_(True)
        loss = mm_nce_loss(rebuild(flat_q, flat_r, log_tau))
        loss.backward()

        def f_q(arr):
            t = torch.tensor(arr, dtype=torch.float64)
            return float(mm_nce_loss(rebuild(t, flat_r.detach(), log_tau.detach())))

        def f_r(arr):
            t = torch.tensor(arr, dtype=torch.float64)
            return float(mm_nce_loss(rebuild(flat_q.detach(), t, log_tau.detach())))

        num_q = central_difference(f_q, flat_q.detach().numpy().copy())
        num_r = central_difference(f_r, flat_r.detach().numpy().copy())
        assert relative_error(num_q, flat_q.grad.numpy()) < 1e-5
        assert relative_error(num_r, flat_r.grad.numpy()) < 1e-5

    def test_temperature_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        batch = random_batch(rng, 2, 3, [2, 2], dim=4, log_tau=math.log(0.2))
        rebuild = self._loss_given_embeddings(batch)
        flat_q = torch.cat([q.reshape(-1) for q in batch.queries])
        flat_r = torch.cat([r.reshape(-1) for r in batch.relations])

        log_tau = batch.log_temperature.clone().requires_grad_(True)
        mm_nce_loss(rebuild(flat_q, flat_r, log_tau)).backward()

        def f_t(arr):
            t = torch.tensor(arr[0], dtype=torch.float64)
            return float(mm_nce_loss(rebuild(flat_q, flat_r, t)))

        num = central_difference(f_t, np.array([float(batch.log_temperature)]))
        assert relative_error(num, np.array([float(log_tau.grad)])) < 1e-5
        assert abs(float(log_tau.grad)) > 1e-8


class TestLogitLevelProperties:
    def test_raising_positive_logit_lowers_loss(self):
        logits = torch.tensor([[1.0, 0.5, -0.2]], dtype=torch.float64)
        base = float(nce_loss_from_logits(logits, torch.tensor([0])))
        better = logits.clone()
        better[0, 0] += 0.5
        assert float(nce_loss_from_logits(better, torch.tensor([0]))) < base

    def test_raising_negative_logit_raises_loss(self):
        logits = torch.tensor([[1.0, 0.5, -0.2]], dtype=torch.float64)
        base = float(nce_loss_from_logits(logits, torch.tensor([0])))
        worse = logits.clone()
        worse[0, 2] += 0.5
        assert float(nce_loss_from_logits(worse, torch.tensor([0]))) > base

    def test_sum_is_mean_times_rows(self):
        logits = torch.tensor(
            [[1.0, 0.5], [0.2, -0.3], [0.0, 0.9]], dtype=torch.float64
        )
        pos = torch.tensor([0, 1, 1])
        mean = float(nce_loss_from_logits(logits, pos, reduction="mean"))
        total = float(nce_loss_from_logits(logits, pos, reduction="sum"))
        assert total == pytest.approx(3 * mean, rel=1e-12)


class TestInvariances:
    def test_loss_is_nonnegative(self):
        for seed in range(6):
            rng = np.random.default_rng(100 + seed)
            batch = random_batch(rng, 3, 3, [1, 2, 3], dim=5, log_tau=-1.0)
            assert float(loss_q_to_r(batch)) >= 0.0
            assert float(loss_r_to_q(batch)) >= 0.0

    def test_sample_order_invariance_under_mean(self):
        rng = np.random.default_rng(42)
        batch = random_batch(rng, 4, 3, [2, 1, 3, 2], dim=5, log_tau=-0.5)
        perm = [2, 0, 3, 1]
        shuffled = BatchAlignment(
            queries=[batch.queries[i] for i in perm],
            relations=[batch.relations[i] for i in perm],
            assignments=[batch.assignments[i] for i in perm],
            log_temperature=batch.log_temperature,
        )
        a = float(mm_nce_loss(batch))
        b = float(mm_nce_loss(shuffled))
        assert abs(a - b) < 1e-9


class TestBatchAlignmentValidation:
    def test_unmatched_relation_rejected(self):
        q = torch.eye(3, dtype=torch.float64)
        r = torch.eye(3, dtype=torch.float64)[:2]
        with pytest.raises(ShapeError):
            BatchAlignment(
                queries=[q],
                relations=[r],
                # Relation 1 missing from the pairs.
                assignments=[
                    Assignment(pairs=((0, 0),), unmatched_queries=frozenset({1, 2}))
                ],
                log_temperature=torch.tensor(0.0, dtype=torch.float64),
            )

    def test_query_count_mismatch_rejected(self):
        q = torch.eye(3, dtype=torch.float64)
        r = torch.eye(3, dtype=torch.float64)[:1]
        with pytest.raises(ShapeError):
            BatchAlignment(
                queries=[q],
                relations=[r],
                # Assignment speaks of 2 queries, tensor has 3.
                assignments=[
                    Assignment(pairs=((0, 0),), unmatched_queries=frozenset({1}))
                ],
                log_temperature=torch.tensor(0.0, dtype=torch.float64),
            )

    def test_width_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            BatchAlignment(
                queries=[torch.eye(2, dtype=torch.float64)],
                relations=[torch.ones((1, 3), dtype=torch.float64)],
                assignments=[
                    Assignment(pairs=((0, 0),), unmatched_queries=frozenset({1}))
                ],
                log_temperature=torch.tensor(0.0, dtype=torch.float64),
            )

    def test_num_pairs(self):
        rng = np.random.default_rng(0)
        batch = random_batch(rng, 3, 4, [2, 1, 3], dim=4, log_tau=0.0)
        assert batch.num_pairs == 6
