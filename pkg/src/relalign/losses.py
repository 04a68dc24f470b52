"""Many-to-many contrastive alignment between query and relation sets.

Both directional terms score each matched (relation, query) pair against
asymmetric negative sets drawn from the whole batch: the query-to-relation
term contrasts a matched query against every relation of every video, the
relation-to-query term contrasts a relation against every query of every
video, so unmatched queries act as negatives there while contributing no
positive pair of their own. As printed, the terms are sums of matched-pair
log-probabilities to be maximized; this module returns their negation for
minimization.

Reduction is ``mean`` by default: sum over matched pairs divided by the
matched-pair count, which keeps gradient scale independent of batch size.
``sum`` recovers the plain summed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ShapeError
from .matching import normalize_rows
from .relations import Assignment


@dataclass
class BatchAlignment:
    """Per-sample query and relation embeddings with solved assignments.

    Every relation of every sample must be matched (the assignment covers
    relation indices 0..J_k-1); queries beyond the matched ones are carried
    along as negatives. ``log_temperature`` is shared across the batch and
    stays in the autodiff graph.
    """

    queries: list[torch.Tensor]
    relations: list[torch.Tensor]
    assignments: list[Assignment]
    log_temperature: torch.Tensor

    def __post_init__(self) -> None:
        n = len(self.queries)
        if n < 1 or len(self.relations) != n or len(self.assignments) != n:
            raise ShapeError("queries, relations, assignments must align")
        dims = {int(q.shape[1]) for q in self.queries}
        dims |= {int(r.shape[1]) for r in self.relations}
        if len(dims) != 1:
            raise ShapeError(f"inconsistent embedding widths: {sorted(dims)}")
        for k, (q, r, a) in enumerate(
            zip(self.queries, self.relations, self.assignments)
        ):
            if q.ndim != 2 or r.ndim != 2:
                raise ShapeError(f"sample {k}: embeddings must be 2-D")
            if r.shape[0] < 1:
                raise ShapeError(f"sample {k}: needs at least one relation")
            if a.num_queries != q.shape[0]:
                raise ShapeError(
                    f"sample {k}: assignment covers {a.num_queries} queries, "
                    f"embeddings have {q.shape[0]}"
                )
            matched_rel = sorted(rel for rel, _ in a.pairs)
            if matched_rel != list(range(r.shape[0])):
                raise ShapeError(
                    f"sample {k}: assignment must match every relation exactly once"
                )
        if self.log_temperature.numel() != 1:
            raise ShapeError("log_temperature must be a scalar tensor")

    @property
    def num_pairs(self) -> int:
        return sum(r.shape[0] for r in self.relations)


def nce_loss_from_logits(
    logits: torch.Tensor, positive_cols: torch.Tensor, reduction: str = "mean"
) -> torch.Tensor:
    """Cross-entropy core shared by both directional terms.

    ``logits[p, c]`` holds temperature-scaled similarities for pair ``p``
    against candidate set ``c``; ``positive_cols[p]`` marks the matched
    candidate. Stabilized via log-softmax. Exposed so the loss's ordering
    behavior can be probed directly at the logits level, where a single
    entry can be moved while everything else is genuinely held fixed.
    """
    if logits.ndim != 2 or positive_cols.ndim != 1:
        raise ShapeError("expected [pairs x candidates] logits and 1-D positives")
    if logits.shape[0] != positive_cols.shape[0]:
        raise ShapeError("one positive column per logits row required")
    log_probs = torch.log_softmax(logits, dim=1)
    picked = log_probs[torch.arange(logits.shape[0]), positive_cols]
    total = -picked.sum()
    if reduction == "mean":
        return total / logits.shape[0]
    if reduction == "sum":
        return total
    raise ValueError(f"unknown reduction: {reduction!r}")


def _matched_query_rows(batch: BatchAlignment) -> torch.Tensor:
    """Matched queries stacked in global relation order, [P x D]."""
    rows = []
    for q, a in zip(batch.queries, batch.assignments):
        order = sorted(a.pairs)  # relation-index order
        rows.append(q[[query for _, query in order]])
    return torch.cat(rows, dim=0)


def _positive_query_cols(batch: BatchAlignment) -> torch.Tensor:
    """Global column index of each pair's matched query, in pair order."""
    cols = []
    offset = 0
    for q, a in zip(batch.queries, batch.assignments):
        for _, query in sorted(a.pairs):
            cols.append(offset + query)
        offset += q.shape[0]
    return torch.tensor(cols, dtype=torch.long)


def loss_q_to_r(batch: BatchAlignment, reduction: str = "mean") -> torch.Tensor:
    """Each matched query against every relation in the batch."""
    tau = batch.log_temperature.exp()
    all_rel = normalize_rows(torch.cat(batch.relations, dim=0), "relations")
    matched_q = normalize_rows(_matched_query_rows(batch), "matched queries")
    logits = (matched_q @ all_rel.T) / tau
    positives = torch.arange(logits.shape[0])  # pair p is relation p
    return nce_loss_from_logits(logits, positives, reduction)


def loss_r_to_q(batch: BatchAlignment, reduction: str = "mean") -> torch.Tensor:
    """Each relation against every query in the batch, unmatched included."""
    tau = batch.log_temperature.exp()
    all_rel = normalize_rows(torch.cat(batch.relations, dim=0), "relations")
    all_q = normalize_rows(torch.cat(batch.queries, dim=0), "queries")
    logits = (all_rel @ all_q.T) / tau
    return nce_loss_from_logits(logits, _positive_query_cols(batch), reduction)


def mm_nce_loss(batch: BatchAlignment, reduction: str = "mean") -> torch.Tensor:
    """Sum of the two directional terms; differentiable in embeddings and
    log-temperature."""
    return loss_q_to_r(batch, reduction) + loss_r_to_q(batch, reduction)


def matched_mse_loss(batch: BatchAlignment) -> torch.Tensor:
    """Mean squared error over matched pairs only, on raw embeddings.

    The frozen-encoder baseline objective: pull each matched query toward
    its relation target, no contrast against negatives.
    """
    matched_q = _matched_query_rows(batch)
    all_rel = torch.cat(batch.relations, dim=0)
    return torch.mean((matched_q - all_rel) ** 2)
