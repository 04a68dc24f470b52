"""Cosine similarity matrices and optimal injective relation-query matching.

The assignment step maximizes total cosine similarity over injective maps
from relations to queries (relations never share a query; queries may stay
unmatched). It is solved as a classical min-cost assignment on the negated
similarities, padded square, with pad pairs discarded. The discrete choice
is made on detached values: gradients never flow through the matching, which
is re-solved from current embeddings at every step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from .errors import DegenerateVector, ShapeError, TooManyRelations
from .relations import Assignment

NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class SimilarityMatrix:
    """Pairwise cosine similarities, relations along rows, queries along
    columns. Holds either a torch tensor (possibly requiring grad) or a
    plain numpy array."""

    values: torch.Tensor | np.ndarray

    def __post_init__(self) -> None:
        v = self.values
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ShapeError(f"similarity matrix must be 2-D, got {tuple(v.shape)}")
        if isinstance(v, torch.Tensor):
            with torch.no_grad():
                finite = bool(torch.isfinite(v).all())
                in_range = not bool((v.abs() > 1.0 + 1e-6).any())
        else:
            arr = np.asarray(v)
            finite = bool(np.isfinite(arr).all())
            in_range = not bool((np.abs(arr) > 1.0 + 1e-6).any())
        if not finite:
            raise ValueError("similarity matrix contains non-finite values")
        if not in_range:
            raise ValueError("cosine similarities must lie in [-1, 1]")

    @property
    def num_relations(self) -> int:
        return self.values.shape[0]

    @property
    def num_queries(self) -> int:
        return self.values.shape[1]


def normalize_rows(matrix: torch.Tensor, name: str) -> torch.Tensor:
    norms = matrix.norm(dim=-1, keepdim=True)
    with torch.no_grad():
        low = norms.min().item() if norms.numel() else 0.0
    if low < NORM_FLOOR:
        raise DegenerateVector(
            f"{name} contains a row with norm {low:.3e} < {NORM_FLOOR}; "
            "embedding collapse upstream"
        )
    return matrix / norms


def cosine_matrix(relations: torch.Tensor, queries: torch.Tensor) -> SimilarityMatrix:
    """All-pairs cosine similarity between relation and query embeddings.

    Differentiable with respect to both inputs. Raises DegenerateVector on
    any near-zero row so training aborts loudly instead of producing NaNs.
    """
    if relations.ndim != 2 or queries.ndim != 2:
        raise ShapeError("cosine_matrix expects 2-D embedding matrices")
    if relations.shape[1] != queries.shape[1]:
        raise ShapeError(
            f"dimension mismatch: relations {relations.shape[1]} vs "
            f"queries {queries.shape[1]}"
        )
    r = normalize_rows(relations, "relations")
    v = normalize_rows(queries, "queries")
    return SimilarityMatrix(r @ v.T)


def _to_f64(matrix: SimilarityMatrix | torch.Tensor | np.ndarray) -> np.ndarray:
    if isinstance(matrix, SimilarityMatrix):
        matrix = matrix.values
    if isinstance(matrix, torch.Tensor):
        matrix = matrix.detach().cpu().numpy()
    return np.asarray(matrix, dtype=np.float64)


def _solve_total(sim: np.ndarray) -> float:
    """Optimal total similarity of a (possibly rectangular) subproblem."""
    if sim.shape[0] == 0:
        return 0.0
    rows, cols = linear_sum_assignment(-sim)
    return float(sim[rows, cols].sum())


def optimal_assignment(
    similarity: SimilarityMatrix | torch.Tensor | np.ndarray,
) -> Assignment:
    """Injective relation-to-query assignment maximizing total similarity.

    Requires at least as many queries as relations; raises TooManyRelations
    otherwise, signalling the caller to subsample. When several assignments
    reach the optimum, the one whose query-index sequence (in relation
    order) is lexicographically smallest is returned, so ties resolve toward
    low query indices deterministically.
    """
    sim = _to_f64(similarity)
    if sim.ndim != 2:
        raise ShapeError("expected a 2-D similarity matrix")
    num_rel, num_q = sim.shape
    if num_rel > num_q:
        raise TooManyRelations(
            f"{num_rel} relations but only {num_q} queries; subsample first"
        )

    # Square off with a pad cost above every real cost; pad rows absorb the
    # leftover queries without disturbing the real rows' optimum.
    cost = -sim
    if num_rel < num_q:
        pad_value = cost.max() + 1.0
        pad = np.full((num_q - num_rel, num_q), pad_value)
        cost = np.vstack([cost, pad])
    rows, cols = linear_sum_assignment(cost)
    best_total = float(sim[np.arange(num_rel), cols[:num_rel]].sum())

    # Canonicalize ties: fix each relation in turn to the smallest query
    # index that still admits the optimal total on the remaining subproblem.
    # The tolerance absorbs summation-order noise between equal totals while
    # staying far below any genuine optimality gap worth distinguishing.
    tol = 1e-10 * max(1.0, abs(best_total))
    prefix = 0.0
    chosen: list[int] = []
    free = list(range(num_q))
    for j in range(num_rel):
        remaining_rows = sim[j + 1 :, :]
        fallback: tuple[float, int] | None = None
        pick = None
        for q in free:
            rest = _solve_total(np.delete(remaining_rows, [*chosen, q], axis=1))
            achievable = prefix + sim[j, q] + rest
            if achievable >= best_total - tol:
                pick = q
                break
            if fallback is None or achievable > fallback[0]:
                fallback = (achievable, q)
        if pick is None:
            # Defensive: only reachable if float noise exceeds tol.
            assert fallback is not None
            pick = fallback[1]
        prefix += sim[j, pick]
        chosen.append(pick)
        free.remove(pick)

    pairs = tuple((j, chosen[j]) for j in range(num_rel))
    return Assignment(pairs=pairs, unmatched_queries=frozenset(free))
