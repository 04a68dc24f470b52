"""Alignment quality probes: in-batch retrieval and per-segment traces.

Retrieval treats every matched (relation, query) pair as one trial: the
query ranks all candidate relations in its batch by cosine similarity, and
recall@k is the fraction of trials whose true relation lands in the top k.
Candidates are deduplicated by normalized triplet text first, since videos
sharing a relation would otherwise plant unbeatable duplicates of the true
item; ties still resolve pessimistically (the true item counts as ranked
last among equals).
"""

from __future__ import annotations

import csv
import io
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .encoders import DualPathwayModel, encode_pathway
from .errors import ShapeError
from .matching import cosine_matrix, normalize_rows
from .relations import RelationSet, VideoSample, sample_relations
from .training import build_alignments, encode_batch


@dataclass(frozen=True)
class RetrievalReport:
    recall_at_1: float
    recall_at_5: float
    mean_matched_similarity: float
    mean_best_negative: float
    num_pairs: int
    mean_candidates: float

    def __post_init__(self) -> None:
        if not 0 <= self.recall_at_1 <= 1 or not 0 <= self.recall_at_5 <= 1:
            raise ValueError("recall values must lie in [0, 1]")
        if self.recall_at_5 < self.recall_at_1:
            raise ValueError("recall@5 cannot be below recall@1")

    def as_dict(self) -> dict:
        return {
            "recall_at_1": self.recall_at_1,
            "recall_at_5": self.recall_at_5,
            "mean_matched_similarity": self.mean_matched_similarity,
            "mean_best_negative": self.mean_best_negative,
            "num_pairs": self.num_pairs,
            "mean_candidates": self.mean_candidates,
        }


def _eval_rng(sample: VideoSample) -> np.random.Generator:
    # Stable per-video stream so evaluation subsampling never depends on
    # Python hash randomization or call order.
    return np.random.default_rng(zlib.crc32(sample.video_id.encode("utf-8")))


def _capped_for_eval(
    samples: Sequence[VideoSample], cap: int, rng: np.random.Generator | None
) -> list[RelationSet]:
    out = []
    for s in samples:
        source = rng if rng is not None else _eval_rng(s)
        out.append(sample_relations(s.relations, cap, source))
    return out


def retrieval_eval(
    model: DualPathwayModel,
    samples: Sequence[VideoSample],
    batch_size: int = 16,
    rng: np.random.Generator | None = None,
    relation_cap: int = 8,
    pathway_mode: str = "per-pathway",
) -> RetrievalReport:
    """Score matched-pair retrieval over consecutive batches of samples.

    Trailing batches with fewer than two samples are dropped (no
    cross-video negatives). Deterministic for fixed inputs; the rng only
    feeds relation subsampling and defaults to a per-video stream.
    """
    if len(samples) < 2:
        raise ValueError("retrieval needs at least two samples")
    model.eval()
    hits1 = hits5 = pairs = 0
    matched_sims: list[float] = []
    best_negatives: list[float] = []
    candidate_counts: list[int] = []

    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            batch = list(samples[start : start + batch_size])
            if len(batch) < 2:
                break
            relation_sets = _capped_for_eval(batch, relation_cap, rng)
            fast, slow, rel = encode_batch(model, batch, relation_sets)
            alignments = build_alignments(model, fast, slow, rel, pathway_mode)

            # Candidate pool: one column per unique normalized triplet text.
            pool_index: dict[tuple, int] = {}
            pool_rows: list[torch.Tensor] = []
            true_col: list[list[int]] = []
            for rs, emb in zip(relation_sets, rel):
                cols = []
                for t, row in zip(rs, emb):
                    key = t.normalized()
                    if key not in pool_index:
                        pool_index[key] = len(pool_rows)
                        pool_rows.append(row)
                    cols.append(pool_index[key])
                true_col.append(cols)
            pool = normalize_rows(torch.stack(pool_rows), "candidates")
            candidate_counts.append(len(pool_rows))

            for alignment in alignments:
                for k, (queries, assignment) in enumerate(
                    zip(alignment.queries, alignment.assignments)
                ):
                    q_norm = normalize_rows(queries, "queries")
                    sims = q_norm @ pool.T  # [M x candidates]
                    for rel_idx, query_idx in sorted(assignment.pairs):
                        row = sims[query_idx]
                        true = true_col[k][rel_idx]
                        s_true = row[true]
                        # Pessimistic rank: strictly-better plus every tie,
                        # the true item itself included.
                        rank = int((row > s_true).sum() + (row == s_true).sum())
                        pairs += 1
                        hits1 += rank <= 1
                        hits5 += rank <= 5
                        matched_sims.append(float(s_true))
                        others = torch.cat([row[:true], row[true + 1 :]])
                        if others.numel():
                            best_negatives.append(float(others.max()))

    if pairs == 0:
        raise ValueError("no matched pairs were produced")
    return RetrievalReport(
        recall_at_1=hits1 / pairs,
        recall_at_5=hits5 / pairs,
        mean_matched_similarity=float(np.mean(matched_sims)),
        mean_best_negative=float(np.mean(best_negatives)) if best_negatives else 0.0,
        num_pairs=pairs,
        mean_candidates=float(np.mean(candidate_counts)),
    )


@dataclass(frozen=True)
class AlignmentTrace:
    """Max query similarity per relation text per video segment."""

    texts: tuple[str, ...]
    values: np.ndarray  # [texts x segments]

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[0] != len(self.texts):
            raise ShapeError("trace must be [texts x segments]")
        if self.values.size and (np.abs(self.values) > 1.0 + 1e-6).any():
            raise ValueError("trace entries must be cosine similarities")

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out)
        writer.writerow(
            ["relation"] + [f"segment_{i}" for i in range(self.values.shape[1])]
        )
        for text, row in zip(self.texts, self.values):
            writer.writerow([text] + [f"{v:.6f}" for v in row])
        return out.getvalue()


def segment_sample(sample: VideoSample, num_segments: int = 8) -> list[VideoSample]:
    """Split one sample's token matrices into equal temporal segments."""
    if num_segments < 1:
        raise ValueError("num_segments must be >= 1")
    limit = min(num_segments, sample.fast_tokens.shape[0], sample.slow_tokens.shape[0])
    fast_parts = np.array_split(sample.fast_tokens, limit)
    slow_parts = np.array_split(sample.slow_tokens, limit)
    return [
        VideoSample(
            video_id=f"{sample.video_id}/seg{i}",
            fast_tokens=f,
            slow_tokens=s,
            relations=sample.relations,
        )
        for i, (f, s) in enumerate(zip(fast_parts, slow_parts))
    ]


def alignment_trace(
    model: DualPathwayModel,
    segments: Sequence[VideoSample],
    relation_texts: Sequence[str],
    csv_path: str | Path | None = None,
    plot_path: str | Path | None = None,
) -> AlignmentTrace:
    """Trace each relation text across segments.

    For every segment, both pathways' queries are pooled and the maximum
    cosine similarity against the encoded text is recorded, so the trace is
    invariant to query order. Optionally writes the CSV and a line plot.
    """
    if not segments:
        raise ValueError("need at least one segment")
    if not relation_texts:
        raise ValueError("need at least one relation text")
    model.eval()
    dtype = model.log_temperature.dtype
    with torch.no_grad():
        encoded = model.relation_encoder(list(relation_texts))
        values = np.empty((len(relation_texts), len(segments)), dtype=np.float64)
        for col, seg in enumerate(segments):
            fast = encode_pathway(model.fast, torch.from_numpy(seg.fast_tokens).to(dtype))
            slow = encode_pathway(model.slow, torch.from_numpy(seg.slow_tokens).to(dtype))
            queries = torch.cat([fast, slow], dim=0)
            sims = cosine_matrix(encoded, queries).values
            values[:, col] = sims.max(dim=1).values.numpy()

    trace = AlignmentTrace(texts=tuple(relation_texts), values=values)
    if csv_path is not None:
        Path(csv_path).write_text(trace.to_csv())
    if plot_path is not None:
        _plot_trace(trace, plot_path)
    return trace


def _plot_trace(trace: AlignmentTrace, path: str | Path) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return
    fig, ax = plt.subplots(figsize=(8, 4))
    for text, row in zip(trace.texts, trace.values):
        ax.plot(range(len(row)), row, marker="o", label=text)
    ax.set_xlabel("segment")
    ax.set_ylabel("max query similarity")
    ax.legend(fontsize="small", loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
